"""Sweep the PnP regularization weight at one acceleration, reusing a single trained prior.

    python3 scripts/lambda_sweep.py --accel 4 --lams 0.003 0.01 0.03 0.1 0.5
"""

import argparse

from dmrikq.experiment import TrendConfig, acquire, simulate_subject, train_prior
from dmrikq.metrics import psnr
from dmrikq.recon import ReconConfig, pnp_recon


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--accel", type=int, default=4)
    ap.add_argument("--lams", type=float, nargs="+", default=[0.003, 0.01, 0.03, 0.1, 0.5])
    ap.add_argument("--outer-iters", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = TrendConfig(seed=args.seed)
    scheme, ph, truth, coils = simulate_subject(cfg)
    model, _ = train_prior(scheme, cfg)
    ops, y = acquire(ph, truth, coils, args.accel, cfg)
    print(f"R={args.accel}; PSNR (dB) after each outer iteration")
    for lam in args.lams:
        rcfg = ReconConfig(lam=lam, outer_iters=args.outer_iters)
        rec, trace = pnp_recon(y, model, ops, rcfg, truth=truth, mask=ph.mask)
        print(f"lambda={lam:<8g} final {psnr(rec, truth, ph.mask):6.2f}   "
              + " ".join(f"{v:.2f}" for v in trace.psnr))


if __name__ == "__main__":
    main()
