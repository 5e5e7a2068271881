"""PnP reconstruction PSNR of the 64x64 phantom at several acceleration factors.

    python3 scripts/acceleration_trend.py --out trend.csv
"""

import argparse
import csv
import time

from dmrikq.experiment import TrendConfig, run_trend
from dmrikq.recon import ReconConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--accelerations", type=int, nargs="+", default=[4, 6, 8])
    ap.add_argument("--lam", type=float, default=ReconConfig.lam)
    ap.add_argument("--outer-iters", type=int, default=ReconConfig.outer_iters)
    ap.add_argument("--noise-sigma", type=float, default=TrendConfig.noise_sigma)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    cfg = TrendConfig(accelerations=tuple(args.accelerations), noise_sigma=args.noise_sigma,
                      recon=ReconConfig(lam=args.lam, outer_iters=args.outer_iters), seed=args.seed)
    t0 = time.perf_counter()
    rows = run_trend(cfg)
    print(f"{'R':>3} {'PnP dB':>8} {'zero-filled dB':>15} {'per-iteration PSNR':>30}")
    for r in rows:
        its = " ".join(f"{v:.2f}" for v in r.psnr_per_iter)
        print(f"{r.acceleration:>3} {r.psnr_pnp:>8.2f} {r.psnr_zero_filled:>15.2f}   {its}")
    print(f"total {time.perf_counter() - t0:.0f} s")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["acceleration", "psnr_pnp", "psnr_zero_filled"])
            for r in rows:
                w.writerow([r.acceleration, f"{r.psnr_pnp:.4f}", f"{r.psnr_zero_filled:.4f}"])


if __name__ == "__main__":
    main()
