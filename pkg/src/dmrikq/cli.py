"""Command-line pipeline: simulate -> train-dae -> undersample -> recon -> eval.

All stages read one flat key/value config and record their outputs in
``<out>/manifest.txt``. Exit codes: 0 ok, 2 config error, 3 data/shape error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import dae as dae_mod
from .encoding import DimensionError, EncodingOperator, KQSampling, KSpaceData, ShotMasks
from .encoding import add_noise, make_epi_masks, sample_kq
from .io import Config, ConfigError, KqtFormatError, read_kqt, read_kv, write_kqt, write_kv
from .metrics import evaluate
from .phantom import (CoilMaps, DwiStack, Phantom, PhantomConfig, PhantomConfigError,
                      ShotPhaseMaps, build_brain_phantom, render_dwis, simulate_coil_maps,
                      simulate_shot_phases)
from .recon import ReconConfig, pnp_recon, zero_filled_recon
from .signal_model import DictConfig, DictConfigError, QSpaceScheme, generate_dictionary, make_scheme

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
MANIFEST = "manifest.txt"

# manifest keys that name files, in the order stages produce them
SIMULATE_ARTIFACTS = ("phantom", "scheme", "truth", "coils", "phases")


class DataError(RuntimeError):
    """Missing or inconsistent pipeline artifacts."""


def _sub_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


class Manifest:
    def __init__(self, out: Path):
        self.out = Path(out)
        self.path = self.out / MANIFEST
        self.entries = read_kv(self.path) if self.path.exists() else {}

    def set(self, **kv) -> None:
        for k, v in kv.items():
            self.entries[k.replace("__", ".")] = str(v)

    def file(self, key: str) -> Path:
        if key not in self.entries:
            raise DataError(f"manifest {self.path} has no {key!r}; run the producing stage first")
        path = self.out / self.entries[key]
        if not path.exists():
            raise DataError(f"manifest entry {key} -> {path} does not exist")
        return path

    def kqt(self, key: str) -> np.ndarray:
        return read_kqt(self.file(key))

    def save(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        write_kv(self.path, self.entries)


def validate_manifest(out) -> list[str]:
    """Check that every referenced artifact exists and parses; return the checked keys."""
    m = Manifest(out)
    checked = []
    for key, name in m.entries.items():
        if name.endswith(".kqt"):
            read_kqt(m.file(key))
        elif name.endswith(".dae"):
            dae_mod.load_model(m.file(key))
        elif name.endswith((".csv", ".txt")):
            m.file(key).read_text()
        else:
            continue
        checked.append(key)
    return checked


# -- config helpers -------------------------------------------------------------

def scheme_from_config(cfg: Config) -> QSpaceScheme:
    return make_scheme(cfg.get_int("scheme.n_directions", 60), cfg.get_float("scheme.b_value", 1.0),
                       cfg.get_int("scheme.n_b0", 0))


def phantom_config(cfg: Config) -> PhantomConfig:
    return PhantomConfig(n1=cfg.get_int("phantom.n1", 64), n2=cfg.get_int("phantom.n2", 64),
                         crossing=cfg.get_bool("phantom.crossing", True),
                         csf=cfg.get_bool("phantom.csf", True),
                         jitter=cfg.get_float("phantom.jitter", 0.05))


def dict_config(cfg: Config) -> DictConfig:
    return _checked(cfg, DictConfig(mode=cfg.get_str("dict.mode", "random"),
                      n_atoms=cfg.get_int("dict.n_atoms", 12000),
                      n_directions=cfg.get_int("dict.n_directions", 30),
                      crossings=cfg.get_bool("dict.crossings", True),
                      random_phase=cfg.get_bool("dict.random_phase", True),
                      rho0_range=cfg.get_floats("dict.rho0_range", (0.15, 1.0)),
                      d_range=cfg.get_floats("dict.d_range", (0.1, 3.0))))


def _checked(cfg: Config, obj):
    try:
        return obj.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{cfg.source}: {exc}") from exc


def training_config(cfg: Config, seed: int) -> dae_mod.TrainingConfig:
    hidden = cfg.get_int("train.hidden", 0)
    return _checked(cfg, dae_mod.TrainingConfig(
        noise_levels=cfg.get_floats("train.noise_levels", (0.0, 0.2, 0.4, 0.6)),
        epochs=cfg.get_int("train.epochs", 200),
        batch_size=cfg.get_int("train.batch_size", 64),
        learning_rate=cfg.get_float("train.learning_rate", 0.003),
        momentum=cfg.get_float("train.momentum", 0.9),
        optimizer=cfg.get_str("train.optimizer", "adam"),
        validation_fraction=cfg.get_float("train.validation_fraction", 0.1),
        hidden=hidden or None,
        phase_normalize=cfg.get_bool("train.phase_normalize", True),
        linear_bottleneck=cfg.get_bool("train.linear_bottleneck", True),
        center_init=cfg.get_bool("train.center_init", True),
        seed=seed))


def recon_config(cfg: Config) -> ReconConfig:
    return _checked(cfg, ReconConfig(lam=cfg.get_float("recon.lambda", 0.01),
                       outer_iters=cfg.get_int("recon.outer_iters", 4),
                       cg_iters=cfg.get_int("recon.cg_iters", 15),
                       cg_tolerance=cfg.get_float("recon.cg_tolerance", 1e-6),
                       initializer=cfg.get_str("recon.initializer", "adjoint"),
                       solver=cfg.get_str("recon.solver", "cr")))


def _stage_seed(cfg: Config, key: str, override: int | None) -> int:
    return override if override is not None else cfg.seed(key)


# -- stages -----------------------------------------------------------------------

def cmd_simulate(cfg: Config, out, seed: int | None = None) -> Manifest:
    """Phantom, ground-truth DWIs, coil maps and shot phase maps."""
    seed = _stage_seed(cfg, "simulate.seed", seed)
    s_phantom, s_coils, s_phases = _sub_seeds(seed, 3)
    scheme = scheme_from_config(cfg)
    pcfg = phantom_config(cfg)
    ph = build_brain_phantom(pcfg, s_phantom)
    truth = render_dwis(ph, scheme)
    coils = simulate_coil_maps(cfg.get_int("coils.n", 8), pcfg.n1, pcfg.n2, s_coils,
                               uniform=cfg.get_bool("coils.uniform", False))
    shots = cfg.get_int("acq.shots", 4)
    phases = simulate_shot_phases(len(scheme), shots, pcfg.n1, pcfg.n2,
                                  cfg.get_int("acq.phase_order", 2), s_phases)
    m = Manifest(out)
    m.out.mkdir(parents=True, exist_ok=True)
    write_kqt(m.out / "phantom.kqt", ph.to_array())
    write_kqt(m.out / "scheme.kqt", scheme.to_array())
    write_kqt(m.out / "truth.kqt", truth.data)
    write_kqt(m.out / "coils.kqt", coils.maps)
    write_kqt(m.out / "phases.kqt", phases.phases)
    m.set(simulate__seed=seed, **{k: f"{k}.kqt" for k in SIMULATE_ARTIFACTS})
    m.save()
    return m


def cmd_train_dae(cfg: Config, out, seed: int | None = None) -> Manifest:
    seed = _stage_seed(cfg, "train.seed", seed)
    s_dict, s_train = _sub_seeds(seed, 2)
    m = Manifest(out)
    if "scheme" in m.entries:
        scheme = QSpaceScheme.from_array(m.kqt("scheme"))
    else:
        scheme = scheme_from_config(cfg)
    z = generate_dictionary(dict_config(cfg), scheme, s_dict)
    model, report = dae_mod.train_dae(z, training_config(cfg, s_train))
    m.out.mkdir(parents=True, exist_ok=True)
    dae_mod.save_model(model, m.out / "model.dae")
    report.write_csv(m.out / "train_report.csv")
    m.set(train__seed=seed, model="model.dae", train_report="train_report.csv",
          train__atoms=z.n_atoms)
    m.save()
    return m


def cmd_undersample(cfg: Config, out, seed: int | None = None) -> Manifest:
    seed = _stage_seed(cfg, "undersample.seed", seed)
    s_sampling, s_noise = _sub_seeds(seed, 2)
    m = Manifest(out)
    truth = m.kqt("truth")
    coils = CoilMaps(m.kqt("coils"))
    phases = ShotPhaseMaps(m.kqt("phases"))
    q, s = phases.phases.shape[:2]
    if truth.shape[0] != q:
        raise DataError(f"truth has Q={truth.shape[0]} but phase maps have Q={q}")
    masks = make_epi_masks(s, truth.shape[1])
    sampling = sample_kq(q, s, cfg.get_int("acq.shots_per_q", 1), s_sampling)
    op = EncodingOperator(coils, phases, masks, sampling)
    sigma = cfg.get_float("acq.noise_sigma", 0.0)
    y = add_noise(KSpaceData(op.forward(truth), sampling, masks), sigma, s_noise)
    write_kqt(m.out / "kspace.kqt", y.data)
    write_kqt(m.out / "sampling.kqt", sampling.selected.astype(np.float64))
    write_kqt(m.out / "masks.kqt", masks.masks.astype(np.float64))
    m.set(undersample__seed=seed, acq__noise_sigma=repr(sigma),
          acq__acceleration=repr(float(sampling.acceleration)),
          kspace="kspace.kqt", sampling="sampling.kqt", masks="masks.kqt")
    m.save()
    return m


def load_operator(m: Manifest, support: bool = True) -> EncodingOperator:
    sampling = KQSampling(m.kqt("sampling") > 0.5)
    masks = ShotMasks(m.kqt("masks") > 0.5)
    mask = Phantom.from_array(m.kqt("phantom")).mask if support else None
    return EncodingOperator(CoilMaps(m.kqt("coils")), ShotPhaseMaps(m.kqt("phases")),
                            masks, sampling, support=mask)


def cmd_recon(cfg: Config, out, seed: int | None = None) -> Manifest:
    m = Manifest(out)
    rcfg = recon_config(cfg)
    op = load_operator(m, support=cfg.get_bool("recon.support", True))
    y = m.kqt("kspace")
    model = dae_mod.load_model(m.file("model"))
    truth = DwiStack(m.kqt("truth")) if "truth" in m.entries else None
    mask = Phantom.from_array(m.kqt("phantom")).mask
    rec, trace = pnp_recon(y, model, op, rcfg, truth=truth, mask=mask)
    write_kqt(m.out / "recon.kqt", rec.data)
    write_kqt(m.out / "zero_filled.kqt", zero_filled_recon(y, op).data)
    trace.write_csv(m.out / "recon_trace.csv")
    m.set(recon="recon.kqt", zero_filled="zero_filled.kqt", recon_trace="recon_trace.csv",
          recon__lambda=repr(rcfg.lam), recon__outer_iters=rcfg.outer_iters,
          recon__cg_iters=rcfg.cg_iters, recon__cg_tolerance=repr(rcfg.cg_tolerance),
          recon__initializer=rcfg.initializer, recon__solver=rcfg.solver)
    m.save()
    return m


def cmd_eval(cfg: Config, out, seed: int | None = None, recon_path=None, truth_path=None) -> Manifest:
    m = Manifest(out)
    recon = read_kqt(recon_path) if recon_path else m.kqt("recon")
    truth = read_kqt(truth_path) if truth_path else m.kqt("truth")
    mask = Phantom.from_array(m.kqt("phantom")).mask if "phantom" in m.entries else None
    if mask is not None and mask.shape != truth.shape[1:]:
        mask = None
    report = evaluate(recon, truth, mask)
    m.out.mkdir(parents=True, exist_ok=True)
    report.write_csv(m.out / "eval.csv")
    (m.out / "eval.txt").write_text(report.summary())
    m.set(eval_csv="eval.csv", eval_summary="eval.txt")
    m.save()
    return m


COMMANDS = {
    "simulate": cmd_simulate,
    "train-dae": cmd_train_dae,
    "undersample": cmd_undersample,
    "recon": cmd_recon,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmrikq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the stage seed")
        p.add_argument("--out", default=None, help="run directory (default: config 'out' or ./run)")
        if name == "eval":
            p.add_argument("--recon", default=None, help="reconstruction KQT (default: from manifest)")
            p.add_argument("--truth", default=None, help="ground-truth KQT (default: from manifest)")
    return parser


def _limit_threads() -> None:
    n = os.environ.get("DMRIKQ_THREADS")
    if not n:
        return
    from threadpoolctl import threadpool_limits
    threadpool_limits(int(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _limit_threads()
        cfg = Config.load(args.config)
        out = Path(args.out or cfg.get_str("out", "run"))
        kwargs = {}
        if args.command == "eval":
            kwargs = {"recon_path": args.recon, "truth_path": args.truth}
        COMMANDS[args.command](cfg, out, args.seed, **kwargs)
    except (ConfigError, PhantomConfigError, DictConfigError) as exc:
        print(f"dmrikq: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except dae_mod.DivergenceError as exc:
        print(f"dmrikq: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, DimensionError, KqtFormatError, OSError, ValueError) as exc:
        print(f"dmrikq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
