"""Phantom experiment driver: PnP reconstruction quality across acceleration factors.

Each acceleration R uses R interleaved EPI shots with one shot acquired per q-point,
so every q-point sees a different 1/R of k-space.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dae import DaeModel, TrainingConfig, TrainingReport, train_dae
from .encoding import EncodingOperator, KSpaceData, add_noise, make_epi_masks, sample_kq
from .metrics import psnr
from .phantom import (DwiStack, Phantom, PhantomConfig, build_brain_phantom, render_dwis,
                      simulate_coil_maps, simulate_shot_phases)
from .recon import ReconConfig, pnp_recon, zero_filled_recon
from .signal_model import DictConfig, QSpaceScheme, generate_dictionary, make_scheme


@dataclass
class TrendConfig:
    n: int = 64
    q: int = 60
    n_coils: int = 8
    accelerations: tuple[int, ...] = (4, 6, 8)
    noise_sigma: float = 0.005
    phase_order: int = 2
    dictionary: DictConfig = field(default_factory=DictConfig)
    training: TrainingConfig = field(default_factory=lambda: TrainingConfig(seed=1))
    recon: ReconConfig = field(default_factory=ReconConfig)
    seed: int = 0


@dataclass
class TrendRow:
    acceleration: int
    psnr_pnp: float
    psnr_zero_filled: float
    psnr_per_iter: list[float]
    seconds: float


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def train_prior(scheme: QSpaceScheme, cfg: TrendConfig) -> tuple[DaeModel, TrainingReport]:
    z = generate_dictionary(cfg.dictionary, scheme, _seeds(cfg.seed, 1)[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)   # parameter-count advisory
        return train_dae(z, cfg.training)


def simulate_subject(cfg: TrendConfig) -> tuple[QSpaceScheme, Phantom, DwiStack, object]:
    scheme = make_scheme(cfg.q)
    s_ph, s_coil = _seeds(cfg.seed + 1, 2)
    ph = build_brain_phantom(PhantomConfig(n1=cfg.n, n2=cfg.n), s_ph)
    coils = simulate_coil_maps(cfg.n_coils, cfg.n, cfg.n, s_coil)
    return scheme, ph, render_dwis(ph, scheme), coils


def acquire(ph: Phantom, truth: DwiStack, coils, r: int, cfg: TrendConfig):
    """Operator and noisy k-space for acceleration ``r`` (r shots, one per q-point)."""
    s_phase, s_samp, s_noise = _seeds(cfg.seed + 100 + r, 3)
    phases = simulate_shot_phases(cfg.q, r, cfg.n, cfg.n, cfg.phase_order, s_phase)
    sampling = sample_kq(cfg.q, r, 1, s_samp)
    ops = EncodingOperator(coils, phases, make_epi_masks(r, cfg.n), sampling, support=ph.mask)
    y = KSpaceData(ops.forward(truth.data), sampling, ops.masks)
    return ops, add_noise(y, cfg.noise_sigma, s_noise)


def run_trend(cfg: TrendConfig, model: DaeModel | None = None) -> list[TrendRow]:
    scheme, ph, truth, coils = simulate_subject(cfg)
    if model is None:
        model, _ = train_prior(scheme, cfg)
    rows = []
    for r in cfg.accelerations:
        t0 = time.perf_counter()
        ops, y = acquire(ph, truth, coils, r, cfg)
        rec, trace = pnp_recon(y, model, ops, cfg.recon, truth=truth, mask=ph.mask)
        zf = zero_filled_recon(y, ops)
        rows.append(TrendRow(r, psnr(rec, truth, ph.mask), psnr(zf, truth, ph.mask), list(trace.psnr),
                             time.perf_counter() - t0))
    return rows
