"""Multi-shot, multi-coil Cartesian EPI encoding with joint k-q undersampling.

The forward model for q-point ``q`` and sampled shot ``s`` is::

    y[q, c] = M_s * F(C_c * exp(i * phi[q, s]) * x[q])

with ``F`` the centered orthonormal 2-D DFT and ``M_s`` the shot's phase-encode lines
(axis 0). Shot phases are folded into a composite per-shot sensitivity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .phantom import CoilMaps, DwiStack, ShotPhaseMaps


class DimensionError(ValueError):
    pass


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D DFT over the last two axes."""
    axes = (-2, -1)
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(x, axes=axes), norm="ortho"), axes=axes)


def ifft2c(k: np.ndarray) -> np.ndarray:
    axes = (-2, -1)
    return sfft.fftshift(sfft.ifft2(sfft.ifftshift(k, axes=axes), norm="ortho"), axes=axes)


@dataclass(eq=False)
class ShotMasks:
    masks: np.ndarray      # (S, N1) bool

    @property
    def s_total(self) -> int:
        return self.masks.shape[0]

    @property
    def n1(self) -> int:
        return self.masks.shape[1]


@dataclass(eq=False)
class KQSampling:
    """Which shots were acquired for each q-point, as a (Q, S) boolean matrix."""

    selected: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.selected = np.asarray(self.selected, dtype=bool)
        if self.selected.ndim != 2 or not np.all(self.selected.any(axis=1)):
            raise ValueError("every q-point needs at least one sampled shot")

    @property
    def q_total(self) -> int:
        return self.selected.shape[0]

    @property
    def s_total(self) -> int:
        return self.selected.shape[1]

    @property
    def acceleration(self) -> float:
        return self.s_total / self.selected.sum(axis=1).mean()

    def selected_sets(self) -> list[set[int]]:
        return [set(np.flatnonzero(row).tolist()) for row in self.selected]


@dataclass(eq=False)
class KSpaceData:
    data: np.ndarray       # (Q, C, N1, N2) complex, zero where unsampled
    sampling: KQSampling
    masks: ShotMasks

    def sampled(self) -> np.ndarray:
        """(Q, 1, N1, 1) boolean mask of acquired phase-encode lines per q."""
        lines = (self.sampling.selected.astype(np.int64) @ self.masks.masks.astype(np.int64)) > 0
        return lines[:, None, :, None]


def make_epi_masks(s_total: int, n1: int) -> ShotMasks:
    """Interleaved EPI segmentation: shot ``s`` acquires lines ``l`` with ``l % S == s``."""
    if not 1 <= s_total <= n1:
        raise DimensionError(f"shot count {s_total} must lie in [1, {n1}]")
    lines = np.arange(n1)
    return ShotMasks(lines[None, :] % s_total == np.arange(s_total)[:, None])


def sample_kq(q_total: int, s_total: int, shots_per_q: int, seed: int) -> KQSampling:
    """Uniform random subset of ``shots_per_q`` shots for every q-point."""
    if not 1 <= shots_per_q <= s_total:
        raise ValueError(f"shots_per_q={shots_per_q} must lie in [1, {s_total}]")
    rng = np.random.default_rng(seed)
    selected = np.zeros((q_total, s_total), dtype=bool)
    for q in range(q_total):
        selected[q, rng.choice(s_total, size=shots_per_q, replace=False)] = True
    return KQSampling(selected, seed=seed)


class EncodingOperator:
    """The generalized SENSE operator for a fixed acquisition, acting on (Q, N1, N2) arrays.

    ``support`` optionally restricts the unknowns to a spatial mask (zero elsewhere).
    """

    def __init__(self, coils: CoilMaps, phases: ShotPhaseMaps, masks: ShotMasks,
                 sampling: KQSampling, support: np.ndarray | None = None):
        maps = np.asarray(coils.maps, dtype=np.complex128)
        ph = np.asarray(phases.phases)
        c, n1, n2 = maps.shape
        q, s = sampling.selected.shape
        if ph.shape[:2] != (q, s):
            raise DimensionError(f"shot phases have (Q, S)={ph.shape[:2]}, sampling has {(q, s)}")
        if ph.shape[2:] != (n1, n2):
            raise DimensionError(f"shot phase grid {ph.shape[2:]} does not match coil grid {(n1, n2)}")
        if masks.s_total != s:
            raise DimensionError(f"shot masks have S={masks.s_total}, sampling has S={s}")
        if masks.n1 != n1:
            raise DimensionError(f"shot masks cover {masks.n1} lines, image has N1={n1}")
        self.coils, self.phases, self.masks, self.sampling = coils, phases, masks, sampling
        self.shape = (q, n1, n2)
        self.kshape = (q, c, n1, n2)
        self.support = None if support is None else np.asarray(support, dtype=bool)
        if self.support is not None and self.support.shape != (n1, n2):
            raise DimensionError(f"support {self.support.shape} does not match grid {(n1, n2)}")

        # one slot per sampled shot index; each q appears at most once per slot
        q_idx, s_idx = np.nonzero(sampling.selected)
        slot = np.zeros_like(q_idx)
        for k in range(1, q_idx.size):
            slot[k] = slot[k - 1] + 1 if q_idx[k] == q_idx[k - 1] else 0
        self._slots = []
        for k in range(int(slot.max()) + 1 if slot.size else 0):
            sel = slot == k
            qs, ss = q_idx[sel], s_idx[sel]
            shot_phase = np.exp(1j * ph[qs, ss])                         # (P, N1, N2)
            line_mask = masks.masks[ss][:, None, :, None]                # (P, 1, N1, 1)
            self._slots.append((qs, shot_phase, line_mask))
        self._maps = maps

    def _check(self, x: np.ndarray, shape, what: str) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != shape:
            axes = ("Q", "C", "N1", "N2") if len(shape) == 4 else ("Q", "N1", "N2")
            bad = [a for a, got, want in zip(axes, x.shape, shape) if got != want] or ["ndim"]
            raise DimensionError(f"{what} shape {x.shape} != {shape} (axis {', '.join(bad)})")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x, self.shape, "image")
        if self.support is not None:
            x = x * self.support
        y = np.zeros(self.kshape, dtype=np.complex128)
        for qs, shot_phase, line_mask in self._slots:
            img = (x[qs] * shot_phase)[:, None] * self._maps[None]
            y[qs] += fft2c(img) * line_mask
        return y

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = self._check(y, self.kshape, "k-space")
        x = np.zeros(self.shape, dtype=np.complex128)
        for qs, shot_phase, line_mask in self._slots:
            img = ifft2c(y[qs] * line_mask)
            x[qs] += np.sum(img * self._maps.conj()[None], axis=1) * shot_phase.conj()
        if self.support is not None:
            x *= self.support
        return x

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(x))

    def sampled(self) -> np.ndarray:
        lines = (self.sampling.selected.astype(np.int64) @ self.masks.masks.astype(np.int64)) > 0
        return lines[:, None, :, None]

    def coil_sos(self) -> np.ndarray:
        """Per-voxel sum over coils of |C|^2."""
        return np.sum(np.abs(self._maps) ** 2, axis=0)


def forward(p: DwiStack, coils: CoilMaps, phases: ShotPhaseMaps, masks: ShotMasks,
            sampling: KQSampling) -> KSpaceData:
    op = EncodingOperator(coils, phases, masks, sampling)
    return KSpaceData(op.forward(p.data), sampling, masks)


def adjoint(y: KSpaceData, coils: CoilMaps, phases: ShotPhaseMaps, masks: ShotMasks,
            sampling: KQSampling) -> DwiStack:
    op = EncodingOperator(coils, phases, masks, sampling)
    return DwiStack(op.adjoint(y.data))


def add_noise(y: KSpaceData, sigma: float, seed: int) -> KSpaceData:
    """Add circular complex Gaussian noise of total variance ``sigma**2`` on sampled entries."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return KSpaceData(y.data.copy(), y.sampling, y.masks)
    rng = np.random.default_rng(seed)
    shape = y.data.shape
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (sigma / np.sqrt(2.0))
    return KSpaceData(y.data + noise * y.sampled(), y.sampling, y.masks)
