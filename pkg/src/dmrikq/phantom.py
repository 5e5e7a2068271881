"""Synthetic brain-like diffusion phantom, coil sensitivities and shot phase errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_model import FiberConfig, KernelParams, QSpaceScheme, multi_fiber_signals

# region labels
BACKGROUND, TISSUE, ARC_TRACT, VERTICAL_TRACT, CROSSING, CSF, AXIAL_TRACT = range(7)

# (f_intra, f_extra, f_iso, d_a, d_e_par, d_e_perp, d_iso), rho0
_REGION_PARAMS = {
    TISSUE: ((0.15, 0.55, 0.30, 1.8, 1.2, 0.8, 3.0), 0.85),
    ARC_TRACT: ((0.60, 0.32, 0.08, 2.2, 1.8, 0.5, 3.0), 0.75),
    VERTICAL_TRACT: ((0.55, 0.35, 0.10, 2.0, 1.7, 0.6, 3.0), 0.75),
    CROSSING: ((0.55, 0.35, 0.10, 2.1, 1.7, 0.55, 3.0), 0.75),
    AXIAL_TRACT: ((0.60, 0.30, 0.10, 2.2, 1.8, 0.5, 3.0), 0.75),
    CSF: ((0.0, 0.0, 1.0, 0.5, 0.5, 0.5, 3.0), 1.0),
}


class PhantomConfigError(ValueError):
    pass


@dataclass
class PhantomConfig:
    """Layout of the phantom in normalized coordinates ([-1, 1] across the FOV)."""

    n1: int = 64
    n2: int = 64
    brain_axes: tuple[float, float] = (0.88, 0.76)
    tract_half_width: float = 0.10
    crossing: bool = True
    csf: bool = True
    jitter: float = 0.05
    phase_scale: float = 1.0


@dataclass(eq=False)
class Phantom:
    """Per-voxel microstructure stored as dense arrays.

    ``params`` (N1, N2, 7), ``fiber_dirs`` (N1, N2, 2, 3), ``fiber_weights`` (N1, N2, 2),
    ``rho0`` and ``phase`` (N1, N2), ``labels`` (N1, N2) int. Out-of-mask voxels carry
    zero weights and rho0.
    """

    params: np.ndarray
    fiber_dirs: np.ndarray
    fiber_weights: np.ndarray
    rho0: np.ndarray
    phase: np.ndarray
    labels: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.labels != BACKGROUND

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def voxel(self, i: int, j: int) -> tuple[FiberConfig, KernelParams] | None:
        if not self.mask[i, j]:
            return None
        w = self.fiber_weights[i, j]
        keep = w > 0
        fc = FiberConfig(self.fiber_dirs[i, j][keep], w[keep],
                         float(self.rho0[i, j]), float(self.phase[i, j]))
        return fc, KernelParams.from_array(self.params[i, j])

    @property
    def grid(self) -> list[list[tuple[FiberConfig, KernelParams] | None]]:
        n1, n2 = self.shape
        return [[self.voxel(i, j) for j in range(n2)] for i in range(n1)]

    def to_array(self) -> np.ndarray:
        """Pack into an (N1, N2, 18) float array: label, rho0, phase, params, weights, dirs."""
        n1, n2 = self.shape
        return np.concatenate([
            self.labels[..., None].astype(np.float64), self.rho0[..., None], self.phase[..., None],
            self.params, self.fiber_weights, self.fiber_dirs.reshape(n1, n2, 6)], axis=-1)

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Phantom":
        n1, n2, _ = a.shape
        return cls(params=a[..., 3:10].copy(), fiber_dirs=a[..., 12:18].reshape(n1, n2, 2, 3).copy(),
                   fiber_weights=a[..., 10:12].copy(), rho0=a[..., 1].copy(),
                   phase=a[..., 2].copy(), labels=a[..., 0].astype(np.int64))


@dataclass(eq=False)
class DwiStack:
    """Complex images of all Q diffusion weightings, shape (Q, N1, N2)."""

    data: np.ndarray
    scheme: QSpaceScheme | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ValueError(f"DWI stack must be (Q, N1, N2), got shape {self.data.shape}")
        if self.scheme is not None and len(self.scheme) != self.data.shape[0]:
            raise ValueError("q-axis length does not match the scheme")


@dataclass(eq=False)
class CoilMaps:
    maps: np.ndarray          # (C, N1, N2) complex

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]


@dataclass(eq=False)
class ShotPhaseMaps:
    phases: np.ndarray        # (Q, S, N1, N2) radians in (-pi, pi]


def _grid(n1: int, n2: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (row, col) coordinates in [-1, 1)."""
    u = (np.arange(n1) - n1 / 2) / (n1 / 2)
    v = (np.arange(n2) - n2 / 2) / (n2 / 2)
    return np.meshgrid(u, v, indexing="ij")


def wrap_phase(phi: np.ndarray) -> np.ndarray:
    """Wrap to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - phi, 2.0 * np.pi)


def _poly_field(u, v, coeffs) -> np.ndarray:
    out = np.zeros_like(u)
    for (px, py), c in coeffs.items():
        out = out + c * u ** px * v ** py
    return out


def _monomials(max_order: int) -> list[tuple[int, int]]:
    return [(px, d - px) for d in range(max_order + 1) for px in range(d, -1, -1)]


def build_brain_phantom(cfg: PhantomConfig, seed: int) -> Phantom:
    """Elliptical brain with an arched tract, two vertical tracts crossing it, an
    out-of-plane tract, a CSF pocket and weakly anisotropic surrounding tissue."""
    if cfg.n1 < 16 or cfg.n2 < 16:
        raise PhantomConfigError(f"grid {cfg.n1}x{cfg.n2} is smaller than the 16x16 minimum")
    if not cfg.crossing:
        raise PhantomConfigError("the phantom requires a crossing-fiber region")
    rng = np.random.default_rng(seed)
    n1, n2 = cfg.n1, cfg.n2
    u, v = _grid(n1, n2)
    hw = cfg.tract_half_width

    brain = (u / cfg.brain_axes[0]) ** 2 + (v / cfg.brain_axes[1]) ** 2 <= 1.0
    labels = np.where(brain, TISSUE, BACKGROUND)

    # arched tract: band around a circle centred below the FOV centre, upper half only
    cu, radius = 0.55, 0.62
    du, dv = u - cu, v
    rad = np.hypot(du, dv)
    arc = brain & (np.abs(rad - radius) < hw) & (u < cu - 0.1)
    vertical = brain & (np.abs(np.abs(v) - 0.32) < hw) & (u > -0.6) & (u < 0.6)
    axial = brain & ((u - 0.35) ** 2 + v ** 2 < (1.6 * hw) ** 2)
    csf = brain & (((u + 0.05) / 0.10) ** 2 + (v / 0.16) ** 2 <= 1.0) if cfg.csf else np.zeros_like(brain)

    labels[arc] = ARC_TRACT
    labels[vertical] = VERTICAL_TRACT
    labels[arc & vertical] = CROSSING
    labels[axial & ~arc & ~vertical] = AXIAL_TRACT
    labels[csf] = CSF
    if not np.any(labels == CROSSING):
        raise PhantomConfigError("grid too coarse to resolve the crossing region")

    # fiber directions: (x, y, z) with x along columns and y along rows
    tangent = np.stack([du, -dv, np.zeros_like(u)], axis=-1) / np.maximum(rad, 1e-12)[..., None]
    tilt = np.deg2rad(15.0)
    vert_dir = np.array([0.0, np.cos(tilt), np.sin(tilt)])
    z_dir = np.array([0.0, 0.0, 1.0])

    dirs = np.zeros((n1, n2, 2, 3))
    weights = np.zeros((n1, n2, 2))
    params = np.zeros((n1, n2, 7))
    rho0 = np.zeros((n1, n2))

    tissue_dirs = rng.normal(size=(n1, n2, 3))
    tissue_dirs /= np.linalg.norm(tissue_dirs, axis=-1, keepdims=True)

    for label, (base, r0) in _REGION_PARAMS.items():
        sel = labels == label
        n = int(sel.sum())
        if n == 0:
            continue
        p = np.tile(np.asarray(base, dtype=np.float64), (n, 1))
        p *= 1.0 + cfg.jitter * rng.uniform(-1.0, 1.0, size=p.shape)
        p[:, :3] /= p[:, :3].sum(axis=1, keepdims=True)
        p[:, 3:] = np.clip(p[:, 3:], 0.1, 3.0)
        p[:, 5] = np.minimum(p[:, 5], p[:, 4])
        params[sel] = p
        rho0[sel] = r0 * (1.0 + cfg.jitter * rng.uniform(-1.0, 1.0, size=n))

        if label == ARC_TRACT:
            dirs[sel, 0] = tangent[sel]
            weights[sel, 0] = 1.0
        elif label == VERTICAL_TRACT:
            dirs[sel, 0] = vert_dir
            weights[sel, 0] = 1.0
        elif label == CROSSING:
            dirs[sel, 0] = tangent[sel]
            dirs[sel, 1] = vert_dir
            weights[sel] = 0.5
        elif label == AXIAL_TRACT:
            dirs[sel, 0] = z_dir
            weights[sel, 0] = 1.0
        else:
            dirs[sel, 0] = tissue_dirs[sel]
            weights[sel, 0] = 1.0
    dirs[:, :, 1][weights[:, :, 1] == 0] = dirs[:, :, 0][weights[:, :, 1] == 0]

    coeffs = {m: rng.normal(scale=cfg.phase_scale / (1 + sum(m))) for m in _monomials(2)}
    phase = np.where(labels != BACKGROUND, wrap_phase(_poly_field(u, v, coeffs)), 0.0)
    return Phantom(params=params, fiber_dirs=dirs, fiber_weights=weights, rho0=rho0,
                   phase=phase, labels=labels)


def render_dwis(ph: Phantom, scheme: QSpaceScheme) -> DwiStack:
    """Evaluate the voxel-wise signal model; out-of-mask voxels are exactly zero."""
    n1, n2 = ph.shape
    mask = ph.mask
    data = np.zeros((len(scheme), n1, n2), dtype=np.complex128)
    if np.any(mask):
        atten = multi_fiber_signals(ph.params[mask], ph.fiber_dirs[mask], ph.fiber_weights[mask], scheme)
        data[:, mask] = atten * (ph.rho0[mask] * np.exp(1j * ph.phase[mask]))[None, :]
    return DwiStack(data, scheme)


def simulate_coil_maps(n_coils: int, n1: int, n2: int, seed: int, uniform: bool = False,
                       width: float = 0.55, radius: float = 0.85) -> CoilMaps:
    """Gaussian-blob receive sensitivities around the FOV with smooth phase ramps.

    ``uniform=True`` returns all-ones maps (identity sensitivity).
    """
    if n_coils < 1:
        raise ValueError("need at least one coil")
    if uniform:
        return CoilMaps(np.ones((n_coils, n1, n2), dtype=np.complex128))
    rng = np.random.default_rng(seed)
    u, v = _grid(n1, n2)
    offset = rng.uniform(0.0, 2.0 * np.pi / n_coils)
    maps = np.empty((n_coils, n1, n2), dtype=np.complex128)
    for c in range(n_coils):
        theta = offset + 2.0 * np.pi * c / n_coils
        cu, cv = radius * np.sin(theta), radius * np.cos(theta)
        mag = np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2.0 * width ** 2))
        a, b, c0 = rng.uniform(-np.pi / 2, np.pi / 2, size=2).tolist() + [rng.uniform(-np.pi, np.pi)]
        maps[c] = mag * np.exp(1j * (c0 + a * u + b * v))
    return CoilMaps(maps)


def simulate_shot_phases(q: int, s: int, n1: int, n2: int, max_order: int, seed: int,
                         scale: float = np.pi) -> ShotPhaseMaps:
    """Random low-order polynomial phase per (q, shot) image, wrapped to (-pi, pi].

    Order-``k`` coefficients are drawn with standard deviation ``scale / (k + 1)``;
    the constant term is uniform over the full circle.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    rng = np.random.default_rng(seed)
    u, v = _grid(n1, n2)
    mons = _monomials(max_order)
    phases = np.empty((q, s, n1, n2))
    for iq in range(q):
        for js in range(s):
            coeffs = {}
            for m in mons:
                order = sum(m)
                coeffs[m] = (rng.uniform(-np.pi, np.pi) if order == 0
                             else rng.normal(scale=scale / (order + 1)))
            phases[iq, js] = wrap_phase(_poly_field(u, v, coeffs))
    return ShotPhaseMaps(phases)
