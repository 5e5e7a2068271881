"""Multi-compartment diffusion kernel, q-space signal synthesis and dictionary generation.

Units: b in ms/um^2, diffusivities in um^2/ms, so ``b * D`` is dimensionless.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

D_MIN, D_MAX = 0.1, 3.0
_FRACTION_TOL = 1e-6
_UNIT_TOL = 1e-9


class InvalidParameterError(ValueError):
    """Raised for kernel parameters outside their physical ranges."""


class DictConfigError(ValueError):
    """Raised for dictionary configurations outside physiological bounds."""


@dataclass(frozen=True)
class KernelParams:
    """Volume fractions and compartment diffusivities of the single-fiber kernel."""

    f_intra: float
    f_extra: float
    f_iso: float
    d_a: float
    d_e_par: float
    d_e_perp: float
    d_iso: float

    def validate(self) -> "KernelParams":
        fractions = (self.f_intra, self.f_extra, self.f_iso)
        if any(not 0.0 <= f <= 1.0 for f in fractions):
            raise InvalidParameterError(f"volume fractions must lie in [0, 1], got {fractions}")
        if abs(sum(fractions) - 1.0) > _FRACTION_TOL:
            raise InvalidParameterError(f"volume fractions must sum to 1, got {sum(fractions)!r}")
        for name in ("d_a", "d_e_par", "d_e_perp", "d_iso"):
            d = getattr(self, name)
            if not D_MIN <= d <= D_MAX:
                raise InvalidParameterError(f"{name}={d} outside [{D_MIN}, {D_MAX}] um^2/ms")
        if self.d_e_perp > self.d_e_par:
            raise InvalidParameterError("d_e_perp must not exceed d_e_par")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.f_intra, self.f_extra, self.f_iso,
                         self.d_a, self.d_e_par, self.d_e_perp, self.d_iso])

    @classmethod
    def from_array(cls, a) -> "KernelParams":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class QSpacePoint:
    b: float
    g: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class QSpaceScheme:
    """Ordered q-space samples stored as ``bvals`` (Q,) and unit ``bvecs`` (Q, 3)."""

    bvals: np.ndarray
    bvecs: np.ndarray

    def __post_init__(self):
        bvals = np.asarray(self.bvals, dtype=np.float64).reshape(-1)
        bvecs = np.asarray(self.bvecs, dtype=np.float64).reshape(-1, 3)
        if bvals.size == 0:
            raise ValueError("q-space scheme must contain at least one point")
        if bvecs.shape[0] != bvals.size:
            raise ValueError(f"{bvals.size} b-values but {bvecs.shape[0]} gradient directions")
        if np.any(bvals < 0):
            raise ValueError("b-values must be non-negative")
        norms = np.linalg.norm(bvecs, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise ValueError("gradient directions must be unit vectors")
        object.__setattr__(self, "bvals", bvals)
        object.__setattr__(self, "bvecs", bvecs)

    def __len__(self) -> int:
        return self.bvals.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, QSpaceScheme):
            return NotImplemented
        return np.array_equal(self.bvals, other.bvals) and np.array_equal(self.bvecs, other.bvecs)

    @property
    def points(self) -> list[QSpacePoint]:
        return [QSpacePoint(float(b), tuple(float(c) for c in g))
                for b, g in zip(self.bvals, self.bvecs)]

    @classmethod
    def from_points(cls, points) -> "QSpaceScheme":
        points = list(points)
        return cls(np.array([p.b for p in points]), np.array([p.g for p in points]))

    def to_array(self) -> np.ndarray:
        """(Q, 4) array of ``[b, gx, gy, gz]`` rows."""
        return np.column_stack([self.bvals, self.bvecs])

    @classmethod
    def from_array(cls, a) -> "QSpaceScheme":
        a = np.asarray(a, dtype=np.float64)
        return cls(a[:, 0], a[:, 1:4])


def make_scheme(n_directions: int = 60, b_value: float = 1.0, n_b0: int = 0) -> QSpaceScheme:
    """Single-shell scheme on Fibonacci hemisphere directions, optionally preceded by b=0 points."""
    dirs = fibonacci_directions(n_directions)
    bvecs = np.vstack([np.tile([0.0, 0.0, 1.0], (n_b0, 1)), dirs])
    bvals = np.concatenate([np.zeros(n_b0), np.full(n_directions, float(b_value))])
    return QSpaceScheme(bvals, bvecs)


@dataclass(frozen=True, eq=False)
class FiberConfig:
    """Discrete fiber ODF: weighted unit directions, plus magnitude and global phase."""

    directions: np.ndarray
    weights: np.ndarray
    rho0: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        dirs = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "weights", w)

    def validate(self) -> "FiberConfig":
        if self.directions.shape[0] != self.weights.size or self.weights.size == 0:
            raise InvalidParameterError("need one weight per fiber direction and at least one fiber")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > _FRACTION_TOL:
            raise InvalidParameterError("fiber weights must be non-negative and sum to 1")
        if np.any(np.abs(np.linalg.norm(self.directions, axis=1) - 1.0) > _UNIT_TOL):
            raise InvalidParameterError("fiber directions must be unit vectors")
        if self.rho0 < 0:
            raise InvalidParameterError("rho0 must be non-negative")
        return self


def eval_kernel(p: KernelParams, b, zeta):
    """Signal attenuation of one fiber at b-value ``b`` and cosine ``zeta`` to the fiber axis.

    Broadcasts over array-valued ``b`` and ``zeta``.
    """
    p.validate()
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < 0):
        raise InvalidParameterError("b must be non-negative")
    z2 = np.asarray(zeta, dtype=np.float64) ** 2
    out = (p.f_intra * np.exp(-b * p.d_a * z2)
           + p.f_extra * np.exp(-b * p.d_e_perp - b * (p.d_e_par - p.d_e_perp) * z2)
           + p.f_iso * np.exp(-b * p.d_iso))
    return out[()] if out.ndim == 0 else out


def simulate_signal(fc: FiberConfig, p: KernelParams, scheme: QSpaceScheme) -> np.ndarray:
    """Complex q-space signal of one voxel: the kernel summed over the weighted fiber atoms."""
    fc.validate()
    if len(scheme) == 0:
        raise ValueError("empty q-space scheme")
    zeta = np.abs(scheme.bvecs @ fc.directions.T)                 # (Q, K)
    atten = eval_kernel(p, scheme.bvals[:, None], zeta) @ fc.weights
    return fc.rho0 * np.exp(1j * fc.phase) * atten


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` quasi-uniform unit vectors on the upper hemisphere (spherical Fibonacci lattice)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    v = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# -- dictionary -------------------------------------------------------------

_DIFFUSIVITY_KEYS = ("d_a", "d_e_par", "d_e_perp", "d_iso")


@dataclass
class DictConfig:
    """Dictionary sampling setup.

    ``mode="grid"`` takes the Cartesian product of the per-parameter value lists
    (``f_iso`` is the remainder ``1 - f_intra - f_extra``; invalid combinations are
    skipped) with every fiber configuration. ``mode="random"`` draws ``n_atoms`` atoms,
    each with fractions uniform on the simplex, diffusivities uniform in
    ``d_range``, and a fiber configuration chosen uniformly.
    """

    mode: str = "random"
    n_atoms: int = 12000
    n_directions: int = 30
    crossings: bool = True
    crossing_weights: tuple[float, ...] = (0.5, 2.0 / 3.0)
    random_phase: bool = True
    rho0_range: tuple[float, float] = (0.15, 1.0)
    d_range: tuple[float, float] = (D_MIN, D_MAX)
    f_intra: tuple[float, ...] = (0.5,)
    f_extra: tuple[float, ...] = (0.3,)
    d_a: tuple[float, ...] = (2.0,)
    d_e_par: tuple[float, ...] = (1.5,)
    d_e_perp: tuple[float, ...] = (0.5,)
    d_iso: tuple[float, ...] = (3.0,)

    def validate(self) -> "DictConfig":
        if self.mode not in ("grid", "random"):
            raise DictConfigError(f"unknown dictionary mode {self.mode!r}")
        lo, hi = self.d_range
        if not D_MIN <= lo <= hi <= D_MAX:
            raise DictConfigError(f"diffusivity range {self.d_range} exceeds [{D_MIN}, {D_MAX}]")
        for key in _DIFFUSIVITY_KEYS:
            if any(not D_MIN <= v <= D_MAX for v in getattr(self, key)):
                raise DictConfigError(f"{key} grid exceeds [{D_MIN}, {D_MAX}]")
        for key in ("f_intra", "f_extra"):
            if any(not 0.0 <= v <= 1.0 for v in getattr(self, key)):
                raise DictConfigError(f"{key} grid exceeds [0, 1]")
        if any(not 0.0 < w < 1.0 for w in self.crossing_weights):
            raise DictConfigError("crossing weights must lie in (0, 1)")
        if not 0.0 <= self.rho0_range[0] <= self.rho0_range[1]:
            raise DictConfigError("rho0 range must be non-negative and ordered")
        if self.n_directions < 1 or (self.mode == "random" and self.n_atoms < 1):
            raise DictConfigError("need at least one direction and one atom")
        return self


@dataclass(frozen=True, eq=False)
class Dictionary:
    atoms: np.ndarray                    # (Q, N_atoms) complex
    scheme: QSpaceScheme
    params: np.ndarray = field(repr=False, default=None)   # (N_atoms, 7) kernel parameters per atom

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


def fiber_configurations(directions: np.ndarray, crossings: bool,
                         crossing_weights=(0.5,)) -> list[tuple[np.ndarray, np.ndarray]]:
    """Single fibers along every direction plus two-fiber crossings of every pair.

    Equal weights give one crossing per unordered pair; an unequal weight ``w``
    gives both ``(w, 1-w)`` assignments.
    """
    configs = [(d[None, :], np.ones(1)) for d in directions]
    if not crossings:
        return configs
    pairs = list(itertools.combinations(range(len(directions)), 2))
    for w in crossing_weights:
        splits = [(w, 1.0 - w)] if np.isclose(w, 0.5) else [(w, 1.0 - w), (1.0 - w, w)]
        for w1, w2 in splits:
            for i, j in pairs:
                configs.append((directions[[i, j]], np.array([w1, w2])))
    return configs


def _grid_params(cfg: DictConfig) -> list[KernelParams]:
    out = []
    for fi, fe, da, dp, dq, di in itertools.product(cfg.f_intra, cfg.f_extra, cfg.d_a,
                                                     cfg.d_e_par, cfg.d_e_perp, cfg.d_iso):
        f_iso = 1.0 - fi - fe
        if f_iso < -_FRACTION_TOL or dq > dp:
            continue
        out.append(KernelParams(fi, fe, max(f_iso, 0.0), da, dp, dq, di))
    if not out:
        raise DictConfigError("parameter grid contains no valid kernel")
    return out


def _pad_fibers(dirs_list, weights_list) -> tuple[np.ndarray, np.ndarray]:
    n = len(dirs_list)
    k = max(len(w) for w in weights_list)
    dirs = np.zeros((n, k, 3))
    wts = np.zeros((n, k))
    for i, (d, w) in enumerate(zip(dirs_list, weights_list)):
        dirs[i, :len(w)] = d
        dirs[i, len(w):] = d[0]
        wts[i, :len(w)] = w
    return dirs, wts


def multi_fiber_signals(params: np.ndarray, dirs: np.ndarray, weights: np.ndarray,
                        scheme: QSpaceScheme) -> np.ndarray:
    """Real attenuation for N voxels/atoms at once.

    ``params`` is (N, 7) in :class:`KernelParams` field order, ``dirs`` (N, K, 3),
    ``weights`` (N, K) with zero weight for padding fibers. Returns (Q, N).
    """
    b = scheme.bvals[:, None, None]
    z2 = np.einsum("qc,nkc->qnk", scheme.bvecs, dirs) ** 2
    f_in, f_ex, f_is, d_a, d_par, d_perp, d_iso = (params[:, i][None, :, None] for i in range(7))
    k = (f_in * np.exp(-b * d_a * z2)
         + f_ex * np.exp(-b * d_perp - b * (d_par - d_perp) * z2)
         + f_is * np.exp(-b * d_iso))
    return np.einsum("qnk,nk->qn", k, weights)


def generate_dictionary(cfg: DictConfig, scheme: QSpaceScheme, seed: int) -> Dictionary:
    """Simulate the training dictionary Z; a pure function of ``(cfg, scheme, seed)``."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    configs = fiber_configurations(fibonacci_directions(cfg.n_directions), cfg.crossings,
                                   cfg.crossing_weights)

    if cfg.mode == "grid":
        kernels = _grid_params(cfg)
        params = np.array([p.as_array() for p in kernels for _ in configs])
        chosen = [c for _ in kernels for c in configs]
    else:
        n = cfg.n_atoms
        fractions = rng.dirichlet(np.ones(3), size=n)
        lo, hi = cfg.d_range
        d = rng.uniform(lo, hi, size=(n, 4))
        d_par = np.maximum(d[:, 1], d[:, 2])
        d_perp = np.minimum(d[:, 1], d[:, 2])
        params = np.column_stack([fractions, d[:, 0], d_par, d_perp, d[:, 3]])
        idx = rng.integers(0, len(configs), size=n)
        chosen = [configs[i] for i in idx]

    dirs, wts = _pad_fibers([c[0] for c in chosen], [c[1] for c in chosen])
    signals = multi_fiber_signals(params, dirs, wts, scheme)
    n = signals.shape[1]
    if cfg.mode == "random":
        rho0 = rng.uniform(*cfg.rho0_range, size=n)
    else:
        rho0 = np.full(n, cfg.rho0_range[1])
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n) if cfg.random_phase else np.zeros(n)
    atoms = signals * (rho0 * np.exp(1j * phase))[None, :]
    return Dictionary(atoms=atoms, scheme=scheme, params=params)
