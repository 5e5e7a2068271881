"""Plug-and-play joint reconstruction with a pre-trained DAE prior.

Alternates a Krylov (conjugate residual by default) data-consistency solve

    P_{n+1} = argmin_P ||A P - Y||^2 + lam ||P - Q_n||^2

with voxel-wise denoising ``Q_{n+1} = D(P_{n+1})``, starting from ``Q_0 = P_0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dae import DaeModel, denoise_stack
from .encoding import EncodingOperator, KSpaceData
from .metrics import psnr
from .phantom import DwiStack


@dataclass
class ReconConfig:
    lam: float = 0.01
    outer_iters: int = 4
    cg_iters: int = 15
    cg_tolerance: float = 1e-6
    initializer: str = "adjoint"
    solver: str = "cr"         # "cr" (monotone residual) or "cg"

    def validate(self) -> "ReconConfig":
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.outer_iters < 1 or self.cg_iters < 0:
            raise ValueError("need outer_iters >= 1 and cg_iters >= 0")
        if not 0.0 < self.cg_tolerance < 1.0:
            raise ValueError("cg_tolerance must lie in (0, 1)")
        if self.initializer not in ("zero", "adjoint"):
            raise ValueError(f"unknown initializer {self.initializer!r}")
        if self.solver not in ("cr", "cg"):
            raise ValueError(f"unknown solver {self.solver!r}")
        return self


@dataclass
class CGResult:
    x: np.ndarray
    residuals: list[float]     # ||b - M x_k|| / ||b|| for k = 0, 1, ...
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1


@dataclass
class ReconTrace:
    dc_cost: list[float] = field(default_factory=list)
    prior_cost: list[float] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    psnr_denoised: list[float] = field(default_factory=list)
    cg_iterations: list[int] = field(default_factory=list)
    cg_converged: list[bool] = field(default_factory=list)
    cg_residuals: list[list[float]] = field(default_factory=list)
    psnr_init: float | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "dc_cost", "prior_cost", "psnr", "psnr_denoised",
                        "cg_iters", "cg_converged"])
            for i in range(len(self.dc_cost)):
                p = repr(self.psnr[i]) if self.psnr else ""
                pd = repr(self.psnr_denoised[i]) if self.psnr_denoised else ""
                w.writerow([i + 1, repr(self.dc_cost[i]), repr(self.prior_cost[i]), p, pd,
                            self.cg_iterations[i], int(self.cg_converged[i])])


def _vdot(a: np.ndarray, b: np.ndarray) -> complex:
    return np.vdot(a.ravel(), b.ravel())


def conjugate_gradient(apply, b: np.ndarray, x0: np.ndarray, max_iter: int, tol: float) -> CGResult:
    """CG for a Hermitian positive (semi-)definite operator; returns the lowest-residual iterate."""
    x = x0.copy()
    r = b - apply(x)
    b_norm = np.linalg.norm(b)
    scale = b_norm if b_norm > 0 else 1.0
    res = [float(np.linalg.norm(r) / scale)]
    best_x, best_res = x.copy(), res[0]
    if res[0] <= tol:
        return CGResult(x, res, True)
    p = r.copy()
    rr = _vdot(r, r).real
    for _ in range(max_iter):
        mp = apply(p)
        pmp = _vdot(p, mp).real
        if pmp <= 0:
            break
        alpha = rr / pmp
        x += alpha * p
        r -= alpha * mp
        rr_new = _vdot(r, r).real
        res.append(float(np.sqrt(rr_new) / scale))
        if res[-1] < best_res:
            best_x, best_res = x.copy(), res[-1]
        if res[-1] <= tol:
            return CGResult(x, res, True)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(best_x, res, False)


def conjugate_residual(apply, b: np.ndarray, x0: np.ndarray, max_iter: int, tol: float) -> CGResult:
    """Conjugate residual method for a Hermitian operator.

    Minimizes ``||b - M x||`` over the Krylov space, so the residual never increases.
    Same cost as CG (one operator application per iteration).
    """
    x = x0.copy()
    r = b - apply(x)
    b_norm = np.linalg.norm(b)
    scale = b_norm if b_norm > 0 else 1.0
    res = [float(np.linalg.norm(r) / scale)]
    if res[0] <= tol:
        return CGResult(x, res, True)
    mr = apply(r)
    p, mp = r.copy(), mr.copy()
    rmr = _vdot(r, mr).real
    for _ in range(max_iter):
        mpmp = _vdot(mp, mp).real
        if rmr <= 0 or mpmp <= 0:
            break
        alpha = rmr / mpmp
        x += alpha * p
        r -= alpha * mp
        res.append(float(np.linalg.norm(r) / scale))
        if res[-1] <= tol:
            return CGResult(x, res, True)
        mr = apply(r)
        rmr_new = _vdot(r, mr).real
        beta = rmr_new / rmr
        p = r + beta * p
        mp = mr + beta * mp
        rmr = rmr_new
    return CGResult(x, res, False)


def _kdata(y) -> np.ndarray:
    return y.data if isinstance(y, KSpaceData) else np.asarray(y)


def dc_cost(ops: EncodingOperator, p: np.ndarray, y) -> float:
    r = ops.forward(p) - _kdata(y)
    return float(np.vdot(r.ravel(), r.ravel()).real)


def solve_dc(y, q_aux: DwiStack, lam: float, ops: EncodingOperator, cfg: ReconConfig,
             x0: np.ndarray | None = None) -> tuple[DwiStack, CGResult]:
    """Krylov solve of ``(A^H A + lam I) P = A^H Y + lam Q`` starting from ``x0`` (default ``Q``)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    q = q_aux.data
    rhs = ops.adjoint(_kdata(y))
    if lam > 0:
        rhs = rhs + lam * q
    if lam > 0:
        apply = lambda x: ops.normal(x) + lam * x  # noqa: E731
    else:
        apply = ops.normal
    start = q if x0 is None else np.asarray(x0, dtype=np.complex128)
    solver = conjugate_residual if cfg.solver == "cr" else conjugate_gradient
    res = solver(apply, rhs, start, cfg.cg_iters, cfg.cg_tolerance)
    return DwiStack(res.x, q_aux.scheme), res


def zero_filled_recon(y, ops: EncodingOperator) -> DwiStack:
    """Adjoint reconstruction, normalized by the coil sum-of-squares and per-q sampling density."""
    x = ops.adjoint(_kdata(y))
    sos = ops.coil_sos()
    density = ops.sampling.s_total / ops.sampling.selected.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(sos > 0, x / np.where(sos > 0, sos, 1.0), 0.0)
    return DwiStack(x * density[:, None, None])


def pnp_recon(y, model: DaeModel, ops: EncodingOperator, cfg: ReconConfig,
              truth: DwiStack | None = None, mask: np.ndarray | None = None,
              scheme=None) -> tuple[DwiStack, ReconTrace]:
    """Alternate DC solves and DAE denoising for ``cfg.outer_iters`` rounds.

    Returns the last data-consistency iterate. ``mask`` selects the voxels that are
    denoised (default: the operator's support, else every voxel). With ``lam = 0``
    each CG solve warm-starts from the previous DC iterate, so the output does not
    depend on the model; otherwise it starts from ``Q_n``.
    """
    cfg.validate()
    if model.q != ops.shape[0]:
        raise ValueError(f"model Q={model.q} does not match data Q={ops.shape[0]}")
    if mask is None:
        mask = ops.support
    trace = ReconTrace()
    if cfg.initializer == "adjoint":
        p = zero_filled_recon(y, ops).data
    else:
        p = np.zeros(ops.shape, dtype=np.complex128)
    if truth is not None:
        trace.psnr_init = psnr(p, truth, mask)
    q = DwiStack(p, scheme)

    for _ in range(cfg.outer_iters):
        x0 = p if cfg.lam == 0 else None
        p_stack, cg = solve_dc(y, q, cfg.lam, ops, cfg, x0=x0)
        p = p_stack.data
        q = denoise_stack(model, p_stack, mask)
        trace.dc_cost.append(dc_cost(ops, p, y))
        diff = p - q.data
        trace.prior_cost.append(float(np.vdot(diff.ravel(), diff.ravel()).real))
        trace.cg_iterations.append(cg.iterations)
        trace.cg_converged.append(cg.converged)
        trace.cg_residuals.append(cg.residuals)
        if truth is not None:
            trace.psnr.append(psnr(p, truth, mask))
            trace.psnr_denoised.append(psnr(q.data, truth, mask))
    return DwiStack(p, scheme), trace
