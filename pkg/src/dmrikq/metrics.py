"""RMSE / PSNR evaluation of reconstructed DWI stacks against ground truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .phantom import DwiStack


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, DwiStack) else np.asarray(x)


def _masked_sq_err(a, b, mask) -> np.ndarray:
    """Squared error magnitudes, shape (Q, n_voxels)."""
    a, b = _data(a), _data(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = np.abs(a - b) ** 2
    if mask is None:
        return err.reshape(err.shape[0], -1)
    return err[:, np.asarray(mask, dtype=bool)]


def rmse(a, b, mask=None) -> float:
    """Root of the mean squared complex-difference magnitude over masked voxels and all q."""
    return float(np.sqrt(np.mean(_masked_sq_err(a, b, mask))))


def per_q_rmse(a, b, mask=None) -> np.ndarray:
    return np.sqrt(np.mean(_masked_sq_err(a, b, mask), axis=1))


def psnr_from_rmse(err: float, peak: float = 1.0) -> float:
    return float("inf") if err == 0 else float(20.0 * np.log10(peak / err))


def psnr(a, truth, mask=None) -> float:
    """``20 log10(max|truth| / rmse)``; ``+inf`` when the reconstruction is exact."""
    t = _data(truth)
    vals = np.abs(t if mask is None else t[:, np.asarray(mask, dtype=bool)])
    peak = float(vals.max()) if vals.size else 0.0
    if peak == 0:
        raise ValueError("PSNR undefined for an all-zero ground truth")
    return psnr_from_rmse(rmse(a, truth, mask), peak)


@dataclass
class EvalReport:
    rmse: float
    psnr: float
    per_q_rmse: np.ndarray
    rmse_full: float           # over the whole grid, ignoring the mask
    psnr_full: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["q", "rmse"])
            for q, e in enumerate(self.per_q_rmse):
                w.writerow([q, repr(float(e))])
            w.writerow(["all", repr(self.rmse)])

    def summary(self) -> str:
        return (f"RMSE (mask)   {self.rmse:.6f}\n"
                f"PSNR (mask)   {self.psnr:.3f} dB\n"
                f"RMSE (grid)   {self.rmse_full:.6f}\n"
                f"PSNR (grid)   {self.psnr_full:.3f} dB\n"
                f"per-q RMSE    min {self.per_q_rmse.min():.6f}  max {self.per_q_rmse.max():.6f}\n")


def evaluate(recon, truth, mask=None) -> EvalReport:
    return EvalReport(rmse=rmse(recon, truth, mask), psnr=psnr(recon, truth, mask),
                      per_q_rmse=per_q_rmse(recon, truth, mask),
                      rmse_full=rmse(recon, truth), psnr_full=psnr(recon, truth))
