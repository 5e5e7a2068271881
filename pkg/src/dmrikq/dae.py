"""Fully connected denoising autoencoder acting along the q-dimension.

Complex q-vectors of length Q are embedded as real vectors ``[Re, Im]`` of length
``2Q``. The network is a stack of affine maps with ReLU on the hidden layers (optionally
excepting the bottleneck) and an identity output layer; gradients are computed by
hand-written backpropagation in float64.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .phantom import DwiStack
from .signal_model import Dictionary

MODEL_MAGIC = b"DMRIKQ-DAE\x00\x01"
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    pass


@dataclass(eq=False)
class DaeModel:
    """Network parameters; ``weights[k]`` has shape (d_k, d_{k+1}).

    With ``phase_normalize`` the network sees each q-vector rotated by the conjugate
    phase of its sum over q, and the output is rotated back. With ``linear_bottleneck``
    the narrowest layer has no ReLU, so none of its few units can die during training.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    phase_normalize: bool = False
    linear_bottleneck: bool = False

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def q(self) -> int:
        return self.layer_dims[0] // 2

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "DaeModel":
        return DaeModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.phase_normalize, self.linear_bottleneck)

    def relu_after(self, k: int) -> bool:
        """Whether the output of affine layer ``k`` passes through a ReLU."""
        if k >= len(self.weights) - 1:
            return False
        dims = self.layer_dims
        return not (self.linear_bottleneck and dims[k + 1] == min(dims[1:-1]))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Real forward pass on an (n, 2Q) batch."""
        h = x
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if self.relu_after(k):
                np.maximum(h, 0.0, out=h)
        return h


def default_layer_dims(q: int, hidden: int | None = None) -> list[int]:
    """``[2Q, h, 2Q // 4, h, 2Q]`` with ``h = Q`` unless given."""
    d_in = 2 * q
    h = d_in // 2 if hidden is None else hidden
    return [d_in, h, d_in // 4, h, d_in]


def init_model(layer_dims, seed: int, phase_normalize: bool = False,
               linear_bottleneck: bool = False) -> DaeModel:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d0, d1 in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(scale=np.sqrt(2.0 / d0), size=(d0, d1)))
        biases.append(np.zeros(d1))
    return DaeModel(weights, biases, phase_normalize, linear_bottleneck)


def center_biases(m: DaeModel, x: np.ndarray, target: np.ndarray) -> None:
    """Data-dependent bias init: zero-mean pre-activations on ``x``, output mean = target mean.

    Inputs are far from zero-mean (decaying, mostly in-phase signals), so with zero
    biases many ReLU units would be inactive for every atom from the first step.
    """
    h = x
    last = len(m.weights) - 1
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        pre = h @ w + b
        if k == last:
            b += target.mean(axis=0) - pre.mean(axis=0)
        else:
            b -= pre.mean(axis=0)
            h = h @ w + b
            if m.relu_after(k):
                h = np.maximum(h, 0.0)


def reference_phase(v: np.ndarray) -> np.ndarray:
    """exp(i * angle(sum over q)) per row of an (n, Q) complex array, as (n, 1)."""
    total = v.sum(axis=-1, keepdims=True)
    mag = np.abs(total)
    return np.where(mag > 0, total / np.where(mag > 0, mag, 1.0), 1.0)


def to_real(v: np.ndarray) -> np.ndarray:
    """(..., Q) complex -> (..., 2Q) real."""
    return np.concatenate([v.real, v.imag], axis=-1)


def to_complex(x: np.ndarray) -> np.ndarray:
    q = x.shape[-1] // 2
    return x[..., :q] + 1j * x[..., q:]


def loss_and_grads(m: DaeModel, x: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries of the batch, and its parameter gradients."""
    acts = [x]
    h = x
    last = len(m.weights) - 1
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w + b
        if m.relu_after(k):
            h = np.maximum(h, 0.0)
        acts.append(h)
    diff = acts[-1] - target
    loss = float(np.mean(diff * diff))

    delta = 2.0 * diff / diff.size
    gw = [None] * len(m.weights)
    gb = [None] * len(m.weights)
    for k in range(last, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ m.weights[k].T
            if m.relu_after(k - 1):
                delta *= acts[k] > 0
    return loss, gw, gb


def mse(m: DaeModel, x: np.ndarray, target: np.ndarray) -> float:
    diff = m.forward(x) - target
    return float(np.mean(diff * diff))


@dataclass
class TrainingConfig:
    noise_levels: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6)
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.003
    momentum: float = 0.9          # heavy-ball coefficient for SGD, beta1 for Adam
    optimizer: str = "adam"
    final_lr_fraction: float = 0.02
    validation_fraction: float = 0.1
    hidden: int | None = None
    phase_normalize: bool = True
    linear_bottleneck: bool = True
    center_init: bool = True       # data-dependent biases so ReLU units start active
    seed: int = 0

    def validate(self) -> "TrainingConfig":
        if any(s < 0 for s in self.noise_levels) or not self.noise_levels:
            raise ValueError("noise levels must be non-negative and non-empty")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ValueError("validation fraction must lie in (0, 0.5]")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid epochs, batch size or learning rate")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        return self


@dataclass
class TrainingReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    # noise level -> (mean input NRMSE, mean output NRMSE) on held-out atoms
    val_nrmse: dict[float, tuple[float, float]] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tl, vl) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                w.writerow([i, repr(tl), repr(vl)])


def add_relative_noise(atoms: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Complex Gaussian noise with per-atom sigma = level * RMS magnitude of that atom.

    ``atoms`` is (n, Q) complex; the variance is split evenly across real/imag parts.
    """
    rms = np.sqrt(np.mean(np.abs(atoms) ** 2, axis=1, keepdims=True))
    sigma = level * rms / np.sqrt(2.0)
    noise = rng.standard_normal(atoms.shape) + 1j * rng.standard_normal(atoms.shape)
    return atoms + sigma * noise


def nrmse(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-row ||est - ref|| / ||ref||."""
    return np.linalg.norm(est - ref, axis=-1) / np.linalg.norm(ref, axis=-1)


def split_atoms(z: Dictionary, validation_fraction: float, seed: int):
    """Seeded train/validation split of the dictionary columns, as (n, Q) rows."""
    atoms = z.atoms.T
    rng = np.random.default_rng(seed)
    perm = rng.permutation(atoms.shape[0])
    n_val = max(1, int(round(validation_fraction * atoms.shape[0])))
    return atoms[perm[n_val:]], atoms[perm[:n_val]]


def _training_pairs(m: DaeModel, atoms: np.ndarray, levels, rng):
    """Noisy inputs and clean targets (real-embedded) for every atom at every noise level."""
    noisy = np.concatenate([add_relative_noise(atoms, s, rng) for s in levels])
    clean = np.tile(atoms, (len(levels), 1))
    if m.phase_normalize:
        rot = reference_phase(noisy).conj()
        noisy, clean = noisy * rot, clean * rot
    return to_real(noisy), to_real(clean)


def train_dae(z: Dictionary, cfg: TrainingConfig) -> tuple[DaeModel, TrainingReport]:
    """Fit the autoencoder to map noisy atoms back to clean ones.

    Every epoch draws fresh noise for every training atom at every noise level.
    Mini-batch Adam (or SGD with heavy-ball momentum) under a cosine learning-rate schedule.
    Returns the checkpoint with the lowest validation loss.
    """
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(8)
    split_seed, init_seed = (int(s.generate_state(1)[0]) for s in seeds[:2])
    noise_rng = np.random.default_rng(seeds[2])
    shuffle_rng = np.random.default_rng(seeds[3])

    train, val = split_atoms(z, cfg.validation_fraction, split_seed)
    m = init_model(default_layer_dims(z.atoms.shape[0], cfg.hidden), init_seed,
                   cfg.phase_normalize, cfg.linear_bottleneck)
    if train.shape[0] < 10 * m.n_params:
        warnings.warn(f"{train.shape[0]} training atoms for {m.n_params} parameters; "
                      "consider a larger dictionary", RuntimeWarning, stacklevel=2)

    levels = list(cfg.noise_levels)
    val_rng = np.random.default_rng(seeds[4])
    val_x, val_t = _training_pairs(m, val, levels, val_rng)

    if cfg.center_init:
        center_biases(m, *_training_pairs(m, train, [0.0], np.random.default_rng(seeds[7])))

    report = TrainingReport()
    report.initial_val_loss = mse(m, val_x, val_t)
    init_x, init_t = _training_pairs(m, train, levels, np.random.default_rng(seeds[5]))
    report.initial_train_loss = mse(m, init_x, init_t)

    best, best_val = m.copy(), report.initial_val_loss
    params = m.weights + m.biases
    vel = [np.zeros_like(p) for p in params]
    sq = [np.zeros_like(p) for p in params]
    step = 0
    n = train.shape[0] * len(levels)
    for epoch in range(cfg.epochs):
        frac = epoch / max(cfg.epochs - 1, 1)
        lr = cfg.learning_rate * (cfg.final_lr_fraction
                                  + (1 - cfg.final_lr_fraction) * 0.5 * (1 + np.cos(np.pi * frac)))
        x, clean_t = _training_pairs(m, train, levels, noise_rng)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = loss_and_grads(m, x[idx], clean_t[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch + 1}")
            total += loss * idx.size
            step += 1
            for p, g, v, s2 in zip(params, gw + gb, vel, sq):
                if cfg.optimizer == "sgd":
                    v *= cfg.momentum
                    v -= lr * g
                    p += v
                else:
                    v *= cfg.momentum
                    v += (1 - cfg.momentum) * g
                    s2 *= _ADAM_BETA2
                    s2 += (1 - _ADAM_BETA2) * g * g
                    vhat = v / (1 - cfg.momentum ** step)
                    shat = s2 / (1 - _ADAM_BETA2 ** step)
                    p -= lr * vhat / (np.sqrt(shat) + _ADAM_EPS)
        train_loss = total / n
        val_loss = mse(m, val_x, val_t)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(f"training loss became non-finite at epoch {epoch + 1}")
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        if val_loss < best_val:
            best, best_val, report.best_epoch = m.copy(), val_loss, epoch + 1

    eval_rng = np.random.default_rng(seeds[6])
    for s in levels:
        noisy = add_relative_noise(val, s, eval_rng)
        out = denoise(best, noisy)
        report.val_nrmse[s] = (float(nrmse(noisy, val).mean()), float(nrmse(out, val).mean()))
    return best, report


def denoise(m: DaeModel, v: np.ndarray) -> np.ndarray:
    """Network output for one complex q-vector (Q,) or a batch (n, Q)."""
    v = np.asarray(v)
    if v.shape[-1] != m.q:
        raise ValueError(f"q-vector length {v.shape[-1]} does not match model Q={m.q}")
    batch = np.atleast_2d(v)
    if not m.phase_normalize:
        return to_complex(m.forward(to_real(batch))).reshape(v.shape)
    rot = reference_phase(batch)
    return (to_complex(m.forward(to_real(batch * rot.conj()))) * rot).reshape(v.shape)


def residual(m: DaeModel, v: np.ndarray) -> np.ndarray:
    """DAE error ``v - denoise(v)``; small on the learned signal manifold."""
    return v - denoise(m, v)


def denoise_stack(m: DaeModel, p: DwiStack, mask: np.ndarray | None = None) -> DwiStack:
    """Apply :func:`denoise` to every in-mask voxel's q-vector; other voxels pass through."""
    data = p.data
    if data.shape[0] != m.q:
        raise ValueError(f"stack has Q={data.shape[0]}, model expects Q={m.q}")
    mask = np.ones(data.shape[1:], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != data.shape[1:]:
        raise ValueError(f"mask {mask.shape} does not match image grid {data.shape[1:]}")
    out = data.copy()
    if mask.any():
        out[:, mask] = denoise(m, data[:, mask].T).T
    return DwiStack(out, p.scheme)


def gradient_check(m: DaeModel, z: Dictionary, step: float = 1e-4, max_atoms: int = 32) -> float:
    """Largest relative discrepancy between backprop and central finite differences.

    The loss is the clean autoencoding MSE on (up to ``max_atoms``) dictionary atoms.
    Discrepancy per parameter array is ``||g_bp - g_fd|| / (||g_bp|| + ||g_fd||)``
    (zero when both vanish).
    """
    x = to_real(z.atoms.T[:max_atoms])
    _, gw, gb = loss_and_grads(m, x, x)
    worst = 0.0
    for params, grads in ((m.weights, gw), (m.biases, gb)):
        for p, g in zip(params, grads):
            fd = np.zeros_like(p)
            flat, fd_flat = p.reshape(-1), fd.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                lp = mse(m, x, x)
                flat[i] = orig - step
                lm = mse(m, x, x)
                flat[i] = orig
                fd_flat[i] = (lp - lm) / (2.0 * step)
            denom = np.linalg.norm(g) + np.linalg.norm(fd)
            if denom > 0:
                worst = max(worst, float(np.linalg.norm(g - fd) / denom))
    return worst


def save_model(m: DaeModel, path) -> None:
    """Binary layout, little-endian: magic, uint32 flags, uint32 layer count, uint32 dims,
    then per layer W (row-major) and b as float64. Flag bit 0 marks phase normalization,
    bit 1 a linear bottleneck."""
    dims = m.layer_dims
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        flags = int(m.phase_normalize) | int(m.linear_bottleneck) << 1
        fh.write(struct.pack(f"<II{len(dims)}I", flags, len(dims), *dims))
        for w, b in zip(m.weights, m.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> DaeModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: not a DAE model file")
    off = len(MODEL_MAGIC)
    flags, n = struct.unpack_from("<II", raw, off)
    dims = list(struct.unpack_from(f"<{n}I", raw, off + 8))
    off += 8 + 4 * n
    weights, biases = [], []
    for d0, d1 in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=d0 * d1, offset=off).reshape(d0, d1)
        off += 8 * d0 * d1
        b = np.frombuffer(raw, dtype="<f8", count=d1, offset=off)
        off += 8 * d1
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return DaeModel(weights, biases, bool(flags & 1), bool(flags & 2))
