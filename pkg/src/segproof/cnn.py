"""The split-error classifier: a small convolutional network built on numpy.

Architecture: a stack of 3x3 valid convolutions (no padding), each followed
by ReLU, 2x2 max pooling (stride 2, floor) and dropout, then a ReLU dense
layer with dropout and a 2-way softmax. The default configuration
(input 4x75x75, filters 64/48/48/48, 512 dense units) has exactly 171,474
learnable parameters.

Forward, backward and the Nesterov-momentum trainer are implemented here
directly; convolutions run as im2col matrix products so the heavy lifting
stays inside BLAS. Large batches are processed in fixed micro-batches to
bound memory without changing results.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptBlob,
    EmptySet,
    EmptyTrainingSet,
    ShapeMismatch,
    VersionMismatch,
)
from .patches import TrainingSet, WeightedPatchSet, rotate_batch

MICRO_BATCH = 32
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CnnArch:
    input_hw: int = 75
    in_channels: int = 4
    conv_filters: tuple[int, ...] = (64, 48, 48, 48)
    kernel: int = 3
    dense_units: int = 512
    n_classes: int = 2
    dropout_conv: float = 0.2
    dropout_dense: float = 0.5

    def __post_init__(self) -> None:
        self.shapes()  # validates that every stage keeps a positive size

    def shapes(self) -> list[tuple[int, int, int]]:
        """(channels, height, width) after each conv+pool stage."""
        c, h, w = self.in_channels, self.input_hw, self.input_hw
        out = []
        for f in self.conv_filters:
            h, w = h - self.kernel + 1, w - self.kernel + 1
            if h < 1 or w < 1:
                raise ShapeMismatch(
                    f"input {self.input_hw} too small for {len(self.conv_filters)} "
                    f"conv/pool stages")
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ShapeMismatch(
                    f"input {self.input_hw} too small for {len(self.conv_filters)} "
                    f"conv/pool stages")
            c = f
            out.append((c, h, w))
        return out

    def flat_dim(self) -> int:
        c, h, w = self.shapes()[-1]
        return c * h * w

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes: list[tuple[int, ...]] = []
        c = self.in_channels
        for f in self.conv_filters:
            shapes.append((f, c, self.kernel, self.kernel))
            shapes.append((f,))
            c = f
        shapes.append((self.flat_dim(), self.dense_units))
        shapes.append((self.dense_units,))
        shapes.append((self.dense_units, self.n_classes))
        shapes.append((self.n_classes,))
        return shapes


def param_count(arch: CnnArch) -> int:
    """Total learnable scalars (weights plus biases in every layer)."""
    return sum(int(np.prod(s)) for s in arch.param_shapes())


@dataclass
class CnnWeights:
    arch: CnnArch
    params: list[np.ndarray]
    seed: int = 0
    epochs_trained: int = 0
    val_loss: float | None = None

    def copy(self) -> "CnnWeights":
        return CnnWeights(arch=self.arch, params=[p.copy() for p in self.params],
                          seed=self.seed, epochs_trained=self.epochs_trained,
                          val_loss=self.val_loss)


def init_weights(arch: CnnArch, seed: int, dtype=np.float32) -> CnnWeights:
    """Zero-mean normal weights scaled by 1/sqrt(fan-in); zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC44]))
    params: list[np.ndarray] = []
    for shape in arch.param_shapes():
        if len(shape) == 1:
            params.append(np.zeros(shape, dtype=dtype))
        else:
            fan_in = int(np.prod(shape[:-1])) if len(shape) == 2 else int(np.prod(shape[1:]))
            std = 1.0 / np.sqrt(fan_in)
            params.append(rng.normal(0.0, std, size=shape).astype(dtype))
    return CnnWeights(arch=arch, params=params, seed=seed)


@dataclass(frozen=True)
class TrainSchedule:
    lr_start: float = 0.03
    lr_end: float = 0.00001
    momentum_start: float = 0.9
    momentum_end: float = 0.999
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 50
    val_fraction: float = 0.25

    def __post_init__(self) -> None:
        if not (0.0 < self.lr_end <= self.lr_start):
            raise ValueError("need 0 < lr_end <= lr_start")
        if not (0.0 <= self.momentum_start <= self.momentum_end < 1.0):
            raise ValueError("need 0 <= momentum_start <= momentum_end < 1")

    def lr_at(self, epoch: int) -> float:
        if self.max_epochs <= 1:
            return self.lr_start
        t = min(epoch, self.max_epochs - 1) / (self.max_epochs - 1)
        return float(self.lr_start * (self.lr_end / self.lr_start) ** t)

    def momentum_at(self, epoch: int) -> float:
        if self.max_epochs <= 1:
            return self.momentum_start
        t = min(epoch, self.max_epochs - 1) / (self.max_epochs - 1)
        return float(self.momentum_start + (self.momentum_end - self.momentum_start) * t)


@dataclass
class TrainResult:
    weights: CnnWeights
    curve: list[dict]
    best_epoch: int
    stopped_epoch: int


# --- forward / backward -------------------------------------------------------

def _conv_cols(x: np.ndarray, k: int) -> np.ndarray:
    """im2col view of (N,C,H,W) -> (N, Ho*Wo, C*k*k), materialized."""
    n, c, h, w = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    ho, wo = h - k + 1, w - k + 1
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * k * k)


def _pool_forward(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """2x2 stride-2 floor max pool; returns (out, argmax, pre-pool hw)."""
    n, c, h, w = a.shape
    h2, w2 = h // 2, w // 2
    v = a[:, :, :h2 * 2, :w2 * 2].reshape(n, c, h2, 2, w2, 2)
    v = v.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = v.argmax(axis=-1)
    out = np.take_along_axis(v, arg[..., None], axis=-1)[..., 0]
    return out, arg.astype(np.uint8), (h, w)


def _pool_backward(g: np.ndarray, arg: np.ndarray, pre_hw: tuple[int, int]) -> np.ndarray:
    n, c, h2, w2 = g.shape
    h, w = pre_hw
    v = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
    np.put_along_axis(v, arg[..., None].astype(np.int64), g[..., None], axis=-1)
    v = v.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    out = np.zeros((n, c, h, w), dtype=g.dtype)
    out[:, :, :h2 * 2, :w2 * 2] = v.reshape(n, c, h2 * 2, w2 * 2)
    return out


def _check_input(arch: CnnArch, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != arch.in_channels \
            or x.shape[2] != arch.input_hw or x.shape[3] != arch.input_hw:
        raise ShapeMismatch(
            f"expected (N, {arch.in_channels}, {arch.input_hw}, {arch.input_hw}), "
            f"got {x.shape}")
    return x


def _forward_cache(params: list[np.ndarray], arch: CnnArch, x: np.ndarray,
                   dropout: bool, rng: np.random.Generator | None) -> tuple[np.ndarray, list]:
    """Returns (softmax probabilities, cache for the backward pass)."""
    k = arch.kernel
    dtype = params[0].dtype
    a = x.astype(dtype, copy=False)
    cache: list = []
    for i, f in enumerate(arch.conv_filters):
        wmat = params[2 * i].reshape(f, -1)
        b = params[2 * i + 1]
        cols = _conv_cols(a, k)
        n, p, _ = cols.shape
        z = cols @ wmat.T + b
        relu_mask = z > 0
        z *= relu_mask
        ho = a.shape[2] - k + 1
        act = z.reshape(n, ho, -1, f).transpose(0, 3, 1, 2)
        pooled, arg, pre_hw = _pool_forward(act)
        drop_mask = None
        if dropout and arch.dropout_conv > 0.0:
            keep = 1.0 - arch.dropout_conv
            drop_mask = (rng.random(pooled.shape) < keep).astype(dtype) / keep
            pooled = pooled * drop_mask
        cache.append((cols, relu_mask, arg, pre_hw, drop_mask, a.shape))
        a = pooled
    flat = a.reshape(a.shape[0], -1)
    w1, b1 = params[-4], params[-3]
    z1 = flat @ w1 + b1
    relu1 = z1 > 0
    a1 = z1 * relu1
    drop1 = None
    if dropout and arch.dropout_dense > 0.0:
        keep = 1.0 - arch.dropout_dense
        drop1 = (rng.random(a1.shape) < keep).astype(dtype) / keep
        a1 = a1 * drop1
    w2, b2 = params[-2], params[-1]
    z2 = a1 @ w2 + b2
    z2 = z2 - z2.max(axis=1, keepdims=True)
    e = np.exp(z2)
    probs = e / e.sum(axis=1, keepdims=True)
    cache.append((flat, relu1, a1, drop1, a.shape))
    return probs, cache


def _backward_from_cache(params: list[np.ndarray], arch: CnnArch,
                         probs: np.ndarray, targets: np.ndarray,
                         cache: list) -> list[np.ndarray]:
    """Gradient of the SUM of cross-entropies over the batch."""
    k = arch.kernel
    n = probs.shape[0]
    flat, relu1, a1, drop1, conv_out_shape = cache[-1]
    dz2 = probs.copy()
    dz2[np.arange(n), targets] -= 1.0

    w1, w2 = params[-4], params[-2]
    grads = [None] * len(params)
    grads[-1] = dz2.sum(axis=0)
    grads[-2] = a1.T @ dz2
    da1 = dz2 @ w2.T
    if drop1 is not None:
        da1 = da1 * drop1
    dz1 = da1 * relu1
    grads[-3] = dz1.sum(axis=0)
    grads[-4] = flat.T @ dz1
    g = (dz1 @ w1.T).reshape(conv_out_shape)

    for i in range(len(arch.conv_filters) - 1, -1, -1):
        cols, relu_mask, arg, pre_hw, drop_mask, in_shape = cache[i]
        f = arch.conv_filters[i]
        if drop_mask is not None:
            g = g * drop_mask
        g = _pool_backward(g, arg, pre_hw)
        # back to the im2col layout: (N, F, Ho, Wo) -> (N*Ho*Wo, F)
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        g2 = g2 * relu_mask.reshape(-1, f)
        cols2 = cols.reshape(-1, cols.shape[-1])
        grads[2 * i] = (g2.T @ cols2).reshape(params[2 * i].shape)
        grads[2 * i + 1] = g2.sum(axis=0)
        if i > 0:
            wmat = params[2 * i].reshape(f, -1)
            dcols = (g2 @ wmat).reshape(cols.shape)
            n_, ho, wo = in_shape[0], in_shape[2] - k + 1, in_shape[3] - k + 1
            dcols = dcols.reshape(n_, ho, wo, in_shape[1], k, k)
            dx = np.zeros(in_shape, dtype=g.dtype)
            for ky in range(k):
                for kx in range(k):
                    dx[:, :, ky:ky + ho, kx:kx + wo] += \
                        dcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
            g = dx
    return grads


def forward(weights: CnnWeights, batch: np.ndarray, dropout: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities (N, n_classes); deterministic with dropout off.

    Inference chunks are zero-padded to a fixed micro-batch so every matrix
    product has identical shape regardless of how callers group their
    patches; BLAS summation order, and therefore every score bit, then
    depends only on the sample itself.
    """
    x = _check_input(weights.arch, batch)
    if dropout and rng is None:
        rng = np.random.default_rng(weights.seed)
    out = np.empty((x.shape[0], weights.arch.n_classes), dtype=np.float64)
    for lo in range(0, x.shape[0], MICRO_BATCH):
        chunk = x[lo:lo + MICRO_BATCH]
        n = chunk.shape[0]
        if n < MICRO_BATCH and not dropout:
            pad = np.zeros((MICRO_BATCH - n,) + chunk.shape[1:], chunk.dtype)
            chunk = np.concatenate([chunk, pad], axis=0)
        probs, _ = _forward_cache(weights.params, weights.arch,
                                  chunk, dropout, rng)
        out[lo:lo + MICRO_BATCH] = probs[:n]
    return out


def backward(weights: CnnWeights, batch: np.ndarray,
             targets: np.ndarray) -> list[np.ndarray]:
    """Gradients of the mean cross-entropy, same shapes as the parameters."""
    x = _check_input(weights.arch, batch)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape[0] != x.shape[0]:
        raise ShapeMismatch("batch and targets differ in length")
    grads, _ = _accumulate_grads(weights.params, weights.arch, x, targets,
                                 dropout=False, rng=None)
    n = x.shape[0]
    return [g / n for g in grads]


def _accumulate_grads(params, arch, x, targets, dropout, rng):
    """Sum-of-CE gradients and loss over the batch, micro-batched."""
    grads = [np.zeros_like(p) for p in params]
    loss_sum = 0.0
    for lo in range(0, x.shape[0], MICRO_BATCH):
        xb = x[lo:lo + MICRO_BATCH]
        tb = targets[lo:lo + MICRO_BATCH]
        probs, cache = _forward_cache(params, arch, xb, dropout, rng)
        picked = np.clip(probs[np.arange(len(tb)), tb], 1e-12, None)
        loss_sum += float(-np.log(picked).sum())
        for g, gi in zip(grads, _backward_from_cache(params, arch, probs, tb, cache)):
            g += gi
    return grads, loss_sum


def mean_loss(weights: CnnWeights, x: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy with dropout off."""
    probs = forward(weights, x)
    picked = np.clip(probs[np.arange(len(targets)), targets], 1e-12, None)
    return float(-np.log(picked).mean())


def train(training_set: TrainingSet, schedule: TrainSchedule, rng_seed: int,
          arch: CnnArch | None = None, log=None) -> TrainResult:
    """Nesterov-momentum SGD with per-epoch validation re-selection.

    Every epoch re-draws a random quarter of the data for validation,
    shuffles the remainder into mini-batches, rotates each mini-batch by a
    random multiple of 90 degrees, and steps with the scheduled learning rate
    (geometric decay) and momentum (linear ramp). Training stops once the
    best validation loss has not improved for `patience` epochs; the
    best-validation weights are returned.
    """
    x_all, y_all = training_set.as_arrays()
    n = x_all.shape[0]
    if n == 0:
        raise EmptyTrainingSet("training set has no patches")
    if arch is None:
        arch = CnnArch(input_hw=x_all.shape[-1])
    x_all = _check_input(arch, x_all).astype(np.float32)

    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 0x7247]))
    weights = init_weights(arch, seed=rng_seed)
    velocity = [np.zeros_like(p) for p in weights.params]

    best = weights.copy()
    best_val = np.inf
    best_epoch = -1
    curve: list[dict] = []
    epoch = 0
    for epoch in range(schedule.max_epochs):
        lr = schedule.lr_at(epoch)
        mu = schedule.momentum_at(epoch)
        perm = rng.permutation(n)
        n_val = int(round(n * schedule.val_fraction))
        n_val = min(max(n_val, 1), n - 1) if n > 1 else 0
        val_idx, tr_idx = perm[:n_val], perm[n_val:]

        train_loss_sum = 0.0
        for lo in range(0, len(tr_idx), schedule.batch_size):
            idx = tr_idx[lo:lo + schedule.batch_size]
            k = int(rng.integers(0, 4))
            xb = rotate_batch(x_all[idx], k)
            yb = y_all[idx]
            lookahead = [p + mu * v for p, v in zip(weights.params, velocity)]
            grads, loss_sum = _accumulate_grads(lookahead, arch, xb, yb,
                                                dropout=True, rng=rng)
            m = len(idx)
            train_loss_sum += loss_sum
            for p, v, g in zip(weights.params, velocity, grads):
                v *= mu
                v -= lr * (g / m).astype(p.dtype)
                p += v

        val_loss = mean_loss(weights, x_all[val_idx], y_all[val_idx]) \
            if n_val else float("nan")
        train_loss = train_loss_sum / max(len(tr_idx), 1)
        curve.append({"epoch": epoch, "train_loss": train_loss,
                      "val_loss": val_loss, "lr": lr, "momentum": mu})
        if log is not None:
            log(curve[-1])
        if n_val and val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best = weights.copy()
        if best_epoch >= 0 and epoch - best_epoch >= schedule.patience:
            break

    if best_epoch < 0:  # no validation happened (single-sample set)
        best = weights.copy()
        best_val = float("nan")
        best_epoch = epoch
    best.seed = rng_seed
    best.epochs_trained = epoch + 1
    best.val_loss = None if np.isnan(best_val) else float(best_val)
    return TrainResult(weights=best, curve=curve, best_epoch=best_epoch,
                       stopped_epoch=epoch)


# --- scoring -------------------------------------------------------------------

def score_boundary(weights: CnnWeights, patch_set: WeightedPatchSet) -> float:
    """Coverage-weighted mean split-error probability of one boundary."""
    if not patch_set.patches:
        raise EmptySet("cannot score an empty patch set")
    probs = forward(weights, patch_set.stack())
    return float(np.dot(patch_set.weights, probs[:, 1]))


def score_patch_sets(weights: CnnWeights, sets: list[WeightedPatchSet]) -> list[float]:
    """Batch version of score_boundary across many boundaries."""
    if not sets:
        return []
    for s in sets:
        if not s.patches:
            raise EmptySet("cannot score an empty patch set")
    stacked = np.concatenate([s.stack() for s in sets], axis=0)
    probs = forward(weights, stacked)[:, 1]
    out: list[float] = []
    at = 0
    for s in sets:
        m = len(s.patches)
        out.append(float(np.dot(s.weights, probs[at:at + m])))
        at += m
    return out


# --- checkpoints -----------------------------------------------------------------

def save_checkpoint(weights: CnnWeights, path: str | Path) -> None:
    """UTF-8 JSON header line, newline, then raw f32-LE parameters in order."""
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": asdict(weights.arch),
        "seed": weights.seed,
        "epochs": weights.epochs_trained,
        "val_loss": weights.val_loss,
    }
    blob = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes()
                    for p in weights.params)
    Path(path).write_bytes(json.dumps(header).encode("utf-8") + b"\n" + blob)


def load_checkpoint(path: str | Path) -> CnnWeights:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CorruptBlob(f"{path}: no header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptBlob(f"{path}: unreadable header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"{path}: checkpoint version {header.get('version')!r}, "
            f"expected {CHECKPOINT_VERSION}")
    arch_doc = dict(header["arch"])
    arch_doc["conv_filters"] = tuple(arch_doc["conv_filters"])
    arch = CnnArch(**arch_doc)
    blob = raw[nl + 1:]
    expected = 4 * param_count(arch)
    if len(blob) != expected:
        raise CorruptBlob(
            f"{path}: parameter blob is {len(blob)} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype="<f4")
    params: list[np.ndarray] = []
    at = 0
    for shape in arch.param_shapes():
        size = int(np.prod(shape))
        params.append(flat[at:at + size].reshape(shape).copy())
        at += size
    return CnnWeights(arch=arch, params=params, seed=int(header.get("seed", 0)),
                      epochs_trained=int(header.get("epochs", 0)),
                      val_loss=header.get("val_loss"))
