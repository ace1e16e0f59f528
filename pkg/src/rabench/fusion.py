"""Proxy latent space and temporal fusion.

The encoder is deterministic block-average pooling with L2 normalization,
the decoder its nearest-neighbor inverse; both stand in for trained
networks so that the temporal losses and the windowed fusion module can
be exercised causally. The fusion kernel is a small time-by-space
convolution trained by finite-difference gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .grid import Heatmap, SensorGeometry, translate
from .xcorr import kl_div, sep_softmax, xcorr2

__all__ = [
    "Embedding",
    "FusionKernel",
    "LossWeights",
    "embed",
    "decode",
    "cosine_sim",
    "temporal_sim_loss",
    "infonce",
    "infonce_modified",
    "window_average",
    "temporal_conv_fuse",
    "combined_loss",
    "train_fusion",
    "fd_gradient",
]

POOLED_H = 8
POOLED_W = 8

# Row-major offsets of the 3x3 spatial taps of the fusion kernel.
TAP_OFFSETS = [(du, dv) for du in (-1, 0, 1) for dv in (-1, 0, 1)]
CENTER_TAP = TAP_OFFSETS.index((0, 0))


@dataclass(frozen=True)
class Embedding:
    """Unit-norm feature vector over a pooled spatial grid."""

    values: np.ndarray
    pooled_shape: tuple[int, int] = (POOLED_H, POOLED_W)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        ph, pw = self.pooled_shape
        if v.shape != (ph * pw,):
            raise ConfigError(f"embedding length {v.shape} does not match pooled shape {self.pooled_shape}")
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ConfigError("embedding must be L2-normalized")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.pooled_shape)


def _sentinel(pooled_shape: tuple[int, int]) -> Embedding:
    v = np.zeros(pooled_shape[0] * pooled_shape[1])
    v[0] = 1.0
    return Embedding(v, pooled_shape)


def _normalized(vec: np.ndarray, pooled_shape: tuple[int, int]) -> Embedding:
    n = np.linalg.norm(vec)
    if n < 1e-12:
        return _sentinel(pooled_shape)
    return Embedding(vec / n, pooled_shape)


def _block_edges(n: int, blocks: int) -> np.ndarray:
    return (np.arange(blocks + 1) * n) // blocks


def _block_pool(values: np.ndarray, ph: int, pw: int) -> np.ndarray:
    h, w = values.shape
    re = _block_edges(h, ph)
    ce = _block_edges(w, pw)
    sums = np.add.reduceat(np.add.reduceat(values, re[:-1], axis=0), ce[:-1], axis=1)
    counts = np.outer(np.diff(re), np.diff(ce))
    return sums / counts


def _block_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    ph, pw = grid.shape
    out = np.repeat(grid, np.diff(_block_edges(h, ph)), axis=0)
    return np.repeat(out, np.diff(_block_edges(w, pw)), axis=1)


def embed(h: Heatmap, pooled_h: int = POOLED_H, pooled_w: int = POOLED_W) -> Embedding:
    """Block-average pool, flatten row-major, L2-normalize.

    An all-zero heatmap maps to the first-basis-vector sentinel so that
    cosine similarities stay defined for blank frames.
    """
    if pooled_h > h.shape[0] or pooled_w > h.shape[1]:
        raise ConfigError("pooled grid cannot exceed the heatmap grid")
    pooled = _block_pool(h.values.astype(np.float64), pooled_h, pooled_w)
    return _normalized(pooled.ravel(), (pooled_h, pooled_w))


def decode(e: Embedding, geom: SensorGeometry) -> Heatmap:
    """Nearest-neighbor upsample of the pooled grid back to sensor resolution.

    Intensities rescale linearly so the maximum becomes
    min(1, pooled_max * sqrt(D)); negative cells clamp to zero.
    """
    grid = e.grid()
    m = grid.max()
    if m <= 0.0:
        return Heatmap.zeros(geom)
    scale = min(1.0, m * math.sqrt(e.dim)) / m
    up = _block_upsample(grid * scale, geom.n_range_bins, geom.n_azimuth_bins)
    return Heatmap(geom, np.clip(up, 0.0, 1.0))


def cosine_sim(a: Embedding, b: Embedding) -> float:
    return float(np.clip(np.dot(a.values, b.values), -1.0, 1.0))


def temporal_sim_loss(embeds: list[Embedding]) -> float:
    """Mean over consecutive pairs of (1 - cosine similarity); in [0, 2]."""
    if len(embeds) < 2:
        raise ConfigError("temporal similarity needs at least 2 embeddings")
    sims = [cosine_sim(a, b) for a, b in zip(embeds, embeds[1:])]
    return float(np.mean([1.0 - s for s in sims]))


def _sim_matrix(anchors: list[Embedding], positives: list[Embedding]) -> np.ndarray:
    a = np.stack([e.values for e in anchors])
    p = np.stack([e.values for e in positives])
    return a @ p.T


def infonce(anchors: list[Embedding], positives: list[Embedding], temperature: float) -> float:
    """Contrastive loss over matched pairs with in-batch negatives."""
    if not anchors or len(anchors) != len(positives):
        raise ConfigError("anchors and positives must be non-empty and equal length")
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    s = _sim_matrix(anchors, positives) / temperature
    z = s - s.max(axis=1, keepdims=True)
    log_den = np.log(np.exp(z).sum(axis=1)) + s.max(axis=1)
    return float(np.mean(log_den - np.diag(s)))


def infonce_modified(
    anchors: list[Embedding],
    positives: list[Embedding],
    temperature: float,
    neighbor_weights: np.ndarray,
) -> float:
    """InfoNCE with per-pair denominator weights in [0, 1].

    Weights below 1 soften the penalty on temporally or spatially close
    negatives; unit weights reduce to plain infonce.
    """
    if not anchors or len(anchors) != len(positives):
        raise ConfigError("anchors and positives must be non-empty and equal length")
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    w = np.asarray(neighbor_weights, dtype=np.float64)
    n = len(anchors)
    if w.shape != (n, n):
        raise ConfigError(f"neighbor_weights must be {n}x{n}")
    if w.min() < 0.0 or w.max() > 1.0:
        raise ConfigError("neighbor_weights entries must lie in [0, 1]")
    if not np.allclose(np.diag(w), 1.0, atol=0.0):
        raise ConfigError("neighbor_weights diagonal must be 1")
    s = _sim_matrix(anchors, positives) / temperature
    m = s.max(axis=1, keepdims=True)
    log_den = np.log((w * np.exp(s - m)).sum(axis=1)) + m[:, 0]
    return float(np.mean(log_den - np.diag(s)))


def window_average(embeds: list[Embedding]) -> Embedding:
    """Componentwise sum re-normalized; a zero sum yields the sentinel."""
    if not embeds:
        raise ConfigError("window must contain at least one embedding")
    total = np.sum([e.values for e in embeds], axis=0)
    return _normalized(total, embeds[0].pooled_shape)


@dataclass(frozen=True)
class FusionKernel:
    """Time-by-space fusion weights: one 3x3 spatial tap set per window slot."""

    weights: np.ndarray  # (T, 9)
    bias: np.ndarray  # (D,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] != len(TAP_OFFSETS):
            raise ConfigError(f"weights must be (T, {len(TAP_OFFSETS)}) with T >= 1")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigError("kernel parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def window(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def identity(cls, window: int, dim: int = POOLED_H * POOLED_W) -> "FusionKernel":
        w = np.zeros((window, len(TAP_OFFSETS)))
        w[window - 1, CENTER_TAP] = 1.0
        return cls(w, np.zeros(dim))

    @classmethod
    def average(cls, window: int, dim: int = POOLED_H * POOLED_W) -> "FusionKernel":
        w = np.zeros((window, len(TAP_OFFSETS)))
        w[:, CENTER_TAP] = 1.0 / window
        return cls(w, np.zeros(dim))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def from_flat(self, params: np.ndarray) -> "FusionKernel":
        nw = self.weights.size
        return FusionKernel(params[:nw].reshape(self.weights.shape), params[nw:].copy())


def temporal_conv_fuse(embeds: list[Embedding], kernel: FusionKernel) -> Embedding:
    """Fuse a window of embeddings with a kernel over time and 3x3 space.

    Output cell (u, v) accumulates weights[t][tap] * input_t[u+du, v+dv]
    with zero spatial padding, plus a per-cell bias; the result is
    re-normalized.
    """
    if len(embeds) != kernel.window:
        raise ConfigError(f"window length {len(embeds)} does not match kernel window {kernel.window}")
    pooled_shape = embeds[0].pooled_shape
    if kernel.bias.size != pooled_shape[0] * pooled_shape[1]:
        raise ConfigError("kernel bias length does not match embedding dimension")
    acc = kernel.bias.reshape(pooled_shape).copy()
    for t, e in enumerate(embeds):
        grid = e.grid()
        for tap, (du, dv) in enumerate(TAP_OFFSETS):
            wgt = kernel.weights[t, tap]
            if wgt == 0.0:
                continue
            # out[u, v] += w * in[u + du, v + dv]  == content shifted by (-du, -dv)
            acc += wgt * translate(grid, -du, -dv)
    return _normalized(acc.ravel(), pooled_shape)


@dataclass(frozen=True)
class LossWeights:
    w_sim: float = 1.0
    w_nce: float = 1.0
    w_t: float = 1.0
    nce_temperature: float = 0.5

    def __post_init__(self):
        if min(self.w_sim, self.w_nce, self.w_t) < 0.0:
            raise ConfigError("loss weights must be >= 0")
        if max(self.w_sim, self.w_nce, self.w_t) <= 0.0:
            raise ConfigError("at least one loss weight must be positive")
        if self.nce_temperature <= 0.0:
            raise ConfigError("nce_temperature must be positive")

    def to_dict(self) -> dict:
        return {
            "w_sim": self.w_sim,
            "w_nce": self.w_nce,
            "w_t": self.w_t,
            "nce_temperature": self.nce_temperature,
        }


def _fused_windows(pred_embeds: list[Embedding], kernel: FusionKernel) -> list[Embedding]:
    t = kernel.window
    return [temporal_conv_fuse(pred_embeds[k - t + 1 : k + 1], kernel) for k in range(t - 1, len(pred_embeds))]


def combined_loss(
    pred_frames: list[Heatmap],
    truth_frames: list[Heatmap],
    kernel: FusionKernel,
    lw: LossWeights,
    transform_temperature: float = 1.0,
    pooled_shape: tuple[int, int] = (POOLED_H, POOLED_W),
) -> float:
    """Weighted sum of the contrastive, temporal-similarity, and
    displacement-consistency losses over one window of frames.

    pred_frames of length L >= kernel.window yield L - window + 1 fused
    embeddings; the similarity and displacement terms need at least two of
    them and contribute 0 otherwise.
    """
    t = kernel.window
    if len(pred_frames) != len(truth_frames):
        raise ConfigError("prediction and ground-truth windows are misaligned")
    if len(pred_frames) < t:
        raise ConfigError(f"need at least {t} frames for kernel window {t}")
    geom = pred_frames[0].geometry
    ph, pw = pooled_shape
    pred_embeds = [embed(p, ph, pw) for p in pred_frames]
    fused = _fused_windows(pred_embeds, kernel)
    truth_embeds = [embed(l, ph, pw) for l in truth_frames[t - 1 :]]

    total = 0.0
    if lw.w_nce > 0.0:
        total += lw.w_nce * infonce(fused, truth_embeds, lw.nce_temperature)
    if lw.w_sim > 0.0 and len(fused) >= 2:
        total += lw.w_sim * temporal_sim_loss(fused)
    if lw.w_t > 0.0 and len(fused) >= 2:
        decoded = [decode(f, geom) for f in fused]
        terms = [
            transform_loss(decoded[k], decoded[k - 1], truth_frames[t - 1 + k], truth_frames[t - 2 + k], transform_temperature)
            for k in range(1, len(fused))
        ]
        total += lw.w_t * float(np.mean(terms))
    if not np.isfinite(total):
        raise DataError("combined loss is not finite")
    return float(total)


class _TrainingObjective:
    """Mean combined loss over a dataset, with the kernel-independent parts
    (input embeddings, ground-truth embeddings, reference displacement
    distributions) computed once."""

    def __init__(self, dataset, lw: LossWeights, window: int, transform_temperature: float,
                 pooled_shape: tuple[int, int] = (POOLED_H, POOLED_W)):
        if not dataset:
            raise ConfigError("training dataset must be non-empty")
        self.lw = lw
        self.window = window
        self.tt = transform_temperature
        self.items = []
        ph, pw = pooled_shape
        for pred_frames, truth_frames in dataset:
            if len(pred_frames) != len(truth_frames):
                raise ConfigError("prediction and ground-truth windows are misaligned")
            if len(pred_frames) < window:
                raise ConfigError(f"dataset item shorter than the kernel window {window}")
            geom = pred_frames[0].geometry
            pred_embeds = [embed(p, ph, pw) for p in pred_frames]
            truth_embeds = [embed(l, ph, pw) for l in truth_frames[window - 1 :]]
            q_l = [
                sep_softmax(xcorr2(truth_frames[window - 1 + k], truth_frames[window - 2 + k]), self.tt)
                for k in range(1, len(pred_frames) - window + 1)
            ]
            self.items.append((geom, pred_embeds, truth_embeds, q_l))

    def item_loss(self, kernel: FusionKernel, item) -> float:
        geom, pred_embeds, truth_embeds, q_l = item
        fused = _fused_windows(pred_embeds, kernel)
        total = 0.0
        if self.lw.w_nce > 0.0:
            total += self.lw.w_nce * infonce(fused, truth_embeds, self.lw.nce_temperature)
        if self.lw.w_sim > 0.0 and len(fused) >= 2:
            total += self.lw.w_sim * temporal_sim_loss(fused)
        if self.lw.w_t > 0.0 and len(fused) >= 2:
            decoded = [decode(f, geom) for f in fused]
            terms = [
                kl_div(q_l[k - 1], sep_softmax(xcorr2(decoded[k], decoded[k - 1]), self.tt))
                for k in range(1, len(fused))
            ]
            total += self.lw.w_t * float(np.mean(terms))
        return total

    def __call__(self, kernel: FusionKernel) -> float:
        return float(np.mean([self.item_loss(kernel, item) for item in self.items]))


def fd_gradient(loss_fn, kernel: FusionKernel, eps: float) -> np.ndarray:
    """Central finite-difference gradient of loss_fn over all kernel params."""
    theta = kernel.flat()
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        step = np.zeros_like(theta)
        step[k] = eps
        grad[k] = (loss_fn(kernel.from_flat(theta + step)) - loss_fn(kernel.from_flat(theta - step))) / (2.0 * eps)
    return grad


def train_fusion(
    dataset,
    init: FusionKernel,
    lw: LossWeights,
    steps: int,
    step_size: float = 0.05,
    fd_epsilon: float = 1e-4,
    transform_temperature: float = 1.0,
    pooled_shape: tuple[int, int] = (POOLED_H, POOLED_W),
) -> FusionKernel:
    """Finite-difference gradient descent on the combined loss.

    A step is accepted only when it lowers the mean batch loss; otherwise
    the step size halves, and after 10 consecutive halvings training stops.
    The returned kernel never has higher mean loss than the initial one.

    dataset: list of (degraded frame window, aligned ground-truth frames).
    """
    if step_size <= 0.0 or fd_epsilon <= 0.0:
        raise ConfigError("step_size and fd_epsilon must be positive")
    objective = _TrainingObjective(dataset, lw, init.window, transform_temperature, pooled_shape)
    kernel = init
    loss = objective(kernel)
    if not np.isfinite(loss):
        raise DataError("combined loss is not finite at the initial kernel")
    for _ in range(int(steps)):
        grad = fd_gradient(objective, kernel, fd_epsilon)
        accepted = False
        for _halving in range(11):  # initial try plus up to 10 halvings
            candidate = kernel.from_flat(kernel.flat() - step_size * grad)
            cand_loss = objective(candidate)
            if np.isfinite(cand_loss) and cand_loss < loss:
                kernel, loss = candidate, cand_loss
                accepted = True
                break
            step_size *= 0.5
        if not accepted:
            break
    return kernel
