"""2D cross-correlation machinery: correlation maps, separable softmax,
KL divergence, the displacement-consistency loss, peak extraction, and a
correlation scan matcher that integrates displacements into a trajectory.

Correlation convention: the full zero-padded map has odd dimensions
(2H-1) x (2W-1); the entry at center + (dy, dx) is sum_ij a[i,j] * b[i-dy, j-dx].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import FrameSequence, Heatmap, SensorGeometry, Trajectory

__all__ = [
    "CorrMap",
    "ProbMap",
    "Displacement",
    "xcorr2",
    "xcorr2_values",
    "sep_softmax",
    "sep_softmax_values",
    "kl_div",
    "transform_loss",
    "peak_displacement",
    "scan_match_sequence",
]

KL_EPS = 1e-12


@dataclass(frozen=True)
class CorrMap:
    """Full cross-correlation surface with zero displacement at the center."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] % 2 == 0 or v.shape[1] % 2 == 0:
            raise ConfigError("correlation map must be 2D with odd dimensions")
        if not np.all(np.isfinite(v)):
            raise ConfigError("correlation map must be finite")
        object.__setattr__(self, "values", v)

    @property
    def center(self) -> tuple[int, int]:
        return (self.values.shape[0] // 2, self.values.shape[1] // 2)


@dataclass(frozen=True)
class ProbMap:
    """Probability distribution over displacements (same shape as its CorrMap)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.min() < 0.0:
            raise ConfigError("probabilities must be non-negative")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ConfigError("probabilities must sum to 1")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Displacement:
    d_range: float
    d_azimuth: float

    def magnitude(self) -> float:
        return float(np.hypot(self.d_range, self.d_azimuth))


def xcorr2_values(a: np.ndarray, b: np.ndarray, method: str = "fft") -> np.ndarray:
    """Full cross-correlation of two equal-shape 2D arrays.

    method "fft" uses zero-padded real FFTs; "direct" is time-domain
    summation (one matrix product per row lag).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ConfigError(f"arrays must share one 2D shape, got {a.shape} vs {b.shape}")
    h, w = a.shape
    if method == "fft":
        s0, s1 = 2 * h - 1, 2 * w - 1
        raw = np.fft.irfft2(np.fft.rfft2(a, (s0, s1)) * np.conj(np.fft.rfft2(b, (s0, s1))), (s0, s1))
        idx0 = np.arange(-(h - 1), h) % s0
        idx1 = np.arange(-(w - 1), w) % s1
        return raw[np.ix_(idx0, idx1)]
    if method == "direct":
        out = np.zeros((2 * h - 1, 2 * w - 1))
        jj, kk = np.meshgrid(np.arange(w), np.arange(w), indexing="ij")
        diag = (jj - kk + w - 1).ravel()  # P[j, k] contributes to dx = j - k
        for dy in range(-(h - 1), h):
            if dy >= 0:
                rows_a, rows_b = a[dy:, :], b[: h - dy, :]
            else:
                rows_a, rows_b = a[: h + dy, :], b[-dy:, :]
            p = rows_a.T @ rows_b  # P[j, k] = sum_i a[i, j] b[i - dy, k]
            out[dy + h - 1, :] = np.bincount(diag, weights=p.ravel(), minlength=2 * w - 1)
        return out
    raise ConfigError(f"unknown correlation method {method!r}")


def xcorr2(a: Heatmap, b: Heatmap, method: str = "fft") -> CorrMap:
    """Full zero-padded cross-correlation of two heatmaps."""
    if a.geometry != b.geometry:
        raise ConfigError("heatmap geometries differ")
    return CorrMap(xcorr2_values(a.values, b.values, method))


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sep_softmax_values(values: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Per-column softmax times per-row softmax, renormalized to sum 1."""
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    scaled = np.asarray(values, dtype=np.float64) / temperature
    prod = _softmax(scaled, axis=0) * _softmax(scaled, axis=1)
    return prod / prod.sum()


def sep_softmax(c: CorrMap, temperature: float = 1.0) -> ProbMap:
    """Separable 2D softmax of a correlation map; sharpens the dominant peak."""
    return ProbMap(sep_softmax_values(c.values, temperature))


def kl_div(p: ProbMap, q: ProbMap) -> float:
    """KL(p || q) in nats; q is floored at epsilon so the value stays finite
    and kl_div(p, p) is exactly 0. Terms with p = 0 contribute 0."""
    pv, qv = p.values, q.values
    if pv.shape != qv.shape:
        raise ConfigError("probability maps must share a shape")
    mask = pv > 0.0
    return float(np.sum(pv[mask] * np.log(pv[mask] / np.maximum(qv[mask], KL_EPS))))


def transform_loss(
    p_t: Heatmap,
    p_prev: Heatmap,
    l_t: Heatmap,
    l_prev: Heatmap,
    temperature: float = 1.0,
) -> float:
    """Displacement-consistency loss: KL between the displacement
    distribution of the reference pair and that of the predicted pair."""
    q_l = sep_softmax(xcorr2(l_t, l_prev), temperature)
    q_p = sep_softmax(xcorr2(p_t, p_prev), temperature)
    return kl_div(q_l, q_p)


def peak_displacement(c: CorrMap, subpixel: bool = False) -> Displacement:
    """Displacement of the correlation maximum from the map center.

    Ties are broken by smallest displacement magnitude, then smallest
    d_range, then smallest d_azimuth, so a flat map yields (0, 0). With
    subpixel=True each axis is refined by 3-point parabolic interpolation
    (skipped at map edges or on flat neighborhoods).
    """
    v = c.values
    cy, cx = c.center
    peak = v.max()
    if not np.isfinite(peak):
        raise ConfigError("correlation map has no finite maximum")
    rows, cols = np.nonzero(v == peak)
    dr = rows.astype(np.int64) - cy
    dc = cols.astype(np.int64) - cx
    order = np.lexsort((dc, dr, dr * dr + dc * dc))
    iy, ix = rows[order[0]], cols[order[0]]

    dy, dx = float(iy - cy), float(ix - cx)
    if subpixel:
        dy += _parabolic_offset(v[:, ix], iy)
        dx += _parabolic_offset(v[iy, :], ix)
    return Displacement(dy, dx)


def _parabolic_offset(line: np.ndarray, i: int) -> float:
    if i <= 0 or i >= line.size - 1:
        return 0.0
    denom = line[i - 1] - 2.0 * line[i] + line[i + 1]
    if denom >= 0.0:  # flat or non-concave neighborhood
        return 0.0
    # bounded by +-0.5 whenever i is the 1D argmax
    return float(0.5 * (line[i - 1] - line[i + 1]) / denom)


def scan_match_sequence(seq: FrameSequence, geom: SensorGeometry | None = None) -> Trajectory:
    """Estimate a trajectory by correlating consecutive frames.

    The per-pair displacement peak maps to robot motion: a range shift of
    d bins is d * max_range / H meters of forward translation, an azimuth
    shift of d bins is d * fov / W radians of heading change. Poses
    integrate in SE(2) from the first ground-truth pose.
    """
    if len(seq) < 2:
        raise ConfigError("scan matching needs at least 2 frames")
    geom = geom if geom is not None else seq.geometry
    if geom != seq.geometry:
        raise ConfigError("geometry does not match the sequence")
    h, w = geom.shape
    range_per_bin = geom.max_range_m / h
    rad_per_bin = geom.fov_rad / w

    pose = seq.frames[0].pose
    poses = [(seq.frames[0].timestamp, pose)]
    prev = seq.frames[0].heatmap
    for frame in seq.frames[1:]:
        d = peak_displacement(xcorr2(prev, frame.heatmap), subpixel=True)
        pose = pose.compose(d.d_range * range_per_bin, 0.0, d.d_azimuth * rad_per_bin)
        poses.append((frame.timestamp, pose))
        prev = frame.heatmap
    return Trajectory(poses)
