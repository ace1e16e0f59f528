"""Evaluation suite: PSNR, Lucas-Kanade grid tracking, motion-distribution
distance, correlation-peak distance, trajectory error, and occupancy-map IoU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .grid import FrameSequence, Heatmap, Trajectory, polar_to_cart, translate
from .xcorr import CorrMap, peak_displacement, xcorr2, xcorr2_values

__all__ = [
    "PointTrack",
    "MotionFeature",
    "ApeReport",
    "OccupancyGrid",
    "FvmdConfig",
    "psnr",
    "lk_flow",
    "track_grid",
    "motion_features",
    "gaussian_frechet",
    "fvmd",
    "peak_distance_metric",
    "ape",
    "rasterize_map",
    "map_iou",
]

# Validity floor on the smaller eigenvalue of the LK structure matrix.
LK_MIN_EIGENVALUE = 1e-6

HIST_BINS = 8
# Magnitude histograms are uniform on [0, 4] bins/frame with overflow in the top bin.
MAG_RANGE = 4.0


def psnr(pred: Heatmap, truth: Heatmap, cap: float = 100.0) -> float:
    """Peak signal-to-noise ratio in dB with unit peak; capped for mse -> 0."""
    if cap <= 0.0:
        raise ConfigError("cap must be positive")
    if pred.geometry != truth.geometry:
        raise ConfigError("heatmap geometries differ")
    d = pred.values.astype(np.float64) - truth.values.astype(np.float64)
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def _window_gradients(a: np.ndarray, b: np.ndarray):
    g_r, g_c = np.gradient(a)
    return g_r, g_c, b - a


def _flow_from_gradients(g_r, g_c, diff, point, window_radius):
    r, c = point
    wr = window_radius
    h, w = diff.shape
    if r - wr < 0 or c - wr < 0 or r + wr >= h or c + wr >= w:
        raise ConfigError(f"point {point} is closer than {wr} bins to the border")
    sl = (slice(r - wr, r + wr + 1), slice(c - wr, c + wr + 1))
    gr, gc, it = g_r[sl].ravel(), g_c[sl].ravel(), diff[sl].ravel()
    gxx = float(gr @ gr)
    gcc = float(gc @ gc)
    gxc = float(gr @ gc)
    trace = gxx + gcc
    det = gxx * gcc - gxc * gxc
    disc = max(trace * trace - 4.0 * det, 0.0)
    eig_min = 0.5 * (trace - math.sqrt(disc))
    if eig_min < LK_MIN_EIGENVALUE:
        return np.zeros(2), False
    rhs = -np.array([gr @ it, gc @ it])
    flow = np.linalg.solve(np.array([[gxx, gxc], [gxc, gcc]]), rhs)
    return flow, True


def lk_flow(a: Heatmap, b: Heatmap, point: tuple[int, int], window_radius: int):
    """Single-level Lucas-Kanade flow at one point.

    Solves the 2x2 least-squares system built from central-difference
    spatial gradients of `a` and the temporal difference (b - a) over a
    (2r+1)^2 window. Returns ((flow_row, flow_col), valid); blank or
    aperture-limited windows come back invalid.
    """
    if a.geometry != b.geometry:
        raise ConfigError("heatmap geometries differ")
    g_r, g_c, diff = _window_gradients(a.values.astype(np.float64), b.values.astype(np.float64))
    return _flow_from_gradients(g_r, g_c, diff, point, window_radius)


@dataclass
class PointTrack:
    """One tracked grid point; positions are fractional (row, col) bins."""

    start: tuple[int, int]
    positions: np.ndarray  # (n_frames, 2)
    valid: np.ndarray  # (n_frames,) bool

    def velocities(self) -> list[tuple[int, np.ndarray]]:
        """(step index, velocity) for steps with both endpoints valid."""
        out = []
        for t in range(len(self.valid) - 1):
            if self.valid[t] and self.valid[t + 1]:
                out.append((t, self.positions[t + 1] - self.positions[t]))
        return out


def track_grid(seq: FrameSequence, spacing: int, window_radius: int) -> list[PointTrack]:
    """Seed a regular lattice of points and propagate each with LK flow.

    A point that goes invalid (blank window, aperture problem) or drifts
    out of bounds stays invalid for all later frames.
    """
    if spacing < 1:
        raise ConfigError("spacing must be >= 1")
    h, w = seq.geometry.shape
    margin = window_radius + 1
    seeds = [
        (r, c)
        for r in range(margin, h - margin, spacing)
        for c in range(margin, w - margin, spacing)
    ]
    n = len(seq)
    tracks = []
    for seed in seeds:
        positions = np.zeros((n, 2))
        positions[0] = seed
        valid = np.zeros(n, dtype=bool)
        valid[0] = True
        tracks.append(PointTrack(seed, positions, valid))

    maps = seq.heatmaps
    for t in range(n - 1):
        g_r, g_c, diff = _window_gradients(
            maps[t].values.astype(np.float64), maps[t + 1].values.astype(np.float64)
        )
        for track in tracks:
            if not track.valid[t]:
                continue
            r = int(round(track.positions[t][0]))
            c = int(round(track.positions[t][1]))
            if r - window_radius < 1 or c - window_radius < 1 or r + window_radius >= h - 1 or c + window_radius >= w - 1:
                continue  # exited the trackable region; stays invalid
            flow, ok = _flow_from_gradients(g_r, g_c, diff, (r, c), window_radius)
            if not ok:
                continue
            track.positions[t + 1] = track.positions[t] + flow
            track.valid[t + 1] = True
    return tracks


@dataclass(frozen=True)
class MotionFeature:
    """Concatenated velocity/acceleration magnitude and angle histograms."""

    values: np.ndarray  # (32,)


def _histogram_block(samples: np.ndarray, kind: str) -> np.ndarray:
    if samples.size == 0:
        return np.zeros(HIST_BINS)
    if kind == "magnitude":
        idx = np.clip((samples / (MAG_RANGE / HIST_BINS)).astype(int), 0, HIST_BINS - 1)
    else:  # angle in (-pi, pi]
        idx = np.clip(((samples + math.pi) / (2.0 * math.pi / HIST_BINS)).astype(int), 0, HIST_BINS - 1)
    hist = np.bincount(idx, minlength=HIST_BINS).astype(np.float64)
    return hist / hist.sum()


def motion_features(tracks: list[PointTrack], window_len: int, stride: int) -> list[MotionFeature]:
    """Histogram the velocity/acceleration of all tracks per sliding window.

    Windows with no valid velocity sample at all are dropped.
    """
    if window_len < 3:
        raise ConfigError("window_len must be >= 3 to support accelerations")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if not tracks:
        return []
    n = len(tracks[0].valid)
    features = []
    for start in range(0, n - window_len + 1, stride):
        vels = []
        accs = []
        for track in tracks:
            steps = dict(track.velocities())
            for t in range(start, start + window_len - 1):
                if t in steps:
                    vels.append(steps[t])
                if t in steps and (t + 1) in steps and t + 1 < start + window_len - 1:
                    accs.append(steps[t + 1] - steps[t])
        if not vels:
            continue
        vels = np.array(vels)
        accs = np.array(accs) if accs else np.zeros((0, 2))
        vec = np.concatenate(
            [
                _histogram_block(np.hypot(vels[:, 0], vels[:, 1]), "magnitude"),
                _histogram_block(np.arctan2(vels[:, 1], vels[:, 0]), "angle"),
                _histogram_block(np.hypot(accs[:, 0], accs[:, 1]), "magnitude"),
                _histogram_block(np.arctan2(accs[:, 1], accs[:, 0]), "angle"),
            ]
        )
        features.append(MotionFeature(vec))
    return features


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def gaussian_frechet(mu1, cov1, mu2, cov2) -> float:
    """Squared Fréchet (2-Wasserstein) distance between two Gaussians."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    for cov in (cov1, cov2):
        if not np.all(np.isfinite(cov)):
            raise ConfigError("covariance must be finite")
        if not np.allclose(cov, cov.T, atol=1e-8):
            raise ConfigError("covariance must be symmetric")
    root1 = _sqrtm_psd(cov1)
    cross = _sqrtm_psd(root1 @ cov2 @ root1)
    d2 = float(np.sum((mu1 - mu2) ** 2) + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return max(0.0, d2)


@dataclass(frozen=True)
class FvmdConfig:
    spacing: int = 4
    window_radius: int = 2
    window_len: int = 5
    stride: int = 2

    def to_dict(self) -> dict:
        return {
            "spacing": self.spacing,
            "window_radius": self.window_radius,
            "window_len": self.window_len,
            "stride": self.stride,
        }


def fvmd(pred: FrameSequence, ref: FrameSequence, cfg: FvmdConfig = FvmdConfig()) -> float:
    """Fréchet distance between the motion-feature distributions of two
    sequences; lower means the predicted motion is more consistent with
    the reference."""
    min_frames = cfg.window_len + 2
    if len(pred) < min_frames or len(ref) < min_frames:
        raise DataError(f"fvmd needs at least {min_frames} frames per sequence")
    stats = []
    for seq in (pred, ref):
        tracks = track_grid(seq, cfg.spacing, cfg.window_radius)
        feats = motion_features(tracks, cfg.window_len, cfg.stride)
        if len(feats) < 2:
            raise DataError("insufficient motion-feature windows for fvmd")
        x = np.stack([f.values for f in feats])
        cov = np.cov(x, rowvar=False) + 1e-6 * np.eye(x.shape[1])
        stats.append((x.mean(axis=0), cov))
    (mu_p, cov_p), (mu_r, cov_r) = stats
    return gaussian_frechet(mu_p, cov_p, mu_r, cov_r)


def peak_distance_metric(pred: FrameSequence, ref: FrameSequence) -> float:
    """Mean distance between consecutive-frame displacement peaks of the
    predicted sequence and those of the reference sequence (bins)."""
    if len(pred) != len(ref):
        raise ConfigError("sequences must have equal length")
    if len(pred) < 2:
        raise ConfigError("need at least 2 frames")
    if pred.geometry != ref.geometry:
        raise ConfigError("sequences must share geometry")
    pm, rm = pred.heatmaps, ref.heatmaps
    dists = []
    for t in range(1, len(pm)):
        dp = peak_displacement(xcorr2(pm[t], pm[t - 1]))
        dr = peak_displacement(xcorr2(rm[t], rm[t - 1]))
        dists.append(math.hypot(dp.d_range - dr.d_range, dp.d_azimuth - dr.d_azimuth))
    return float(np.mean(dists))


@dataclass(frozen=True)
class ApeReport:
    rmse: float
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mean": self.mean, "std": self.std}


def ape(est: Trajectory, gt: Trajectory) -> ApeReport:
    """Per-pose Euclidean position error summary (population std)."""
    if len(est) != len(gt):
        raise ConfigError("trajectories must have equal length")
    if len(est) == 0:
        raise ConfigError("trajectories are empty")
    te, tg = np.array(est.timestamps), np.array(gt.timestamps)
    if np.max(np.abs(te - tg)) > 1e-9:
        raise ConfigError("trajectory timestamps do not match")
    err = np.linalg.norm(est.positions() - gt.positions(), axis=1)
    return ApeReport(
        rmse=float(np.sqrt(np.mean(err**2))),
        mean=float(np.mean(err)),
        std=float(np.std(err)),
    )


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean occupancy raster anchored at a world-frame origin."""

    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0.0:
            raise ConfigError("resolution must be positive")
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=bool))

    @property
    def occupied_count(self) -> int:
        return int(self.cells.sum())


def rasterize_map(seq: FrameSequence, traj: Trajectory, resolution: float, threshold: float) -> OccupancyGrid:
    """Union of the world points of all frames, rasterized to cells.

    Frames pair with trajectory poses by timestamp; this allows mapping
    with an estimated trajectory instead of the embedded ground truth.
    """
    if len(seq) != len(traj):
        raise ConfigError("sequence and trajectory lengths differ")
    ts, tt = np.array(seq.timestamps), np.array(traj.timestamps)
    if np.max(np.abs(ts - tt)) > 1e-9:
        raise ConfigError("sequence and trajectory timestamps do not match")
    pts = [polar_to_cart(f.heatmap, pose, threshold) for f, (_, pose) in zip(seq.frames, traj.poses)]
    pts = np.concatenate([p for p in pts if p.size], axis=0) if any(p.size for p in pts) else np.empty((0, 2))
    if pts.shape[0] == 0:
        return OccupancyGrid(resolution, (0.0, 0.0), np.zeros((0, 0), dtype=bool))
    ix = np.floor(pts[:, 0] / resolution).astype(np.int64)
    iy = np.floor(pts[:, 1] / resolution).astype(np.int64)
    x0, y0 = ix.min(), iy.min()
    cells = np.zeros((int(ix.max() - x0) + 1, int(iy.max() - y0) + 1), dtype=bool)
    cells[ix - x0, iy - y0] = True
    return OccupancyGrid(resolution, (float(x0) * resolution, float(y0) * resolution), cells)


def map_iou(a: OccupancyGrid, b: OccupancyGrid) -> float:
    """IoU of occupied cells after translation-only correlation alignment.

    Two empty grids compare as 1 (perfect agreement of blank runs).
    """
    if abs(a.resolution - b.resolution) > 1e-12:
        raise ConfigError("occupancy grids must share a resolution")
    if a.occupied_count == 0 and b.occupied_count == 0:
        return 1.0
    if a.occupied_count == 0 or b.occupied_count == 0:
        return 0.0
    # Paint both grids onto one canvas so their world origins line up.
    off_ax = round(a.origin[0] / a.resolution)
    off_ay = round(a.origin[1] / a.resolution)
    off_bx = round(b.origin[0] / b.resolution)
    off_by = round(b.origin[1] / b.resolution)
    x0, y0 = min(off_ax, off_bx), min(off_ay, off_by)
    nx = max(off_ax + a.cells.shape[0], off_bx + b.cells.shape[0]) - x0
    ny = max(off_ay + a.cells.shape[1], off_by + b.cells.shape[1]) - y0
    ca = np.zeros((nx, ny))
    cb = np.zeros((nx, ny))
    ca[off_ax - x0 : off_ax - x0 + a.cells.shape[0], off_ay - y0 : off_ay - y0 + a.cells.shape[1]] = a.cells
    cb[off_bx - x0 : off_bx - x0 + b.cells.shape[0], off_by - y0 : off_by - y0 + b.cells.shape[1]] = b.cells
    corr = CorrMap(xcorr2_values(ca, cb, "fft"))
    d = peak_displacement(corr)
    aligned_b = translate(cb, int(d.d_range), int(d.d_azimuth)) > 0.5
    occ_a = ca > 0.5
    inter = int(np.sum(occ_a & aligned_b))
    union = int(np.sum(occ_a | aligned_b))
    return inter / union if union else 1.0
