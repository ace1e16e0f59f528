"""Core grid, pose, and sequence types shared by all pipeline stages.

Conventions fixed here and relied on everywhere else:
  * heatmap rows index range bins, columns index azimuth bins
  * bin centers sit at (index + 0.5) so range 0 never maps to a point
  * intensities live in [0, 1] and are stored as float32 so that the raw
    on-disk frame format round-trips bit-exactly
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "SensorGeometry",
    "Heatmap",
    "Pose2D",
    "FrameSequence",
    "Trajectory",
    "polar_to_cart",
    "heatmap_mse",
    "translate",
]


@dataclass(frozen=True)
class SensorGeometry:
    """Field of view and grid resolution of the range-azimuth sensor."""

    azimuth_fov_deg: float = 100.0
    max_range_m: float = 5.0
    n_range_bins: int = 64
    n_azimuth_bins: int = 64

    def __post_init__(self):
        if not 0.0 < self.azimuth_fov_deg <= 360.0:
            raise ConfigError(f"azimuth_fov_deg must be in (0, 360], got {self.azimuth_fov_deg}")
        if self.max_range_m <= 0.0:
            raise ConfigError(f"max_range_m must be positive, got {self.max_range_m}")
        if self.n_range_bins < 8 or self.n_azimuth_bins < 8:
            raise ConfigError("grid must be at least 8x8 bins")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_range_bins, self.n_azimuth_bins)

    @property
    def fov_rad(self) -> float:
        return math.radians(self.azimuth_fov_deg)

    def range_of_row(self, row) -> float:
        """Range (m) of a row's bin center."""
        return (np.asarray(row) + 0.5) * self.max_range_m / self.n_range_bins

    def azimuth_of_col(self, col) -> float:
        """Azimuth (rad, relative to the sensor axis) of a column's bin center."""
        fov = self.fov_rad
        return -fov / 2.0 + (np.asarray(col) + 0.5) * fov / self.n_azimuth_bins

    def to_dict(self) -> dict:
        return {
            "azimuth_fov_deg": self.azimuth_fov_deg,
            "max_range_m": self.max_range_m,
            "n_range_bins": self.n_range_bins,
            "n_azimuth_bins": self.n_azimuth_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorGeometry":
        return cls(
            azimuth_fov_deg=float(d["azimuth_fov_deg"]),
            max_range_m=float(d["max_range_m"]),
            n_range_bins=int(d["n_range_bins"]),
            n_azimuth_bins=int(d["n_azimuth_bins"]),
        )


class Heatmap:
    """Immutable H x W grid of intensities in [0, 1] over (range, azimuth)."""

    __slots__ = ("geometry", "values")

    def __init__(self, geometry: SensorGeometry, values):
        arr = np.asarray(values, dtype=np.float32)
        if arr.shape != geometry.shape:
            raise ConfigError(f"values shape {arr.shape} does not match geometry {geometry.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("heatmap values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ConfigError("heatmap values must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Heatmap is immutable")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def zeros(cls, geometry: SensorGeometry) -> "Heatmap":
        return cls(geometry, np.zeros(geometry.shape, dtype=np.float32))


@dataclass(frozen=True)
class Pose2D:
    """SE(2) pose in world coordinates; theta normalized to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        t = float(self.theta) % (2.0 * math.pi)
        if t > math.pi:
            t -= 2.0 * math.pi
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", t)

    def compose(self, forward: float, lateral: float, dtheta: float) -> "Pose2D":
        """Advance by a body-frame translation then rotate by dtheta."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.x + forward * c - lateral * s,
            self.y + forward * s + lateral * c,
            self.theta + dtheta,
        )

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        """Map Nx2 sensor-frame points into the world frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        return pts @ rot.T + np.array([self.x, self.y])


@dataclass(frozen=True)
class Frame:
    timestamp: float
    heatmap: Heatmap
    pose: Pose2D


@dataclass
class FrameSequence:
    """Time-ordered heatmaps with per-frame ground-truth pose."""

    frames: list[Frame]
    modality_label: str = "lidar"

    def __post_init__(self):
        if not self.frames:
            raise ConfigError("FrameSequence needs at least one frame")
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("timestamps must be strictly increasing")
        geom = self.frames[0].heatmap.geometry
        if any(f.heatmap.geometry != geom for f in self.frames):
            raise ConfigError("all frames must share one sensor geometry")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def geometry(self) -> SensorGeometry:
        return self.frames[0].heatmap.geometry

    @property
    def timestamps(self) -> list[float]:
        return [f.timestamp for f in self.frames]

    @property
    def heatmaps(self) -> list[Heatmap]:
        return [f.heatmap for f in self.frames]

    def ground_truth(self) -> "Trajectory":
        return Trajectory([(f.timestamp, f.pose) for f in self.frames])

    def with_heatmaps(self, heatmaps, modality_label=None) -> "FrameSequence":
        """Same timestamps and poses, new per-frame heatmaps."""
        if len(heatmaps) != len(self.frames):
            raise ConfigError("heatmap count must match frame count")
        return FrameSequence(
            [Frame(f.timestamp, h, f.pose) for f, h in zip(self.frames, heatmaps)],
            modality_label if modality_label is not None else self.modality_label,
        )


@dataclass
class Trajectory:
    """Ordered (timestamp, pose) samples."""

    poses: list[tuple[float, Pose2D]] = field(default_factory=list)

    def __post_init__(self):
        ts = [t for t, _ in self.poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def timestamps(self) -> list[float]:
        return [t for t, _ in self.poses]

    def positions(self) -> np.ndarray:
        return np.array([[p.x, p.y] for _, p in self.poses]).reshape(len(self.poses), 2)

    def path_length(self) -> float:
        xy = self.positions()
        if len(xy) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(xy, axis=0), axis=1)))


def polar_to_cart(h: Heatmap, pose: Pose2D, threshold: float) -> np.ndarray:
    """World-frame points for every cell with intensity >= threshold.

    Each qualifying cell maps to the world coordinate of its bin center.
    Returns an Nx2 array ordered by (row, col) for determinism.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    rows, cols = np.nonzero(h.values >= threshold)
    if rows.size == 0:
        return np.empty((0, 2))
    g = h.geometry
    r = g.range_of_row(rows)
    a = g.azimuth_of_col(cols)
    pts = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    return pose.transform_points(pts)


def heatmap_mse(a: Heatmap, b: Heatmap) -> float:
    """Mean squared per-cell difference; requires identical geometry."""
    if a.geometry != b.geometry:
        raise ConfigError("heatmap geometries differ")
    d = a.values.astype(np.float64) - b.values.astype(np.float64)
    return float(np.mean(d * d))


def translate(values: np.ndarray, d_row: int, d_col: int) -> np.ndarray:
    """Shift array content by (d_row, d_col) (down/right positive), zero fill."""
    out = np.zeros_like(values)
    h, w = values.shape
    sr0, sr1 = max(0, -d_row), min(h, h - d_row)
    sc0, sc1 = max(0, -d_col), min(w, w - d_col)
    if sr0 >= sr1 or sc0 >= sc1:
        return out
    out[sr0 + d_row:sr1 + d_row, sc0 + d_col:sc1 + d_col] = values[sr0:sr1, sc0:sc1]
    return out
