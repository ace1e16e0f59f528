"""Synthetic world, trajectory, ideal-LiDAR rendering, and degradation models.

Degradation stands in for the noisy cross-sensor predictions the pipeline
would otherwise consume: ghosts model multipath echoes, whole-frame jitter
models frame-to-frame inconsistency, plus per-cell noise and dropout.
Everything is deterministic given (inputs, seeds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import FrameSequence, Heatmap, Pose2D, SensorGeometry, Trajectory, translate

__all__ = [
    "World",
    "TrajectoryConfig",
    "DegradationModel",
    "build_world",
    "simulate_trajectory",
    "render_lidar",
    "degrade",
    "frame_rng",
]

WORLD_PRESETS = ("room", "corridor", "office")

# Spatial footprint of a multipath ghost blob, in bins.
GHOST_SIGMA_BINS = 1.5
# Width of the along-range smear applied to each ray hit, in bins.
HIT_SIGMA_BINS = 1.0


@dataclass(frozen=True)
class World:
    """2D world made of wall segments inside an axis-aligned boundary."""

    segments: np.ndarray  # Nx4 rows of (x1, y1, x2, y2)
    bounds: tuple[float, float, float, float]  # (xmin, ymin, xmax, ymax)

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=np.float64).reshape(-1, 4)
        if seg.shape[0] < 1:
            raise ConfigError("World needs at least one segment")
        xmin, ymin, xmax, ymax = self.bounds
        eps = 1e-9
        xs = seg[:, [0, 2]]
        ys = seg[:, [1, 3]]
        if xs.min() < xmin - eps or xs.max() > xmax + eps or ys.min() < ymin - eps or ys.max() > ymax + eps:
            raise ConfigError("world segments must lie within bounds")
        object.__setattr__(self, "segments", seg)

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return (xmin + margin <= x <= xmax - margin) and (ymin + margin <= y <= ymax - margin)


@dataclass(frozen=True)
class TrajectoryConfig:
    kind: str = "straight"
    speed: float = 0.5
    angular_rate: float = 0.8
    n_frames: int = 50
    dt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("straight", "loop", "corridor-turns"):
            raise ConfigError(f"unknown trajectory kind {self.kind!r}")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be >= 2")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.speed < 0.0:
            raise ConfigError("speed must be >= 0")


@dataclass(frozen=True)
class DegradationModel:
    gaussian_sigma: float = 0.0
    ghost_count: int = 0
    ghost_gain: float = 0.0
    dropout_prob: float = 0.0
    jitter_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("gaussian_sigma", "ghost_count", "ghost_gain", "jitter_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ConfigError("dropout_prob must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "gaussian_sigma": self.gaussian_sigma,
            "ghost_count": self.ghost_count,
            "ghost_gain": self.ghost_gain,
            "dropout_prob": self.dropout_prob,
            "jitter_sigma": self.jitter_sigma,
            "seed": self.seed,
        }


def build_world(preset: str, seed: int) -> World:
    """Deterministic preset world for a given (preset, seed)."""
    rng = np.random.default_rng((int(seed), 0xB0))
    if preset == "room":
        w = 9.0 + rng.uniform(-0.5, 0.5)
        h = 7.0 + rng.uniform(-0.5, 0.5)
        return World(_rect_segments(0.0, 0.0, w, h), (0.0, 0.0, w, h))
    if preset == "corridor":
        length = 20.0
        width = 3.0
        segs = [
            (0.0, 0.0, length, 0.0),
            (0.0, width, length, width),
            (0.0, 0.0, 0.0, width),
            (length, 0.0, length, width),
        ]
        # jagged wall lining (doors, radiators, furniture): smooth walls are
        # translation-invariant along the corridor and give scan matching
        # nothing to track
        for wall_y, sign in ((0.0, 1.0), (width, -1.0)):
            x = 0.0
            y = wall_y + sign * rng.uniform(0.05, 0.45)
            while x < length:
                nx = min(x + rng.uniform(0.5, 1.1), length)
                ny = wall_y + sign * rng.uniform(0.05, 0.45)
                segs.append((x, y, nx, ny))
                x, y = nx, ny
        return World(np.array(segs), (0.0, 0.0, length, width))
    if preset == "office":
        w, h = 10.0, 8.0
        segs = list(_rect_segments(0.0, 0.0, w, h))
        for _ in range(3):
            # interior partition walls, clear of the outer boundary
            x0 = rng.uniform(1.0, w - 1.0)
            y0 = rng.uniform(1.0, h - 1.0)
            length = rng.uniform(1.5, 3.5)
            if rng.random() < 0.5:
                x1 = min(x0 + length, w - 0.5)
                segs.append((x0, y0, x1, y0))
            else:
                y1 = min(y0 + length, h - 0.5)
                segs.append((x0, y0, x0, y1))
        return World(np.array(segs), (0.0, 0.0, w, h))
    raise ConfigError(f"unknown world preset {preset!r} (expected one of {WORLD_PRESETS})")


def _rect_segments(x0, y0, x1, y1):
    return np.array(
        [
            (x0, y0, x1, y0),
            (x1, y0, x1, y1),
            (x1, y1, x0, y1),
            (x0, y1, x0, y0),
        ]
    )


def default_start_pose(world: World, kind: str = "loop") -> Pose2D:
    """Heading along the world's longest axis; straight runs start near one
    end so the full length is available, turning runs start at the center."""
    xmin, ymin, xmax, ymax = world.bounds
    cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    along_x = (xmax - xmin) >= (ymax - ymin)
    theta = 0.0 if along_x else math.pi / 2.0
    if kind == "straight":
        if along_x:
            cx = xmin + 0.15 * (xmax - xmin)
        else:
            cy = ymin + 0.15 * (ymax - ymin)
    return Pose2D(cx, cy, theta)


def simulate_trajectory(world: World, cfg: TrajectoryConfig, start: Pose2D | None = None) -> Trajectory:
    """Roll a constant-speed trajectory through the world.

    Every step moves speed*dt; heading changes by angular_rate*dt on turning
    steps (always for "loop", never for "straight", and near walls for
    "corridor-turns"). Raises if any pose would leave the world bounds.
    """
    pose = start if start is not None else default_start_pose(world, cfg.kind)
    if not world.contains(pose.x, pose.y):
        raise ConfigError("start pose lies outside world bounds")
    margin = max(0.8, 3.0 * cfg.speed * cfg.dt)
    poses = [(0.0, pose)]
    for k in range(1, cfg.n_frames):
        if cfg.kind == "straight":
            omega = 0.0
        elif cfg.kind == "loop":
            omega = cfg.angular_rate
        else:  # corridor-turns: turn whenever straight-ahead would get too close
            ahead_x = pose.x + margin * math.cos(pose.theta)
            ahead_y = pose.y + margin * math.sin(pose.theta)
            omega = cfg.angular_rate if not world.contains(ahead_x, ahead_y, margin=0.3) else 0.0
        theta = pose.theta + omega * cfg.dt
        x = pose.x + cfg.speed * cfg.dt * math.cos(theta)
        y = pose.y + cfg.speed * cfg.dt * math.sin(theta)
        if not world.contains(x, y):
            raise ConfigError(f"trajectory exits world bounds at frame {k}")
        pose = Pose2D(x, y, theta)
        poses.append((k * cfg.dt, pose))
    return Trajectory(poses)


def _ray_distances(world: World, pose: Pose2D, azimuths: np.ndarray) -> np.ndarray:
    """First-hit distance per ray, inf where nothing is hit."""
    angles = pose.theta + azimuths
    dx = np.cos(angles)[:, None]  # rays x 1
    dy = np.sin(angles)[:, None]
    seg = world.segments
    ex = (seg[:, 2] - seg[:, 0])[None, :]  # 1 x segs
    ey = (seg[:, 3] - seg[:, 1])[None, :]
    qx = (seg[:, 0] - pose.x)[None, :]
    qy = (seg[:, 1] - pose.y)[None, :]
    denom = dx * ey - dy * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qx * ey - qy * ex) / denom  # distance along ray
        u = (qx * dy - qy * dx) / denom  # position along segment
    valid = (np.abs(denom) > 1e-12) & (u >= 0.0) & (u <= 1.0) & (t > 1e-9)
    t = np.where(valid, t, np.inf)
    return t.min(axis=1)


def render_lidar(world: World, pose: Pose2D, geom: SensorGeometry) -> Heatmap:
    """Ideal LiDAR heatmap: one ray per azimuth bin, first wall hit per ray.

    A hit at range r lights the containing range bin with intensity 1,
    smeared along range by a fixed 1-bin Gaussian. Misses leave the column
    at zero.
    """
    if not world.contains(pose.x, pose.y):
        raise ConfigError("pose lies outside world bounds")
    h, w = geom.shape
    azimuths = geom.azimuth_of_col(np.arange(w))
    dist = _ray_distances(world, pose, azimuths)
    values = np.zeros((h, w))
    rows = np.arange(h, dtype=np.float64)
    hit_cols = np.nonzero(dist < geom.max_range_m)[0]
    for c in hit_cols:
        hit_row = int(dist[c] / geom.max_range_m * h)
        values[:, c] = np.exp(-0.5 * ((rows - hit_row) / HIT_SIGMA_BINS) ** 2)
    return Heatmap(geom, np.clip(values, 0.0, 1.0))


def render_sequence(world: World, traj: Trajectory, geom: SensorGeometry, modality_label: str = "lidar") -> FrameSequence:
    """Render one heatmap per trajectory pose."""
    from .grid import Frame

    frames = [Frame(t, render_lidar(world, p, geom), p) for t, p in traj.poses]
    return FrameSequence(frames, modality_label)


def frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    """Per-frame random stream; independent of processing order."""
    return np.random.default_rng((int(seed), int(frame_index)))


def sample_jitter(model: DegradationModel, frame_index: int) -> tuple[int, int]:
    """The (d_row, d_col) whole-frame shift degrade() applies to this frame."""
    rng = frame_rng(model.seed, frame_index)
    d_row = int(round(rng.normal(0.0, model.jitter_sigma)))
    d_col = int(round(rng.normal(0.0, model.jitter_sigma)))
    return d_row, d_col


def degrade(seq: FrameSequence, model: DegradationModel) -> FrameSequence:
    """Apply jitter, ghost blobs, per-cell noise, and dropout to every frame.

    Per frame, in order: whole-frame integer translation ~ N(0, jitter_sigma)
    per axis; ghost_count Gaussian blobs of amplitude ghost_gain at random
    bins; additive N(0, gaussian_sigma) per cell; dropout with probability
    dropout_prob per cell; clamp to [0, 1]. Poses and timestamps unchanged.
    """
    geom = seq.geometry
    h, w = geom.shape
    grid_r = np.arange(h, dtype=np.float64)[:, None]
    grid_c = np.arange(w, dtype=np.float64)[None, :]
    out = []
    for i, frame in enumerate(seq.frames):
        rng = frame_rng(model.seed, i)
        values = frame.heatmap.values.astype(np.float64)

        d_row = int(round(rng.normal(0.0, model.jitter_sigma)))
        d_col = int(round(rng.normal(0.0, model.jitter_sigma)))
        if d_row or d_col:
            values = translate(values, d_row, d_col)

        for _ in range(int(model.ghost_count)):
            r0 = rng.integers(0, h)
            c0 = rng.integers(0, w)
            values += model.ghost_gain * np.exp(
                -((grid_r - r0) ** 2 + (grid_c - c0) ** 2) / (2.0 * GHOST_SIGMA_BINS**2)
            )

        values += rng.normal(0.0, model.gaussian_sigma, size=(h, w))

        drop = rng.random((h, w)) < model.dropout_prob
        values[drop] = 0.0

        out.append(Heatmap(geom, np.clip(values, 0.0, 1.0)))
    return seq.with_heatmaps(out, modality_label=seq.modality_label + "+degraded")
