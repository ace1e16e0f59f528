"""Bit-exact dataset container, report schema, and figure emitters.

Datasets are a directory of raw little-endian float32 frames plus a JSON
manifest and a trajectory CSV; the layout is lossless and trivially
parseable so metric results never depend on codec quantization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .grid import Frame, FrameSequence, Heatmap, Pose2D, SensorGeometry, Trajectory

__all__ = [
    "DATASET_VERSION",
    "EvalReport",
    "write_dataset",
    "read_dataset",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_report",
    "write_csv",
    "emit_pgm",
    "emit_svg_trajectories",
]

DATASET_VERSION = 1


def _frame_name(i: int) -> str:
    return f"frame_{i:06d}.bin"


def write_dataset(seq: FrameSequence, out_dir, provenance: dict | None = None) -> Path:
    """Write manifest.json, per-frame raw float32 files, and trajectory.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": DATASET_VERSION,
        "geometry": seq.geometry.to_dict(),
        "frame_count": len(seq),
        "modality_label": seq.modality_label,
        "seed_provenance": provenance if provenance is not None else {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for i, frame in enumerate(seq.frames):
        (out / _frame_name(i)).write_bytes(frame.heatmap.values.astype("<f4").tobytes(order="C"))
    write_trajectory_csv(seq.ground_truth(), out / "trajectory.csv")
    return out


def read_dataset(in_dir) -> FrameSequence:
    """Inverse of write_dataset; read(write(s)) reproduces s bit-exactly."""
    src = Path(in_dir)
    manifest_path = src / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("version") != DATASET_VERSION:
        raise DataError(f"unsupported dataset version {manifest.get('version')!r}")
    geom = SensorGeometry.from_dict(manifest["geometry"])
    count = int(manifest["frame_count"])
    traj = read_trajectory_csv(src / "trajectory.csv")
    if len(traj) != count:
        raise DataError(f"manifest declares {count} frames but trajectory.csv has {len(traj)}")
    h, w = geom.shape
    frames = []
    for i in range(count):
        path = src / _frame_name(i)
        if not path.is_file():
            raise DataError(f"manifest declares {count} frames but {path.name} is missing")
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
        if raw.size != h * w:
            raise DataError(f"frame {i} holds {raw.size} values, expected {h * w}")
        if not np.all(np.isfinite(raw)):
            raise DataError(f"frame {i} contains non-finite values")
        try:
            heatmap = Heatmap(geom, raw.reshape(h, w))
        except ConfigError as exc:
            raise DataError(f"frame {i} is invalid: {exc}") from exc
        t, pose = traj.poses[i]
        frames.append(Frame(t, heatmap, pose))
    return FrameSequence(frames, manifest["modality_label"])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    lines = ["t,x,y,theta"]
    for t, p in traj.poses:
        lines.append(f"{t!r},{p.x!r},{p.y!r},{p.theta!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trajectory_csv(path) -> Trajectory:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing trajectory file {path}")
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != "t,x,y,theta":
        raise DataError(f"{path} is not a trajectory CSV (bad header)")
    poses = []
    for ln in lines[1:]:
        t, x, y, theta = (float(part) for part in ln.split(","))
        poses.append((t, Pose2D(x, y, theta)))
    return Trajectory(poses)


@dataclass
class EvalReport:
    """Scalar metric results plus the config and seeds that produced them.

    A metric that could not be computed is None with an explanation in
    reasons[name]; everything else must be finite.
    """

    metrics: dict = field(default_factory=dict)
    reasons: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)

    def set(self, name: str, value) -> None:
        v = float(value)
        if not np.isfinite(v):
            raise DataError(f"metric {name} is not finite")
        self.metrics[name] = v

    def set_null(self, name: str, reason: str) -> None:
        self.metrics[name] = None
        self.reasons[name] = reason

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "reasons": self.reasons,
            "config": self.config,
            "seeds": list(self.seeds),
        }


def write_report(report: EvalReport, path) -> None:
    """Key-sorted JSON; byte-identical for equal reports."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_csv(rows: list[dict], columns: list[str], path) -> None:
    """CSV with a fixed column order; missing values serialize as empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            v = row.get(col)
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(repr(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_pgm(h: Heatmap, path) -> None:
    """8-bit binary PGM (P5); cell value = round(255 * intensity)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = h.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    raster = np.round(h.values.astype(np.float64) * 255.0).astype(np.uint8).tobytes(order="C")
    path.write_bytes(header + raster)


def emit_svg_trajectories(items: list[tuple[str, Trajectory]], path, size: int = 640) -> None:
    """Labeled polylines over an auto-scaled viewBox; deterministic output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = [traj.positions() for _, traj in items if len(traj)]
    if pts:
        allp = np.concatenate(pts, axis=0)
        xmin, ymin = allp.min(axis=0)
        xmax, ymax = allp.max(axis=0)
    else:
        xmin = ymin = 0.0
        xmax = ymax = 1.0
    span = max(xmax - xmin, ymax - ymin, 1e-9)
    pad = 0.05 * span
    xmin, ymin, span = xmin - pad, ymin - pad, span + 2 * pad

    def sx(x):
        return (x - xmin) / span * size

    def sy(y):
        # flip so +y points up in the rendered figure
        return size - (y - ymin) / span * size

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for k, (label, traj) in enumerate(items):
        color = colors[k % len(colors)]
        coords = " ".join(f"{sx(p.x):.2f},{sy(p.y):.2f}" for _, p in traj.poses)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="10" y="{20 + 18 * k}" fill="{color}" font-size="14">{label}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
