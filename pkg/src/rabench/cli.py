"""Batch command-line interface.

Stages communicate only through the on-disk dataset format, so each
subcommand is independently scriptable and byte-deterministic under a
fixed config. Exit codes: 0 success, 2 config/validation error, 3 runtime
data error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

from .errors import ConfigError, DataError
from .fusion import FusionKernel, LossWeights
from .grid import SensorGeometry
from .metrics import FvmdConfig
from .pipeline import (
    METRIC_COLUMNS,
    evaluate_pair,
    fit_fusion_kernel,
    fuse_sequence,
    run_ablation,
    simulate_sequence,
)
from .sim import DegradationModel, TrajectoryConfig, degrade
from .storage import (
    emit_pgm,
    emit_svg_trajectories,
    read_dataset,
    read_trajectory_csv,
    write_csv,
    write_dataset,
    write_report,
    write_trajectory_csv,
)
from .xcorr import scan_match_sequence

OUTPUT_ROOT_ENV = "RABENCH_OUTPUT_ROOT"

DEFAULT_CONFIG = {
    "world": {"preset": "room", "seed": 0},
    "trajectory": {"kind": "loop", "speed": 0.4, "angular_rate": 0.5, "n_frames": 60, "dt": 0.1, "seed": 0},
    "geometry": {"azimuth_fov_deg": 100.0, "max_range_m": 5.0, "n_range_bins": 64, "n_azimuth_bins": 64},
    "degradation": {
        "gaussian_sigma": 0.0,
        "ghost_count": 0,
        "ghost_gain": 0.0,
        "dropout_prob": 0.0,
        "jitter_sigma": 0.0,
        "seed": 0,
    },
    "fusion": {
        "mode": "none",
        "window": 5,
        "pooled_h": 8,
        "pooled_w": 8,
        "init": "average",
        "train_steps": 0,
        "step_size": 0.05,
        "fd_epsilon": 1e-4,
        "loss_weights": {"w_sim": 1.0, "w_nce": 1.0, "w_t": 1.0, "nce_temperature": 0.5},
    },
    "metrics": {
        "fvmd": {"spacing": 4, "window_radius": 2, "window_len": 5, "stride": 2},
        "map_resolution": 0.1,
        "map_threshold": 0.5,
        "psnr_cap": 100.0,
    },
    "seeds": [0, 1, 2],
    "ablation": {"matrix": "severity", "rows": []},
}


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(config_path: str | None, overrides: list[str] | None) -> dict:
    """Defaults, then the JSON config file, then dotted --set overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = _deep_merge(cfg, json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects dotted.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override non-section {dotted!r}")
        node[keys[-1]] = value
    return cfg


def resolve_out(path: str) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    p = Path(path)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _geometry(cfg: dict) -> SensorGeometry:
    return SensorGeometry.from_dict(cfg["geometry"])


def _trajectory_config(cfg: dict) -> TrajectoryConfig:
    t = cfg["trajectory"]
    return TrajectoryConfig(
        kind=t["kind"],
        speed=float(t["speed"]),
        angular_rate=float(t["angular_rate"]),
        n_frames=int(t["n_frames"]),
        dt=float(t["dt"]),
        seed=int(t["seed"]),
    )


def _degradation_model(cfg: dict) -> DegradationModel:
    d = cfg["degradation"]
    return DegradationModel(
        gaussian_sigma=float(d["gaussian_sigma"]),
        ghost_count=int(d["ghost_count"]),
        ghost_gain=float(d["ghost_gain"]),
        dropout_prob=float(d["dropout_prob"]),
        jitter_sigma=float(d["jitter_sigma"]),
        seed=int(d["seed"]),
    )


def _loss_weights(cfg: dict) -> LossWeights:
    w = cfg["fusion"]["loss_weights"]
    return LossWeights(
        w_sim=float(w["w_sim"]),
        w_nce=float(w["w_nce"]),
        w_t=float(w["w_t"]),
        nce_temperature=float(w["nce_temperature"]),
    )


def _fvmd_config(cfg: dict) -> FvmdConfig:
    f = cfg["metrics"]["fvmd"]
    return FvmdConfig(
        spacing=int(f["spacing"]),
        window_radius=int(f["window_radius"]),
        window_len=int(f["window_len"]),
        stride=int(f["stride"]),
    )


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    seq = simulate_sequence(cfg["world"]["preset"], int(cfg["world"]["seed"]), _trajectory_config(cfg), _geometry(cfg))
    out = resolve_out(args.out)
    write_dataset(seq, out, provenance={"stage": "simulate", "config": cfg})
    print(out)
    return 0


def cmd_degrade(args) -> int:
    cfg = load_config(args.config, args.set)
    seq = read_dataset(resolve_out(args.input))
    model = _degradation_model(cfg)
    out = resolve_out(args.out)
    write_dataset(degrade(seq, model), out, provenance={"stage": "degrade", "degradation": model.to_dict(), "config": cfg})
    print(out)
    return 0


def cmd_fuse(args) -> int:
    cfg = load_config(args.config, args.set)
    fusion = cfg["fusion"]
    mode = args.mode if args.mode is not None else fusion["mode"]
    window = int(args.window if args.window is not None else fusion["window"])
    pooled = (int(fusion["pooled_h"]), int(fusion["pooled_w"]))
    train_steps = int(args.train_steps if args.train_steps is not None else fusion["train_steps"])
    seq = read_dataset(resolve_out(args.input))
    kernel = None
    if mode == "temporal_conv" and train_steps > 0:
        if not args.truth:
            raise ConfigError("training temporal_conv requires --truth with the paired ground-truth dataset")
        truth = read_dataset(resolve_out(args.truth))
        kernel = fit_fusion_kernel(
            seq,
            truth,
            window,
            _loss_weights(cfg),
            train_steps,
            step_size=float(fusion["step_size"]),
            fd_epsilon=float(fusion["fd_epsilon"]),
            init=fusion["init"],
            pooled_shape=pooled,
        )
    elif mode == "temporal_conv":
        kernel = FusionKernel.identity(window, pooled[0] * pooled[1]) if fusion["init"] == "identity" else FusionKernel.average(window, pooled[0] * pooled[1])
    fused = fuse_sequence(seq, mode, window, kernel=kernel, pooled_shape=pooled)
    out = resolve_out(args.out)
    write_dataset(
        fused,
        out,
        provenance={"stage": "fuse", "mode": mode, "window": window, "train_steps": train_steps, "config": cfg},
    )
    print(out)
    return 0


def cmd_slam(args) -> int:
    seq = read_dataset(resolve_out(args.input))
    est = scan_match_sequence(seq)
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(est, out / "estimated.csv")
    emit_svg_trajectories([("ground_truth", seq.ground_truth()), ("estimated", est)], out / "overlay.svg")
    print(out / "estimated.csv")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    pred = read_dataset(resolve_out(args.pred))
    ref = read_dataset(resolve_out(args.ref))
    report = evaluate_pair(
        pred,
        ref,
        fvmd_cfg=_fvmd_config(cfg),
        map_resolution=float(cfg["metrics"]["map_resolution"]),
        map_threshold=float(cfg["metrics"]["map_threshold"]),
        psnr_cap=float(cfg["metrics"]["psnr_cap"]),
        config_echo={"pred": str(args.pred), "ref": str(args.ref), "metrics": cfg["metrics"]},
        seeds=cfg["seeds"],
    )
    out = resolve_out(args.out)
    write_report(report, out)
    print(out)
    return 0


def _ablation_rows(cfg: dict) -> list[dict]:
    ab = cfg["ablation"]
    if ab.get("rows"):
        return ab["rows"]
    matrix = ab.get("matrix", "severity")
    if matrix == "severity":
        rows = []
        for jitter in (0.0, 1.0, 2.0, 3.0):
            for mode in ("none", "window_average"):
                rows.append(
                    {
                        "name": f"jitter{jitter:g}_{mode}",
                        "degradation": {"jitter_sigma": jitter},
                        "fusion_mode": mode,
                        "window": int(cfg["fusion"]["window"]),
                    }
                )
        return rows
    if matrix == "window":
        rows = []
        for window in (3, 5, 7):
            rows.append(
                {
                    "name": f"avg{window}",
                    "degradation": dict(cfg["degradation"]),
                    "fusion_mode": "window_average",
                    "window": window,
                }
            )
            rows.append(
                {
                    "name": f"conv{window}",
                    "degradation": dict(cfg["degradation"]),
                    "fusion_mode": "temporal_conv",
                    "window": window,
                    "train_steps": int(cfg["fusion"]["train_steps"]),
                }
            )
        return rows
    raise ConfigError(f"unknown ablation matrix {matrix!r} (expected severity, window, or explicit rows)")


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.set)
    rows = _ablation_rows(cfg)
    results, correlations = run_ablation(
        rows,
        cfg["world"]["preset"],
        _trajectory_config(cfg),
        _geometry(cfg),
        [int(s) for s in cfg["seeds"]],
        fvmd_cfg=_fvmd_config(cfg),
        map_resolution=float(cfg["metrics"]["map_resolution"]),
        map_threshold=float(cfg["metrics"]["map_threshold"]),
    )
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = ["name", "fusion_mode", "window"] + METRIC_COLUMNS
    write_csv(results, columns, out / "ablation.csv")
    payload = {"correlations": correlations, "config": cfg, "rows": results}
    (out / "correlations.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(out / "ablation.csv")
    return 0


def cmd_report(args) -> int:
    seq = read_dataset(resolve_out(args.input))
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    indices = args.frames if args.frames else sorted({0, len(seq) // 2, len(seq) - 1})
    for i in indices:
        if not 0 <= i < len(seq):
            raise ConfigError(f"frame index {i} out of range for {len(seq)} frames")
        emit_pgm(seq.heatmaps[i], out / f"frame_{i:06d}.pgm")
    trajectories = [("ground_truth", seq.ground_truth())]
    for extra in args.traj or []:
        trajectories.append((Path(extra).stem, read_trajectory_csv(resolve_out(extra))))
    emit_svg_trajectories(trajectories, out / "trajectories.svg")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rabench",
        description="Range-azimuth heatmap workbench: simulate, degrade, fuse, scan-match, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; merged over built-in defaults")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override, e.g. degradation.jitter_sigma=2")

    p = sub.add_parser("simulate", help="render a ground-truth dataset")
    add_common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("degrade", help="apply a degradation model to a dataset")
    add_common(p)
    p.add_argument("--in", dest="input", required=True, help="input dataset directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("fuse", help="temporal fusion of a dataset")
    add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["none", "window_average", "temporal_conv"])
    p.add_argument("--window", type=int)
    p.add_argument("--truth", help="paired ground-truth dataset (required to train temporal_conv)")
    p.add_argument("--train-steps", type=int, dest="train_steps")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("slam", help="correlation scan matching to a trajectory")
    add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output directory for estimated.csv and overlay.svg")
    p.set_defaults(func=cmd_slam)

    p = sub.add_parser("eval", help="all metrics for a (prediction, reference) dataset pair")
    add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True, help="output report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a config matrix and correlate metrics with APE")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory for ablation.csv and correlations.json")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="emit PGM frames and trajectory SVG figures")
    add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, nargs="*", help="frame indices to render (default: first, middle, last)")
    p.add_argument("--traj", action="append", help="extra trajectory CSV to overlay (repeatable)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
