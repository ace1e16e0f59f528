"""Composition of the pipeline stages: simulate -> degrade -> fuse ->
scan-match -> evaluate, plus the ablation sweep driver. The CLI is a thin
wrapper over these functions and everything here is importable for tests.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError
from .fusion import (
    FusionKernel,
    LossWeights,
    cosine_sim,
    decode,
    embed,
    temporal_conv_fuse,
    train_fusion,
    window_average,
)
from .grid import FrameSequence, SensorGeometry
from .metrics import FvmdConfig, ape, fvmd, map_iou, peak_distance_metric, psnr, rasterize_map
from .sim import DegradationModel, TrajectoryConfig, build_world, degrade, render_sequence, simulate_trajectory
from .stats import kendall_tau, pearson, spearman
from .storage import EvalReport
from .xcorr import scan_match_sequence

__all__ = [
    "simulate_sequence",
    "fuse_sequence",
    "training_windows",
    "fit_fusion_kernel",
    "evaluate_pair",
    "run_ablation",
    "FUSION_MODES",
]

FUSION_MODES = ("none", "window_average", "temporal_conv")


def simulate_sequence(preset: str, world_seed: int, traj_cfg: TrajectoryConfig, geom: SensorGeometry) -> FrameSequence:
    """Render the ground-truth LiDAR sequence for a preset world."""
    world = build_world(preset, world_seed)
    traj = simulate_trajectory(world, traj_cfg)
    return render_sequence(world, traj, geom)


def fuse_sequence(
    seq: FrameSequence,
    mode: str,
    window: int = 5,
    kernel: FusionKernel | None = None,
    pooled_shape: tuple[int, int] = (8, 8),
) -> FrameSequence:
    """Apply a temporal fusion mode frame by frame and decode back to heatmaps.

    Early frames use truncated windows (window_average) or windows
    left-padded with the first frame (temporal_conv), so output length
    always equals input length.
    """
    if mode not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {mode!r}")
    if mode == "none":
        return seq
    if window < 1:
        raise ConfigError("window must be >= 1")
    if window > len(seq):
        raise ConfigError(f"window {window} exceeds sequence length {len(seq)}")
    ph, pw = pooled_shape
    geom = seq.geometry
    embeds = [embed(h, ph, pw) for h in seq.heatmaps]
    out = []
    if mode == "window_average":
        for t in range(len(embeds)):
            fused = window_average(embeds[max(0, t - window + 1) : t + 1])
            out.append(decode(fused, geom))
        label = f"{seq.modality_label}+avg{window}"
    else:
        if kernel is None:
            kernel = FusionKernel.identity(window, ph * pw)
        if kernel.window != window:
            raise ConfigError("kernel window does not match the requested window size")
        for t in range(len(embeds)):
            win = embeds[max(0, t - window + 1) : t + 1]
            win = [embeds[0]] * (window - len(win)) + win
            out.append(decode(temporal_conv_fuse(win, kernel), geom))
        label = f"{seq.modality_label}+conv{window}"
    return seq.with_heatmaps(out, modality_label=label)


def training_windows(
    pred: FrameSequence,
    truth: FrameSequence,
    window: int,
    max_items: int = 4,
    item_len: int | None = None,
) -> list[tuple[list, list]]:
    """Slice aligned (degraded, ground-truth) frame windows for the trainer.

    Items are window+1 frames by default so each contributes two fused
    embeddings, which activates the similarity and displacement terms.
    """
    if len(pred) != len(truth):
        raise ConfigError("prediction and ground-truth sequences are misaligned")
    length = item_len if item_len is not None else window + 1
    if length > len(pred):
        raise ConfigError("sequences are too short for one training item")
    starts = np.linspace(0, len(pred) - length, num=min(max_items, len(pred) - length + 1), dtype=int)
    starts = sorted(set(int(s) for s in starts))
    return [
        (pred.heatmaps[s : s + length], truth.heatmaps[s : s + length])
        for s in starts
    ]


def fit_fusion_kernel(
    pred: FrameSequence,
    truth: FrameSequence,
    window: int,
    lw: LossWeights,
    steps: int,
    step_size: float = 0.05,
    fd_epsilon: float = 1e-4,
    init: str = "average",
    pooled_shape: tuple[int, int] = (8, 8),
    max_items: int = 4,
) -> FusionKernel:
    """Train the temporal kernel on aligned degraded/ground-truth windows."""
    dim = pooled_shape[0] * pooled_shape[1]
    if init == "average":
        kernel = FusionKernel.average(window, dim)
    elif init == "identity":
        kernel = FusionKernel.identity(window, dim)
    else:
        raise ConfigError(f"unknown kernel init {init!r}")
    dataset = training_windows(pred, truth, window, max_items=max_items)
    return train_fusion(dataset, kernel, lw, steps, step_size, fd_epsilon, pooled_shape=pooled_shape)


def evaluate_pair(
    pred: FrameSequence,
    ref: FrameSequence,
    fvmd_cfg: FvmdConfig = FvmdConfig(),
    map_resolution: float = 0.1,
    map_threshold: float = 0.5,
    psnr_cap: float = 100.0,
    config_echo: dict | None = None,
    seeds: list[int] | None = None,
) -> EvalReport:
    """Every metric column for one (prediction, reference) sequence pair.

    APE compares the scan-matched trajectory of the prediction against the
    embedded ground-truth trajectory; IoU compares the map built from the
    prediction along that estimated trajectory against the reference map
    built on ground truth.
    """
    if len(pred) != len(ref):
        raise ConfigError("prediction and reference sequences must have equal length")
    report = EvalReport(config=config_echo or {}, seeds=seeds or [])

    report.set("psnr_mean", np.mean([psnr(p, r, psnr_cap) for p, r in zip(pred.heatmaps, ref.heatmaps)]))
    report.set("cosine_sim_mean", np.mean([cosine_sim(embed(p), embed(r)) for p, r in zip(pred.heatmaps, ref.heatmaps)]))

    try:
        report.set("fvmd", fvmd(pred, ref, fvmd_cfg))
    except DataError as exc:
        report.set_null("fvmd", str(exc))

    report.set("peak_distance", peak_distance_metric(pred, ref))

    est = scan_match_sequence(pred)
    ape_report = ape(est, pred.ground_truth())
    report.set("ape_rmse", ape_report.rmse)
    report.set("ape_mean", ape_report.mean)
    report.set("ape_std", ape_report.std)

    ref_map = rasterize_map(ref, ref.ground_truth(), map_resolution, map_threshold)
    pred_map = rasterize_map(pred, est, map_resolution, map_threshold)
    report.set("iou", map_iou(ref_map, pred_map))
    return report


METRIC_COLUMNS = ["psnr_mean", "cosine_sim_mean", "fvmd", "peak_distance", "ape_rmse", "ape_mean", "ape_std", "iou"]


def run_pipeline_once(
    preset: str,
    traj_cfg: TrajectoryConfig,
    geom: SensorGeometry,
    degradation: DegradationModel,
    fusion_mode: str,
    window: int,
    seed: int,
    train_steps: int = 0,
    lw: LossWeights | None = None,
    fvmd_cfg: FvmdConfig = FvmdConfig(),
    map_resolution: float = 0.1,
    map_threshold: float = 0.5,
) -> EvalReport:
    """Simulate, degrade, fuse, and evaluate one seeded configuration."""
    traj_cfg = TrajectoryConfig(
        kind=traj_cfg.kind,
        speed=traj_cfg.speed,
        angular_rate=traj_cfg.angular_rate,
        n_frames=traj_cfg.n_frames,
        dt=traj_cfg.dt,
        seed=seed,
    )
    clean = simulate_sequence(preset, seed, traj_cfg, geom)
    model = DegradationModel(
        gaussian_sigma=degradation.gaussian_sigma,
        ghost_count=degradation.ghost_count,
        ghost_gain=degradation.ghost_gain,
        dropout_prob=degradation.dropout_prob,
        jitter_sigma=degradation.jitter_sigma,
        seed=seed,
    )
    degraded = degrade(clean, model)
    kernel = None
    if fusion_mode == "temporal_conv" and train_steps > 0:
        kernel = fit_fusion_kernel(degraded, clean, window, lw or LossWeights(), train_steps)
    pred = fuse_sequence(degraded, fusion_mode, window, kernel=kernel)
    return evaluate_pair(
        pred,
        clean,
        fvmd_cfg=fvmd_cfg,
        map_resolution=map_resolution,
        map_threshold=map_threshold,
        seeds=[seed],
    )


def run_ablation(
    rows: list[dict],
    preset: str,
    traj_cfg: TrajectoryConfig,
    geom: SensorGeometry,
    seeds: list[int],
    fvmd_cfg: FvmdConfig = FvmdConfig(),
    map_resolution: float = 0.1,
    map_threshold: float = 0.5,
) -> tuple[list[dict], dict]:
    """Run each matrix row across all seeds and correlate metrics with APE.

    Each row dict carries: name, degradation (dict), fusion_mode, window,
    train_steps (optional). Returns (csv rows, correlation summary).
    """
    if not seeds:
        raise ConfigError("seeds list must be non-empty")
    results = []
    for row in rows:
        model = DegradationModel(**{**row.get("degradation", {}), "seed": 0})
        per_seed = []
        for seed in seeds:
            report = run_pipeline_once(
                preset,
                traj_cfg,
                geom,
                model,
                row.get("fusion_mode", "none"),
                int(row.get("window", 5)),
                seed,
                train_steps=int(row.get("train_steps", 0)),
                fvmd_cfg=fvmd_cfg,
                map_resolution=map_resolution,
                map_threshold=map_threshold,
            )
            per_seed.append(report.metrics)
        out = {"name": row.get("name", ""), "fusion_mode": row.get("fusion_mode", "none"),
               "window": int(row.get("window", 5))}
        for col in METRIC_COLUMNS:
            vals = [m[col] for m in per_seed]
            out[col] = None if any(v is None for v in vals) else float(np.mean(vals))
        results.append(out)

    correlations = {}
    for metric in ("fvmd", "peak_distance"):
        pairs = [(r[metric], r["ape_mean"]) for r in results if r[metric] is not None and r["ape_mean"] is not None]
        if len(pairs) < 3:
            correlations[metric] = {"reason": "need at least 3 configurations with defined values"}
            continue
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        try:
            correlations[metric] = {
                "spearman": spearman(xs, ys).to_dict(),
                "pearson": pearson(xs, ys).to_dict(),
                "kendall": kendall_tau(xs, ys).to_dict(),
                "p_value_note": "approximate (large-sample)",
            }
        except ConfigError as exc:
            correlations[metric] = {"reason": str(exc)}
    return results, correlations
