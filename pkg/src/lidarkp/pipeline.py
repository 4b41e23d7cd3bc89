"""End-to-end runs: preprocess, enhance, detect, track, sample, register,
evaluate, and report.

Configuration is one YAML file with per-stage sections; CLI flags override
file values. Reports are deterministic for a fixed config/seed: wall-clock
timings go to a separate timing.csv that is excluded from that guarantee.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .core import Pose
from .enhance import EnhanceConfig, EnhancerKind, EnhancerSpec, build_variants
from .evaluation import ErrorReport, EvaluationError, Trajectory, ape
from .features import DetectorKind, DetectorSpec, detect
from .ingest import load_frame, load_manifest, load_trajectory, write_trajectory
from .odometry import Odometry, OdometryConfig, voxel_down_sample
from .preprocess import PreprocessConfig
from .tracking import Combination, TrackState, combination_by_name, sample


class PipelineError(RuntimeError):
    pass


MODES = ("sampled", "full")


@dataclass
class RunConfig:
    dataset: str
    output: str = "run_out"
    combination: str = "comb_0"
    mode: str = "sampled"
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    tracking_max_distance: float | None = None
    odometry: OdometryConfig = field(default_factory=OdometryConfig)
    eval_align: bool = True
    eval_max_dt: float = 0.02

    def __post_init__(self):
        if self.mode not in MODES:
            raise PipelineError(f"mode must be one of {MODES}, got {self.mode!r}")
        combination_by_name(self.combination)  # raises on unknown names

    def snapshot(self) -> dict[str, Any]:
        """Nested plain-type view of the effective configuration."""
        return {
            "dataset": str(self.dataset),
            "output": str(self.output),
            "seed": self.seed,
            "pipeline": {"combination": self.combination, "mode": self.mode},
            "preprocess": {
                "gamma": self.preprocess.gamma,
                "p_thresh": self.preprocess.p_thresh,
                "clahe_clip": self.preprocess.clahe_clip,
                "clahe_tiles": list(self.preprocess.clahe_tiles),
            },
            "enhance": {
                "sr": {"kind": self.enhance.sr.kind.value, "command": self.enhance.sr.command},
                "color": {
                    "kind": self.enhance.color.kind.value,
                    "command": self.enhance.color.command,
                },
                "timeout_s": self.enhance.sr.timeout_s,
                "normalize_percentile": self.enhance.normalize_percentile,
            },
            "features": {
                "kind": self.detector.kind.value,
                "max_kp": self.detector.max_keypoints,
                "fast_threshold": self.detector.fast_threshold,
                "nms_radius": self.detector.nms_radius,
                "command": self.detector.command,
            },
            "tracking": {"max_distance": self.tracking_max_distance},
            "odometry": {
                "voxel_size": self.odometry.voxel_size,
                "max_points_per_voxel": self.odometry.max_points_per_voxel,
                "map_range": self.odometry.map_range,
                "initial_threshold": self.odometry.initial_threshold,
                "min_threshold": self.odometry.min_threshold,
                "kernel_scale": self.odometry.kernel_scale,
                "max_iterations": self.odometry.max_iterations,
                "convergence_eps": self.odometry.convergence_eps,
            },
            "evaluation": {"align": self.eval_align, "max_dt": self.eval_max_dt},
        }


def _get(d: dict, key: str, default):
    v = d.get(key, default)
    return default if v is None else v


def config_from_dict(raw: dict[str, Any]) -> RunConfig:
    pipe = raw.get("pipeline") or {}
    pre = raw.get("preprocess") or {}
    enh = raw.get("enhance") or {}
    feat = raw.get("features") or {}
    trk = raw.get("tracking") or {}
    odo = raw.get("odometry") or {}
    ev = raw.get("evaluation") or {}

    sr_raw = enh.get("sr") or {}
    color_raw = enh.get("color") or {}
    timeout = float(_get(enh, "timeout_s", 30.0))
    sr = EnhancerSpec(
        EnhancerKind(_get(sr_raw, "kind", "builtin_bicubic_sr")),
        command=sr_raw.get("command"),
        timeout_s=timeout,
    )
    color = EnhancerSpec(
        EnhancerKind(_get(color_raw, "kind", "builtin_colormap_color")),
        command=color_raw.get("command"),
        timeout_s=timeout,
    )
    tiles = _get(pre, "clahe_tiles", [8, 8])
    return RunConfig(
        dataset=raw.get("dataset", ""),
        output=_get(raw, "output", "run_out"),
        combination=_get(pipe, "combination", "comb_0"),
        mode=_get(pipe, "mode", "sampled"),
        seed=int(_get(raw, "seed", 0)),
        preprocess=PreprocessConfig(
            gamma=float(_get(pre, "gamma", 0.5)),
            p_thresh=int(_get(pre, "p_thresh", 240)),
            clahe_clip=float(_get(pre, "clahe_clip", 2.0)),
            clahe_tiles=(int(tiles[0]), int(tiles[1])),
        ),
        enhance=EnhanceConfig(
            sr=sr, color=color,
            normalize_percentile=float(_get(enh, "normalize_percentile", 0.99)),
        ),
        detector=DetectorSpec(
            kind=DetectorKind(_get(feat, "kind", "builtin_fast_brief")),
            fast_threshold=int(_get(feat, "fast_threshold", 20)),
            max_keypoints=int(_get(feat, "max_kp", 500)),
            nms_radius=float(_get(feat, "nms_radius", 4.0)),
            command=feat.get("command"),
            timeout_s=float(_get(feat, "timeout_s", 30.0)),
        ),
        tracking_max_distance=trk.get("max_distance"),
        odometry=OdometryConfig(
            voxel_size=float(_get(odo, "voxel_size", 1.0)),
            max_points_per_voxel=int(_get(odo, "max_points_per_voxel", 20)),
            map_range=float(_get(odo, "map_range", 100.0)),
            initial_threshold=float(_get(odo, "initial_threshold", 2.0)),
            min_threshold=float(_get(odo, "min_threshold", 0.1)),
            kernel_scale=float(_get(odo, "kernel_scale", 1.0)),
            max_iterations=int(_get(odo, "max_iterations", 50)),
            convergence_eps=float(_get(odo, "convergence_eps", 1e-4)),
        ),
        eval_align=bool(_get(ev, "align", True)),
        eval_max_dt=float(_get(ev, "max_dt", 0.02)),
    )


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise PipelineError(f"config {path} must be a mapping")
    for dotted, value in (overrides or {}).items():
        node = raw
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise PipelineError(f"cannot override {dotted}: {k} is not a section")
        node[keys[-1]] = value
    return config_from_dict(raw)


@dataclass
class FrameStats:
    index: int
    timestamp: float
    raw_points: int
    sampled_points: int
    iterations: int
    correspondences: int
    threshold: float
    degenerate: bool


@dataclass
class RunReport:
    name: str
    config: dict[str, Any]
    frames: list[FrameStats]
    trajectory: Trajectory
    error: ErrorReport | None = None
    eval_aligned: bool | None = None
    timings: list[tuple[int, str, float]] = field(default_factory=list)

    @property
    def mean_points(self) -> float:
        if not self.frames:
            return 0.0
        return float(np.mean([f.sampled_points for f in self.frames]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            [
                "frame", "timestamp", "raw_points", "sampled_points",
                "iterations", "correspondences", "threshold", "degenerate",
            ]
        )
        for f in self.frames:
            w.writerow(
                [
                    f.index, repr(float(f.timestamp)), f.raw_points, f.sampled_points,
                    f.iterations, f.correspondences, f"{f.threshold:.6f}", int(f.degenerate),
                ]
            )
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"run: {self.name}",
            f"frames: {len(self.frames)}",
            f"mean sampled points/frame: {self.mean_points:.1f}",
            f"degenerate fallbacks: {sum(f.degenerate for f in self.frames)}",
        ]
        if self.error is not None:
            how = "aligned" if self.eval_aligned else "unaligned"
            lines.append(
                f"errors, {how} (trans mean/rmse [m], rot mean [deg]): "
                + self.error.summary_cell()
            )
        else:
            lines.append("errors: no ground truth available")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "name": self.name,
            "config": self.config,
            "mean_points": self.mean_points,
            "frames": [
                {
                    "index": f.index,
                    "timestamp": f.timestamp,
                    "raw_points": f.raw_points,
                    "sampled_points": f.sampled_points,
                    "iterations": f.iterations,
                    "correspondences": f.correspondences,
                    "threshold": f.threshold,
                    "degenerate": f.degenerate,
                }
                for f in self.frames
            ],
        }
        if self.error is not None:
            payload["metrics"] = {
                "trans_mean": self.error.trans_mean,
                "trans_rmse": self.error.trans_rmse,
                "rot_mean_deg": self.error.rot_mean_deg,
                "rot_rmse_deg": self.error.rot_rmse_deg,
                "n_pairs": self.error.n_pairs,
                "aligned": self.eval_aligned,
            }
        else:
            payload["metrics"] = None
        return payload


def run(config: RunConfig) -> RunReport:
    """Process every frame in order; evaluate against ground truth when the
    dataset ships one. Deterministic for built-in back-ends."""
    manifest = load_manifest(config.dataset)
    combination: Combination = combination_by_name(config.combination)
    needed = set(combination.kinds) if config.mode == "sampled" else set()

    odom = Odometry(config.odometry)
    state = TrackState()
    frames: list[FrameStats] = []
    timings: list[tuple[int, str, float]] = []
    poses: list[Pose] = []

    for i in range(manifest.frame_count):
        stage = "load"
        try:
            t0 = time.perf_counter()
            frame = load_frame(manifest, i)
            t1 = time.perf_counter()
            timings.append((i, "load", t1 - t0))

            if config.mode == "sampled":
                stage = "enhance"
                variants = build_variants(frame, needed, config.enhance, config.preprocess)
                t2 = time.perf_counter()
                timings.append((i, "enhance", t2 - t1))

                stage = "detect"
                detections = {
                    kind: detect(variants[kind], config.detector) for kind in combination.kinds
                }
                t3 = time.perf_counter()
                timings.append((i, "detect", t3 - t2))

                stage = "sample"
                sampled = sample(
                    frame, combination, detections, state, config.tracking_max_distance
                )
                source = sampled.points.astype(np.float64)
                map_points = source
                t4 = time.perf_counter()
                timings.append((i, "sample", t4 - t3))
            else:
                stage = "downsample"
                raw = frame.cloud.valid_points().astype(np.float64)
                map_points = voxel_down_sample(raw, config.odometry.voxel_size * 0.5)
                source = voxel_down_sample(map_points, config.odometry.voxel_size * 1.5)
                t4 = time.perf_counter()
                timings.append((i, "downsample", t4 - t1))

            stage = "register"
            pose_mat, diag = odom.process(source, map_points)
            t5 = time.perf_counter()
            timings.append((i, "register", t5 - t4))
        except Exception as exc:
            raise PipelineError(f"frame {i}, stage {stage}: {exc}") from exc

        poses.append(Pose.from_matrix(pose_mat, frame.timestamp))
        frames.append(
            FrameStats(
                index=i,
                timestamp=frame.timestamp,
                raw_points=int(frame.cloud.valid.sum()),
                sampled_points=int(source.shape[0]),
                iterations=diag.iterations,
                correspondences=diag.correspondences,
                threshold=diag.threshold,
                degenerate=diag.degenerate_fallback,
            )
        )

    trajectory = Trajectory(tuple(poses))
    error = None
    aligned: bool | None = None
    gt_path = manifest.ground_truth_path()
    if gt_path is not None:
        gt = load_trajectory(gt_path)
        aligned = config.eval_align
        try:
            error = ape(trajectory, gt, align=aligned, max_dt=config.eval_max_dt)
        except EvaluationError:
            if not aligned:
                raise
            # straight-line trajectories defeat rigid alignment; report
            # the unaligned error instead of nothing
            aligned = False
            error = ape(trajectory, gt, align=False, max_dt=config.eval_max_dt)

    name = config.combination if config.mode == "sampled" else f"full_{config.combination}"
    return RunReport(
        name=name,
        config=config.snapshot(),
        frames=frames,
        trajectory=trajectory,
        error=error,
        eval_aligned=aligned,
        timings=timings,
    )


def write_run_report(report: RunReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectory": out / "est.tum",
        "csv": out / "report.csv",
        "text": out / "report.txt",
        "json": out / "report.json",
        "timing": out / "timing.csv",
    }
    write_trajectory(report.trajectory, paths["trajectory"])
    paths["csv"].write_text(report.to_csv())
    paths["text"].write_text(report.to_text())
    paths["json"].write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
    with open(paths["timing"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "stage", "seconds"])
        for row in report.timings:
            w.writerow([row[0], row[1], f"{row[2]:.6f}"])
    return paths


# --- comparison table -------------------------------------------------------

def format_metric_cell(trans_mean: float, trans_rmse: float, rot_mean_deg: float) -> str:
    return f"({trans_mean:.3f}/{trans_rmse:.3f}, {rot_mean_deg:.3f})"


@dataclass(frozen=True)
class CompareRow:
    name: str
    trans_mean: float | None
    trans_rmse: float | None
    rot_mean_deg: float | None
    mean_points: float

    def cell(self) -> str:
        if self.trans_mean is None:
            return "(n/a)"
        return format_metric_cell(self.trans_mean, self.trans_rmse, self.rot_mean_deg)


def compare_rows(reports: list[RunReport | dict[str, Any]]) -> list[CompareRow]:
    if not reports:
        raise PipelineError("compare needs at least one report")
    rows = []
    for r in reports:
        d = r.to_json_dict() if isinstance(r, RunReport) else r
        metrics = d.get("metrics")
        rows.append(
            CompareRow(
                name=d["name"],
                trans_mean=metrics["trans_mean"] if metrics else None,
                trans_rmse=metrics["trans_rmse"] if metrics else None,
                rot_mean_deg=metrics["rot_mean_deg"] if metrics else None,
                mean_points=float(d.get("mean_points", 0.0)),
            )
        )
    rows.sort(key=lambda r: r.name)
    return rows


def compare(reports: list[RunReport | dict[str, Any]]) -> tuple[str, str]:
    """Build (csv, text) comparison tables: one row per run with the
    (trans mean/rmse, rot mean) cell and the mean point count."""
    rows = compare_rows(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "trans_mean", "trans_rmse", "rot_mean_deg", "mean_points"])
    for r in rows:
        w.writerow(
            [
                r.name,
                "" if r.trans_mean is None else f"{r.trans_mean:.6f}",
                "" if r.trans_rmse is None else f"{r.trans_rmse:.6f}",
                "" if r.rot_mean_deg is None else f"{r.rot_mean_deg:.6f}",
                f"{r.mean_points:.1f}",
            ]
        )

    name_w = max(len(r.name) for r in rows)
    cell_w = max(len(r.cell()) for r in rows)
    lines = [
        f"{'combination':<{name_w}}  {'(trans mean/rmse [m], rot mean [deg])':<{cell_w}}  points"
    ]
    for r in rows:
        lines.append(f"{r.name:<{name_w}}  {r.cell():<{cell_w}}  {r.mean_points:.1f}")
    return buf.getvalue(), "\n".join(lines) + "\n"
