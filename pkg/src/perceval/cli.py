"""Command-line entry point: ``perceval <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or usage, 2 I/O failure. Every run
writes a one-line JSON summary (config echo and wall-clock time) to stderr;
output files never contain timing so they stay byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import THREADS_ENV, default_threads
from .core import (
    DEFAULT_REGISTRY,
    CategoryRegistry,
    FrameSet,
    FrameSetError,
    ensure_valid,
    infer_kind,
    read_frameset,
    write_frameset,
)
from .dataops import (
    VoxelGridConfig,
    cbgs_weights,
    read_index,
    read_points,
    resample,
    voxelize,
)
from .ensemble import (
    EnsembleConfig,
    ManifestModel,
    ModelOutput,
    ensemble_forecasts,
    load_manifest,
    tta_merge,
    wbf,
    write_manifest,
)
from .geometry import TtaTransform
from .metrics import MatchConfig, detection_metrics, forecasting_metrics, tracking_metrics
from .synthgen import SceneSpec, detections_of, generate

TABLE_COLUMNS = {
    "detection": ("mCDS", "mAP", "mATE", "mASE", "mAOE"),
    "tracking": ("HOTA", "AMOTA", "MOTA"),
    "forecasting": ("mAP_F", "ADE", "FDE"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    config_path: str | None = None
    threads: int = 1
    seed: int | None = None
    options: dict = field(default_factory=dict)


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def _write_json(path, data) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _read_valid(path, kind=None, registry=DEFAULT_REGISTRY, name="input") -> FrameSet:
    if kind is None:
        kind = infer_kind(path)
    try:
        fs = read_frameset(path, kind)
    except FrameSetError as exc:
        raise FrameSetError(f"{path}: {exc}") from exc
    ensure_valid(fs, registry, name=f"{name} {path}")
    return fs


def format_table(task: str, means: dict) -> str:
    columns = TABLE_COLUMNS[task]
    cells = []
    for col in columns:
        value = means.get(col)
        cells.append("n/a" if value is None else f"{value:.4f}")
    widths = [max(len(c), len(v)) for c, v in zip(columns, cells)]
    header = "  ".join(c.rjust(w) for c, w in zip(columns, widths))
    row = "  ".join(v.rjust(w) for v, w in zip(cells, widths))
    return f"{header}\n{row}"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _cmd_evaluate(args, run: RunConfig) -> dict:
    cfg_data = _load_json(args.config) if args.config else {}
    registry = DEFAULT_REGISTRY
    if "categories" in cfg_data:
        registry = CategoryRegistry(tuple(cfg_data.pop("categories")))
    cfg = MatchConfig.from_dict(cfg_data)
    task = args.task
    if task == "detection":
        gt = _read_valid(args.gt, None, registry, "ground truth")
        pred = _read_valid(args.pred, None, registry, "predictions")
        report = detection_metrics(gt, pred, cfg, registry)
    elif task == "tracking":
        gt = _read_valid(args.gt, "track", registry, "ground truth")
        pred = _read_valid(args.pred, "track", registry, "predictions")
        report = tracking_metrics(gt, pred, cfg)
    else:
        gt = _read_valid(args.gt, "forecast", registry, "ground truth")
        pred = _read_valid(args.pred, "forecast", registry, "predictions")
        report = forecasting_metrics(gt, pred, cfg)
    out = report.to_dict()
    out["config"] = cfg.to_dict()
    _write_json(args.out, out)
    print(format_table(task, report.means))
    run.options["config"] = cfg.to_dict()
    return {"means": report.means}


def _cmd_ensemble(args, run: RunConfig) -> dict:
    entries, cfg = load_manifest(args.manifest)
    if not entries:
        raise ValueError("manifest lists no models")
    kind = infer_kind(entries[0].path)
    models = []
    for entry in entries:
        fs = _read_valid(entry.path, kind, name=f"model {entry.model_id}")
        models.append(ModelOutput(entry.model_id, fs, entry.weight))
    if kind == "forecast":
        fused = ensemble_forecasts(models, cfg, threads=run.threads)
        method = "two_step"
    else:
        models = [ModelOutput(m.model_id, detections_of(m.frames), m.weight) for m in models]
        fused = wbf(models, cfg, threads=run.threads)
        method = "wbf"
    write_frameset(fused, args.out)
    run.options["config"] = cfg.to_dict()
    return {"method": method, "models": len(models), "frames": len(fused), "boxes": fused.num_entries()}


def _cmd_tta_merge(args, run: RunConfig) -> dict:
    spec_path = Path(args.spec)
    spec = _load_json(spec_path)
    threshold = float(spec.get("iou_threshold", 0.5))
    outputs = []
    for item in spec.get("inputs", []):
        path = Path(item["path"])
        if not path.is_absolute():
            path = spec_path.parent / path
        t = TtaTransform(
            float(item.get("scale", 1.0)),
            bool(item.get("flip_xz", False)),
            bool(item.get("flip_yz", False)),
        )
        outputs.append((t, detections_of(_read_valid(path, name="tta input"))))
    merged = tta_merge(outputs, threshold)
    write_frameset(merged, args.out)
    return {"inputs": len(outputs), "frames": len(merged), "boxes": merged.num_entries()}


def _cmd_voxelize(args, run: RunConfig) -> dict:
    cfg = VoxelGridConfig.from_dict(_load_json(args.config)) if args.config else VoxelGridConfig()
    points = read_points(args.points)
    start = time.perf_counter()
    grid = voxelize(points, cfg)
    elapsed = time.perf_counter() - start
    summary = grid.summary()
    summary["config"] = asdict(cfg)
    _write_json(args.out, summary)
    return {"occupied": grid.num_voxels, "voxelize_seconds": elapsed}


def _cmd_resample(args, run: RunConfig) -> dict:
    idx = read_index(args.index)
    weights = cbgs_weights(idx)
    keys = resample(idx, weights, args.n, args.seed)
    counts = np.zeros(len(idx), dtype=int)
    position = {k: i for i, k in enumerate(idx.keys)}
    for k in keys:
        counts[position[k]] += 1
    _write_json(
        args.out,
        {
            "seed": args.seed,
            "n": args.n,
            "weights": [
                {"log_id": k.log_id, "timestamp_ns": k.timestamp_ns, "weight": float(w), "draws": int(c)}
                for k, w, c in zip(idx.keys, weights, counts)
            ],
            "samples": [[k.log_id, k.timestamp_ns] for k in keys],
        },
    )
    return {"entries": len(idx), "draws": len(keys)}


def _cmd_synth(args, run: RunConfig) -> dict:
    spec = SceneSpec.from_dict(_load_json(args.spec))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = generate(spec, threads=run.threads)
    write_frameset(result.gt_tracks, out_dir / "gt_tracks.jsonl")
    write_frameset(result.gt_futures, out_dir / "gt_futures.jsonl")
    write_frameset(detections_of(result.gt_tracks), out_dir / "gt_detections.jsonl")
    fc_entries, det_entries = [], []
    for output, tracks in zip(result.model_outputs, result.model_tracks):
        fc_path = out_dir / f"{output.model_id}_forecasts.jsonl"
        det_path = out_dir / f"{output.model_id}_detections.jsonl"
        write_frameset(output.frames, fc_path)
        write_frameset(tracks, out_dir / f"{output.model_id}_tracks.jsonl")
        write_frameset(detections_of(output.frames), det_path)
        fc_entries.append(ManifestModel(output.model_id, output.weight, fc_path))
        det_entries.append(ManifestModel(output.model_id, output.weight, det_path))
    write_manifest(out_dir / "manifest.json", fc_entries, EnsembleConfig())
    write_manifest(out_dir / "manifest_detections.json", det_entries, EnsembleConfig())
    _write_json(out_dir / "spec.json", spec.to_dict())
    return {
        "logs": spec.num_logs,
        "frames": len(result.gt_tracks),
        "agents": result.gt_tracks.num_entries(),
        "models": len(result.model_outputs),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="perceval",
        description="Ensembling, post-processing and evaluation for 3D detection, tracking and forecasting.",
    )
    parser.add_argument("--version", action="version", version=f"perceval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help=f"worker threads (default: ${THREADS_ENV} or 1)",
        )

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("task", choices=tuple(TABLE_COLUMNS))
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("ensemble", help="fuse several models listed in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_ensemble)

    p = sub.add_parser("tta-merge", help="merge test-time-augmented detections")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_tta_merge)

    p = sub.add_parser("voxelize", help="voxelize a binary point cloud")
    p.add_argument("--points", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_voxelize)

    p = sub.add_parser("resample", help="class-balanced resampling of a dataset index")
    p.add_argument("--index", required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_resample)

    p = sub.add_parser("synth", help="generate a synthetic scene and model outputs")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(handler=_cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    start = time.perf_counter()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    threads = args.threads if args.threads is not None else default_threads()
    run = RunConfig(
        subcommand=args.command if args.command != "evaluate" else f"evaluate {args.task}",
        inputs={k: getattr(args, k) for k in ("gt", "pred", "manifest", "spec", "points", "index") if getattr(args, k, None)},
        outputs={k: getattr(args, k) for k in ("out", "out_dir") if getattr(args, k, None)},
        config_path=getattr(args, "config", None),
        threads=max(1, threads),
        seed=getattr(args, "seed", None),
    )
    status, details, error = 0, {}, None
    try:
        details = args.handler(args, run)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        status, error = 2, f"{type(exc).__name__}: {exc}"
    except (FrameSetError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        status, error = 1, f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        status, error = 2, f"{type(exc).__name__}: {exc}"
    summary = {
        "status": "ok" if status == 0 else "error",
        "exit_code": status,
        "run": asdict(run),
        "result": details,
        "wall_clock_seconds": round(time.perf_counter() - start, 6),
    }
    if error:
        summary["error"] = error
    print(json.dumps(summary, sort_keys=True, default=str), file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
