import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from sphere_depth.data.models import MetricReport, OptimizeConfig, SequenceMeta
from sphere_depth.data.sequence import FrameSequence
from sphere_depth.formats.io_formats import (
    DEPTH_NAME,
    FLOW_NAME,
    cubemap_to_strip,
    load_sequence,
    meta_write,
    pfm_read,
    pfm_write,
    png_read,
    png_write,
    scene_read,
    strip_to_cubemap,
    trace_write,
    validate_raster,
    write_sequence,
)
from sphere_depth.geometry.alignment import adjust_pair, pair_offset, scale_sequence
from sphere_depth.geometry.sphere_geom import check_same_shape, cubemap_to_erp, erp_to_cubemap
from sphere_depth.infrastructure import globals as defaults
from sphere_depth.infrastructure.config_manager import config
from sphere_depth.infrastructure.logging_utils import (
    ConfigurationError,
    InputError,
    NumericalFailureError,
    attach_log_file,
)
from sphere_depth.losses.disparity import distortion_weight, geometric_loss, reproject_frame
from sphere_depth.losses.objectives import depth_metrics
from sphere_depth.losses.temporal import flow_warp, temporal_loss_displacement, temporal_loss_photometric
from sphere_depth.optimization.optimizer import ROTATION_TOLERANCE, DepthParams, optimize_sequence
from sphere_depth.synth.renderer import make_benchmark_sequence
from sphere_depth.utils.console_utils import ConsoleUI
from sphere_depth.version import SPHERE_DEPTH_VERSION, get_core_hash

logger = logging.getLogger("SphereDepth.CLI")

DEFAULT_WIDTH = 512
DEFAULT_HEIGHT = 256


# --- raster helpers --------------------------------------------------------

def _read_raster(path: str) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return validate_raster(pfm_read(path), path).astype(np.float64)
    if suffix == ".png":
        return png_read(path)
    raise InputError(f"unsupported raster format '{suffix}' ({path}); use .pfm or .png")


def _write_raster(path: str, grid: np.ndarray):
    suffix = Path(path).suffix.lower()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if suffix == ".pfm":
        pfm_write(path, grid)
    elif suffix == ".png":
        png_write(path, grid)
    else:
        raise InputError(f"unsupported raster format '{suffix}' ({path}); use .pfm or .png")


def _read_mask(path: str) -> np.ndarray:
    mask = _read_raster(path)
    if mask.ndim == 3:
        mask = np.any(mask > 0, axis=-1)
    return mask > 0


def _check_pair(seq: FrameSequence, pair: List[int]):
    j, k = pair
    for idx in (j, k):
        if not 0 <= idx < len(seq):
            raise ConfigurationError(f"frame {idx} is not in the {len(seq)}-frame sequence")
    if j == k:
        raise ConfigurationError("a pair needs two distinct frames")
    return j, k


def _optimize_config(args: argparse.Namespace) -> OptimizeConfig:
    overrides = {
        "epochs": args.epochs,
        "step_size": args.step_size,
        "downsample": args.downsample,
        "geometric_weight": args.geometric_weight,
        "temporal_weight": args.temporal_weight,
        "update": args.update,
        "threads": args.threads,
        "weight_mode": args.weight_mode,
        "skip_insufficient_overlap": args.skip_insufficient_overlap or None,
    }
    try:
        return OptimizeConfig(**{k: v for k, v in overrides.items() if v is not None})
    except ValidationError as exc:
        raise ConfigurationError(f"invalid optimization settings: {exc.errors()[0]['msg']}")


# --- subcommands -----------------------------------------------------------

def cmd_render(args: argparse.Namespace):
    width, height = args.width or DEFAULT_WIDTH, args.height or DEFAULT_HEIGHT
    scene = scene_read(args.scene) if args.scene else None
    if args.verbose:
        ConsoleUI.step_header("Render", f"{args.frames} frames at {width}x{height}")
    bench = make_benchmark_sequence(args.seed, args.frames, width, height, scene=scene, threads=args.threads)
    meta = SequenceMeta(
        width=width,
        height=height,
        frames=args.frames,
        baseline=bench.spacing,
        seed=None if args.scene else args.seed,
        pairs=sorted(bench.flows),
    )
    out = write_sequence(args.out, bench.sequence, meta, depths=bench.depths, scene=bench.scene)
    ConsoleUI.result(frames=args.frames, flows=len(bench.flows), spacing=bench.spacing, out=out)


def cmd_adjust(args: argparse.Namespace):
    manifest = load_sequence(args.in_dir)
    seq = manifest.sequence
    j, k = _check_pair(seq, args.pair)
    frame_j = replace(seq.frames[j], depth=manifest.depths[j])
    frame_k = replace(seq.frames[k], depth=manifest.depths[k])
    adjusted_j, adjusted_k, R_align, baseline = adjust_pair(frame_j, frame_k)

    # flows are pixel motions of the original rasters; they only survive an identity re-render
    unrotated = all(np.array_equal(R_align @ f.pose.rotation, np.eye(3)) for f in (frame_j, frame_k))
    flows: Dict = {}
    if unrotated:
        for (src, dst), new_key in (((j, k), (0, 1)), ((k, j), (1, 0))):
            if (src, dst) in seq.flows:
                flows[new_key] = seq.flows[(src, dst)]
    elif seq.flows:
        logger.warning(f"Flows of pair {j}->{k} dropped: the adjusted frames are rotated")

    adjusted = FrameSequence(frames=[adjusted_j, adjusted_k], sequence_id=seq.sequence_id, flows=flows)
    depths = [adjusted_j.depth, adjusted_k.depth]
    meta = SequenceMeta(
        width=seq.width,
        height=seq.height,
        frames=2,
        baseline=baseline,
        scale=manifest.meta.scale,
        seed=manifest.meta.seed,
        pairs=sorted(flows),
    )
    out = Path(args.out) if args.out else Path(args.in_dir) / f"pair_{j:04d}_{k:04d}"
    write_sequence(out, adjusted, meta, depths=depths if all(d is not None for d in depths) else None,
                   scene=manifest.scene)

    yaw = float(np.degrees(np.arctan2(R_align[0, 2], R_align[0, 0]))) + 0.0
    rotation = "identity" if np.array_equal(R_align, np.eye(3)) else "yaw"
    ConsoleUI.result(pair=f"{j}:{k}", rotation=rotation, yaw_deg=yaw, baseline=baseline, flows=len(flows), out=out)


def cmd_loss(args: argparse.Namespace):
    manifest = load_sequence(args.in_dir)
    seq = manifest.sequence
    j, k = _check_pair(seq, args.pair)
    frame_j, frame_k = seq.frames[j], seq.frames[k]
    if np.max(np.abs(frame_j.pose.rotation - frame_k.pose.rotation)) > ROTATION_TOLERANCE:
        raise ConfigurationError(f"pair {j}->{k} is not rotation-aligned; run 'adjust' first")

    terms = [t for t in ("geometric", "temporal", "photometric") if getattr(args, t)] or ["geometric", "temporal"]
    min_coverage = args.min_coverage if args.min_coverage is not None else defaults.MIN_COVERAGE
    offset = pair_offset(frame_j.pose, frame_k.pose)
    M = distortion_weight(seq.width, seq.height, args.weight_mode)

    depth = _read_raster(args.depth) if args.depth else manifest.depths[j]
    if depth is None and {"geometric", "temporal"} & set(terms):
        raise InputError(f"no depth for frame {j}: missing {Path(args.in_dir) / DEPTH_NAME.format(j)}; pass --depth")
    flow = seq.flows.get((j, k))
    if flow is None and {"temporal", "photometric"} & set(terms):
        raise InputError(f"missing flow file: {Path(args.in_dir) / FLOW_NAME.format(j, k)}")

    values: Dict[str, object] = {"pair": f"{j}:{k}", "baseline": float(np.linalg.norm(offset))}
    if "geometric" in terms:
        warp = reproject_frame(frame_j.image, depth, offset)
        values["geometric"], values["coverage"] = geometric_loss(warp, frame_k.image, M, min_coverage)
    if "temporal" in terms:
        values["temporal"] = temporal_loss_displacement(depth, offset, flow, M)
    if "photometric" in terms:
        values["photometric"] = temporal_loss_photometric(flow_warp(frame_j.image, flow), frame_k.image, min_coverage)
    ConsoleUI.result(**values)


def cmd_optimize(args: argparse.Namespace):
    cfg = _optimize_config(args)
    in_dir = Path(args.in_dir)
    manifest = load_sequence(in_dir)
    seq = manifest.sequence

    if cfg.temporal_weight > 0 or cfg.photometric_weight > 0:
        for j, k in cfg.pair_policy.pairs(len(seq)):
            if (j, k) not in seq.flows:
                raise InputError(f"missing flow file: {in_dir / FLOW_NAME.format(j, k)}")

    if args.init:
        init = [_read_raster(path) for path in args.init]
    else:
        init = manifest.depths
        if any(d is None for d in init):
            missing = next(idx for idx, d in enumerate(init) if d is None)
            raise InputError(f"no initial depth: pass --init or provide {in_dir / DEPTH_NAME.format(missing)}")
    if len(init) != len(seq):
        raise ConfigurationError(f"{len(init)} initial depth maps for {len(seq)} frames")

    scale = manifest.meta.scale
    if args.recon_scale:
        seq, scale = scale_sequence(seq.with_depths(init))
        ConsoleUI.status_line(f"translations scaled by {scale:.6g}", "SCALE")

    params = DepthParams.from_depth(init, cfg.downsample, cfg.depth_min, cfg.depth_max)
    refined, trace = optimize_sequence(seq, params, cfg)

    out = Path(args.out) if args.out else in_dir / "refined"
    out.mkdir(parents=True, exist_ok=True)
    # zero epochs write the init rasters unchanged
    outputs = init if cfg.epochs == 0 else refined.depths()
    for idx, depth in enumerate(outputs):
        pfm_write(out / DEPTH_NAME.format(idx), depth)
    trace_write(out / "trace.txt", trace)
    meta_write(out / "meta.txt", manifest.meta.model_copy(update={"scale": scale}))
    logger.info(f"Refined depth for {len(seq)} frames written to {out}")
    ConsoleUI.result(epochs=cfg.epochs, initial=trace[0].total, final=trace[-1].total,
                     accepted=sum(r.accepted for r in trace[1:]), out=out)


def cmd_eval(args: argparse.Namespace):
    if len(args.pred) != len(args.gt):
        raise ConfigurationError(f"{len(args.pred)} predictions for {len(args.gt)} ground-truth maps")
    if args.mask and len(args.mask) != len(args.gt):
        raise ConfigurationError(f"{len(args.mask)} masks for {len(args.gt)} ground-truth maps")

    preds, gts, masks = [], [], []
    for idx, (pred_path, gt_path) in enumerate(zip(args.pred, args.gt)):
        pred, gt = _read_raster(pred_path), _read_raster(gt_path)
        check_same_shape(pred, gt, spatial_only=False)
        mask = _read_mask(args.mask[idx]) if args.mask else np.ones(gt.shape, dtype=bool)
        check_same_shape(mask, gt, spatial_only=False)
        preds.append(pred.ravel())
        gts.append(gt.ravel())
        masks.append(mask.ravel())

    report = depth_metrics(np.concatenate(preds), np.concatenate(gts), np.concatenate(masks),
                           median_scaling=args.median_scaling)
    ConsoleUI.table(MetricReport.table_header(), [report.table_row()])
    print(report.to_record())
    if args.append:
        path = Path(args.append)
        new_file = not path.exists()
        with open(path, "a") as f:
            if new_file:
                f.write(MetricReport.table_header() + "\n")
            f.write(report.table_row() + "\n")


def cmd_convert(args: argparse.Namespace):
    grid = _read_raster(args.in_path)
    target = args.to or ("erp" if grid.shape[1] == 6 * grid.shape[0] else "cubemap")
    if target == "cubemap":
        face_size = args.face_size or grid.shape[1] // 4
        converted = cubemap_to_strip(erp_to_cubemap(grid, face_size))
    else:
        cm = strip_to_cubemap(grid)
        face_size = cm.shape[1]
        converted = cubemap_to_erp(cm, args.width or 4 * face_size, args.height or 2 * face_size)
    _write_raster(args.out, converted)
    ConsoleUI.result(to=target, face_size=face_size, width=converted.shape[1], height=converted.shape[0], out=args.out)


COMMANDS = {
    "render": cmd_render,
    "adjust": cmd_adjust,
    "loss": cmd_loss,
    "optimize": cmd_optimize,
    "eval": cmd_eval,
    "convert": cmd_convert,
}


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphere-depth", description="360° depth consistency toolkit")
    parser.add_argument("--version", action="version",
                        version=f"sphere-depth {SPHERE_DEPTH_VERSION} (core {get_core_hash()})")
    parser.add_argument("--width", type=int, help="ERP width in pixels")
    parser.add_argument("--height", type=int, help="ERP height in pixels")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, help="Worker threads; results do not depend on it")
    parser.add_argument("--weight-mode", choices=["full", "polar_only"], help="Distortion weight of the losses")
    parser.add_argument("--config", type=str, help="YAML/JSON config file")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="Render a synthetic benchmark sequence")
    p.add_argument("--scene", type=str, help="Scene file; a seeded random scene when omitted")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("adjust", help="Rotate a frame pair into a left-right stereo pair")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--pair", type=int, nargs=2, metavar=("J", "K"), required=True)
    p.add_argument("--out", help="Output directory (default <in>/pair_JJJJ_KKKK)")

    p = sub.add_parser("loss", help="Evaluate the consistency terms of one pair")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--pair", type=int, nargs=2, metavar=("J", "K"), required=True)
    p.add_argument("--depth", help="Depth of frame J (default: the sequence's depth file)")
    p.add_argument("--geometric", action="store_true")
    p.add_argument("--temporal", action="store_true")
    p.add_argument("--photometric", action="store_true")
    p.add_argument("--min-coverage", type=float)

    p = sub.add_parser("optimize", help="Test-time refinement of per-frame depth")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--init", nargs="+", help="Initial depth PFMs, one per frame (default: the sequence's depth files)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--downsample", type=int)
    p.add_argument("--geometric-weight", type=float)
    p.add_argument("--temporal-weight", type=float)
    p.add_argument("--update", choices=["normalized", "gradient"])
    p.add_argument("--skip-insufficient-overlap", action="store_true")
    p.add_argument("--recon-scale", action="store_true", help="Scale translations from recon_%%04d.pfm first")
    p.add_argument("--out", help="Output directory (default <in>/refined)")

    p = sub.add_parser("eval", help="Score predicted depth against ground truth")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--mask", nargs="+")
    p.add_argument("--median-scaling", action="store_true")
    p.add_argument("--append", help="Append the table row to this file")

    p = sub.add_parser("convert", help="Convert between ERP and cubemap strip rasters")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--to", choices=["cubemap", "erp"])
    p.add_argument("--face-size", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Runs one subcommand and returns the exit code: 0 ok, 2 input error, 3 numerical failure."""
    args = build_parser().parse_args(argv)
    root_logger = logging.getLogger("SphereDepth")
    if args.verbose:
        root_logger.setLevel(logging.INFO)

    try:
        if args.config:
            config.reset()
            config.load_config(config_path=args.config)
            defaults.reload_globals()
        if defaults.LOG_FILE:
            attach_log_file(root_logger, defaults.LOG_FILE)
        args.threads = args.threads or defaults.THREADS
        args.weight_mode = args.weight_mode or defaults.WEIGHT_MODE

        if args.verbose:
            ConsoleUI.banner(SPHERE_DEPTH_VERSION, get_core_hash())
        ConsoleUI.config_echo(args.command, {
            "version": SPHERE_DEPTH_VERSION,
            "width": args.width or "auto",
            "height": args.height or "auto",
            "seed": args.seed,
            "threads": args.threads,
            "weight_mode": args.weight_mode,
        })
        COMMANDS[args.command](args)
    except NumericalFailureError as exc:
        logger.error(f"{args.command} failed: {exc}")
        ConsoleUI.error(str(exc))
        return 3
    except (InputError, OSError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        ConsoleUI.error(str(exc))
        return 2
    return 0


def run_cli():
    """Main entry point for the sphere-depth command."""
    sys.exit(main())


if __name__ == "__main__":
    run_cli()
