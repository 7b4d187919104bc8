"""Command-line entry point: ``sds ingest | run | evaluate | plot | grid | synth | simulate``.

Exit codes: 0 ok, 2 input error, 3 pipeline failure, 4 transport/auth failure.
"""
import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ClientError, InputError, SDSError, SusChainError

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE, EXIT_CLIENT = 0, 2, 3, 4


def _config_from_args(args, **extra):
    from .evolution import RunConfig

    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    overrides = {
        "demo": getattr(args, "demo", None), "frames": getattr(args, "frames", None),
        "run_dir": getattr(args, "run_dir", None), "run_id": getattr(args, "run_id", None),
        "skill": getattr(args, "skill", None), "n_iterations": getattr(args, "iterations", None),
        "n_candidates": getattr(args, "candidates", None), "budget": getattr(args, "budget", None),
        "seed": getattr(args, "seed", None), "pixels_to_meters": getattr(args, "scale", None),
        "clip_seconds": getattr(args, "seconds", None), "workers": getattr(args, "workers", None),
        "fixtures": getattr(args, "fixtures", None),
    }
    base.update({key: value for key, value in overrides.items() if value is not None})
    if getattr(args, "live", False):
        base["client"] = "live"
    elif getattr(args, "mock", None):
        base["client"] = args.mock
    if getattr(args, "ablate", None):
        base["ablate"] = sorted(set(base.get("ablate", [])) | set(args.ablate))
    base.update(extra)
    return RunConfig.from_json(base)


def _add_common(parser, run=True):
    parser.add_argument("--config", help="JSON config file; flags override its keys")
    parser.add_argument("--demo", help="demonstration keypoint JSON")
    parser.add_argument("--frames", help="optional demonstration video or frame directory")
    parser.add_argument("--scale", type=float, help="metres per normalised keypoint unit")
    parser.add_argument("--seconds", type=float, help="clip duration used for grid sizing")
    parser.add_argument("--skill", help="gait label overriding the keypoint hint")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--mock", choices=("fixture", "procedural"), help="offline chat backend")
    parser.add_argument("--live", action="store_true", help="use the HTTP endpoint from SDS_* variables")
    parser.add_argument("--fixtures", help="fixture file for --mock fixture")
    parser.add_argument("--ablate", action="append", choices=("gs", "cp", "sus", "grid"),
                   help="drop a prompting component (repeatable)")


def cmd_ingest(args):
    from .evolution import prepare_demo
    from .vlm import TranscriptLog, make_client
    from .vlm.prompts import run_sus_chain

    cfg = _config_from_args(args)
    out = Path(args.out)
    info, _ = prepare_demo(cfg, out)
    print(f"velocity {info['velocity']:.3f} m/s, grid {info['grid']['h']}x{info['grid']['h']} "
          f"(n={info['grid']['n']}, tau={info['grid']['tau']:.3f} s), keypoint gait {info['keypoint_label']}")
    if "sus" in cfg.ablate:
        return EXIT_OK
    client = make_client(cfg.client, seed=cfg.seed, fixtures=cfg.fixtures, n_candidates=cfg.n_candidates)
    gv = info["gv"] if isinstance(info["gv"], list) else [info["gv"]]
    sus = run_sus_chain(client, gv, info["overlays"], hint=info["hint"], log=TranscriptLog(out / "transcripts"),
                        temperature=0.0, seed=cfg.seed)
    (out / "sus.json").write_text(json.dumps(sus.to_json(), indent=2, sort_keys=True))
    print(sus.final_sus_prompt)
    return EXIT_OK


def cmd_run(args):
    from .evolution import run_pipeline

    cfg = _config_from_args(args)
    rf, params, root = run_pipeline(cfg)
    report = json.loads((root / "report.json").read_text())
    metrics = report["metrics"]
    print(f"run directory: {root}")
    print(f"RF* from iteration {rf['iteration']} (candidate {rf['index']}), score {rf['score']['criteria']}")
    print(f"score history: {report['score_history']}")
    print(f"gait {metrics['label']} vs target {metrics['target']}: contact match {metrics['match_percent']:.1f}%, "
          f"DTW {metrics['dtw']:.4g}, mean StS {metrics['sts']:.3f}, resets {metrics['reset_count']} "
          f"(3000 steps: {metrics['reset_count_3000']})")
    return EXIT_OK


def cmd_evaluate(args):
    from .evaluator import gait_report, sts_series
    from .ingest import KeypointTrajectory
    from .plotting import render_contact_plot, render_height_trace, render_sts
    from .sim import RolloutTrace
    from .synth import demo_scale

    trace = RolloutTrace.load(args.trace)
    demo = KeypointTrajectory.load(args.demo) if args.demo else None
    scale = args.scale or (demo_scale(args.demo) if args.demo else None) or 2.0
    metrics = gait_report(trace, demo, scale, args.target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sts = sts_series(trace)
    metrics["sts_series"] = "sts.csv"
    (out / "metrics.json").write_text(json.dumps(_jsonable(metrics), indent=2, sort_keys=True) + "\n")
    with (out / "sts.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "sts"])
        for idx, value in enumerate(sts):
            writer.writerow([f"{idx * trace.dt:.4f}", f"{value:.6f}"])
    render_contact_plot(trace.contacts, out / "contacts")
    render_height_trace(trace.observations.base_height, trace.dt, out / "base_height")
    render_sts(sts, trace.dt, out / "sts")
    dtw = "n/a" if metrics["dtw"] is None else f"{metrics['dtw']:.4g}"
    print(f"label {metrics['label']} (margin {metrics['margin']:.1f}), match {metrics['match_percent']:.1f}% "
          f"vs {metrics['target']}, DTW {dtw}, mean StS {metrics['sts']:.3f}")
    return EXIT_OK


def cmd_plot(args):
    from .plotting import render_contact_plot, render_height_trace, render_score_history
    from .sim import ContactSequence, RolloutTrace

    out = Path(args.out)
    written = []
    if args.trace:
        trace = RolloutTrace.load(args.trace)
        written += render_contact_plot(trace.contacts, out / "contacts", max_steps=args.max_steps)
        written += render_height_trace(trace.observations.base_height, trace.dt, out / "base_height")
    if args.contacts:
        written += render_contact_plot(ContactSequence.read_csv(args.contacts), out / "contacts",
                                       max_steps=args.max_steps)
    if args.run:
        try:
            history = json.loads((Path(args.run) / "report.json").read_text())["score_history"]
        except (OSError, KeyError, ValueError) as exc:
            raise InputError(f"{args.run}: no readable report.json ({exc})") from None
        written += render_score_history([val or 0 for val in history], out / "score_history")
    if not written:
        raise InputError("nothing to plot: give --trace, --contacts or --run")
    for pth in written:
        print(pth)
    return EXIT_OK


def cmd_grid(args):
    from .evolution import ROLLOUT_MPU, ROLLOUT_ZOOM
    from .ingest import (KeypointTrajectory, compose_grid, compute_grid_dims, estimate_velocity, load_frames,
                         sample_frames, trajectory_clip)
    from .sim import RolloutTrace
    from .synth import demo_scale

    if bool(args.demo) == bool(args.trace):
        raise InputError("give exactly one of --demo or --trace")
    if args.demo:
        traj = KeypointTrajectory.load(args.demo)
        scale = args.scale or demo_scale(args.demo) or ROLLOUT_MPU
        kind = "demo"
    else:
        traj = RolloutTrace.load(args.trace).keypoints
        scale, kind = ROLLOUT_MPU, "rollout"
    speed = args.speed or estimate_velocity(traj, scale)
    seconds = args.seconds or traj.duration
    n_frames, tau, side = compute_grid_dims(seconds, speed)
    clip = load_frames(args.frames, fps=traj.fps) if args.frames else \
        trajectory_clip(traj, zoom=ROLLOUT_ZOOM * scale / ROLLOUT_MPU)
    grid = compose_grid(sample_frames(clip, n_frames, tau), kind, args.out)
    print(f"{side}x{side} grid (n={n_frames}, tau={tau:.3f} s, v={speed:.3f} m/s) -> {args.out}; frames {grid.cells}")
    return EXIT_OK


def cmd_synth(args):
    from .synth import write_demo

    demo, scale = write_demo(args.out, args.gait, seconds=args.seconds, seed=args.seed, noise=args.noise)
    print(f"{args.gait}: {len(demo)} frames at {demo.fps:g} fps, {scale:.3f} m/unit -> {args.out}")
    return EXIT_OK


def cmd_simulate(args):
    from .sim import GaitParameters, rollout
    from .synth import demo_params

    if args.params:
        params = GaitParameters.from_json(json.loads(Path(args.params).read_text()))
    else:
        params = demo_params(args.gait, args.speed)
    trace = rollout(params, steps=args.steps, command=(params.forward_speed, 0.0, 0.0))
    trace.save(args.out)
    print(f"{args.steps} steps, resets {trace.reset_count} -> {args.out}")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {key: _jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(value) for value in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def build_parser():
    parser = argparse.ArgumentParser(prog="sds", description="Demonstration-to-gait reward synthesis.")
    sub = parser.add_subparsers(dest="command", required=True)

    cmd = sub.add_parser("ingest", help="velocity, grid and skill specification for a demonstration")
    _add_common(cmd)
    cmd.add_argument("--out", default="ingest", help="output directory")
    cmd.set_defaults(func=cmd_ingest)

    cmd = sub.add_parser("run", help="full closed-loop pipeline")
    _add_common(cmd)
    cmd.add_argument("--run-dir")
    cmd.add_argument("--run-id")
    cmd.add_argument("--iterations", type=int)
    cmd.add_argument("--candidates", type=int)
    cmd.add_argument("--budget", type=int, help="optimizer iterations per candidate")
    cmd.add_argument("--workers", type=int)
    cmd.set_defaults(func=cmd_run)

    cmd = sub.add_parser("evaluate", help="metrics and figures for a saved rollout trace")
    cmd.add_argument("--trace", required=True, help="trace directory (from simulate or a run)")
    cmd.add_argument("--demo", help="demonstration keypoint JSON for DTW")
    cmd.add_argument("--scale", type=float)
    cmd.add_argument("--target", help="gait label to match against (default: classified label)")
    cmd.add_argument("--out", default="evaluation")
    cmd.set_defaults(func=cmd_evaluate)

    cmd = sub.add_parser("plot", help="contact plot, height trace or score history")
    cmd.add_argument("--trace")
    cmd.add_argument("--contacts", help="contact CSV")
    cmd.add_argument("--run", help="run directory with report.json")
    cmd.add_argument("--max-steps", type=int)
    cmd.add_argument("--out", default="plots")
    cmd.set_defaults(func=cmd_plot)

    cmd = sub.add_parser("grid", help="frame grid for a demonstration or rollout")
    cmd.add_argument("--demo")
    cmd.add_argument("--trace")
    cmd.add_argument("--frames")
    cmd.add_argument("--scale", type=float)
    cmd.add_argument("--speed", type=float)
    cmd.add_argument("--seconds", type=float)
    cmd.add_argument("--out", default="grid.png")
    cmd.set_defaults(func=cmd_grid)

    cmd = sub.add_parser("synth", help="write a synthetic demonstration keypoint file")
    cmd.add_argument("--gait", default="Trot")
    cmd.add_argument("--seconds", type=float)
    cmd.add_argument("--noise", type=float, default=0.0005, help="keypoint jitter std in metres")
    cmd.add_argument("--seed", type=int, default=0)
    cmd.add_argument("--out", default="demo.json")
    cmd.set_defaults(func=cmd_synth)

    cmd = sub.add_parser("simulate", help="roll out a gait and save the trace")
    cmd.add_argument("--gait", default="Trot")
    cmd.add_argument("--speed", type=float)
    cmd.add_argument("--params", help="GaitParameters JSON instead of a reference gait")
    cmd.add_argument("--steps", type=int, default=1000)
    cmd.add_argument("--out", default="trace")
    cmd.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SusChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLIENT if isinstance(exc.__cause__, ClientError) else EXIT_PIPELINE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLIENT
    except SDSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
