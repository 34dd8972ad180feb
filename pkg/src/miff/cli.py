"""Command-line interface: ``miff <subcommand> [options]``.

Exit codes: 0 success, 2 bad input/format/config, 3 infeasible optimization,
4 unstabilizable video, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, MiffError
from .features import FeatureStream, load_feature_stream, save_feature_stream, stream_scores
from .pgm import read_pgm, write_pgm
from .pipeline import (
    AUTO,
    PipelineConfig,
    select_frames,
    segment_graphs,
    build_report,
    dump_json,
    make_speedup_solver,
    run_pipeline,
    write_outputs,
)
from .graph import CostInputs
from .profile import SegmentTree, refine_multi_importance
from .pso import optimize_speedup_lambdas
from .scenario import preset, synthesize_scenario
from .speedup import SpeedupProblem, solve_speedups
from .stabilizer import render_stabilized, stabilize

log = logging.getLogger("miff")


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(seed=args.seed, required_speedup=args.speedup)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, obj) -> None:
    path.write_text(dump_json(obj))
    log.info("wrote %s", path)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def load_rasters(stream: FeatureStream, features_path) -> list[np.ndarray] | None:
    """Rasters referenced by the stream (paths relative to the stream file), or None."""
    refs = [f.raster_ref for f in stream.frames]
    if any(r is None for r in refs):
        return None
    base = Path(features_path).parent
    return [read_pgm(base / r) for r in refs]


def _tree_from_file(path, length: int) -> SegmentTree:
    tree = SegmentTree.from_dict(_read_json(path))
    if tree.length != length:
        raise FormatError(f"{path}: segments cover {tree.length} frames, stream has {length}")
    return tree


# --- subcommands --------------------------------------------------------------


def cmd_synth(args) -> None:
    cfg = _load_config(args)
    out = _out(args)
    spec = preset(args.preset, args.length, args.fps, seed=cfg.seed, render_rasters=args.rasters)
    stream, truth = synthesize_scenario(spec)
    if truth.rasters is not None:
        (out / "rasters").mkdir(exist_ok=True)
        frames = []
        for k, (f, img) in enumerate(zip(stream.frames, truth.rasters)):
            ref = f"rasters/frame_{k:05d}.pgm"
            write_pgm(out / ref, img)
            frames.append(dataclasses.replace(f, raster_ref=ref))
        stream = FeatureStream(tuple(frames), stream.fps, stream.external_score)
    save_feature_stream(stream, out / "features.jsonl")
    _write(
        out / "ground_truth.json",
        {
            "version": 1,
            "preset": args.preset,
            "seed": cfg.seed,
            "semantic_blocks": [list(b) for b in spec.semantic_blocks],
            "labels": truth.labels.tolist(),
            "poses": [p.ravel().tolist() for p in truth.poses],
        },
    )


def cmd_score(args) -> None:
    cfg = _load_config(args)
    stream = load_feature_stream(args.features)
    scores = stream_scores(stream, cfg.score.floors, cfg.score.norms)
    _write(_out(args) / "scores.json", {"version": 1, "scores": scores.tolist()})


def cmd_segment(args) -> None:
    cfg = _load_config(args)
    stream = load_feature_stream(args.features)
    scores = stream_scores(stream, cfg.score.floors, cfg.score.norms)
    runs: list[dict] = []
    tree = refine_multi_importance(
        scores,
        stream.fps,
        cfg.required_speedup,
        cfg.profile.t,
        make_speedup_solver(cfg, runs),
        cfg.profile.num_bins,
        cfg.profile.max_levels,
    )
    out = _out(args)
    _write(out / "segments.json", tree.to_dict())
    _write(out / "pso_trace.json", {"version": 1, "runs": runs})


def cmd_speedup(args) -> None:
    cfg = _load_config(args)
    F_d, F_max = cfg.required_speedup, cfg.speedup.F_max
    result = {"version": 1, "L_s": args.ls, "L_ns": args.lns, "required_speedup": F_d}
    if cfg.speedup.lambdas == AUTO:
        p = cfg.pso
        res = optimize_speedup_lambdas(
            args.ls, args.lns, F_d, F_max, cfg.pso_config(2, p.speedup_bounds, p.swarm, p.iterations, cfg.seed)
        )
        lam = res.position.tolist()
        _write(_out(args) / "pso_trace.json", {"version": 1, "runs": [{"stage": "speedup", **res.to_dict()}]})
    else:
        lam = list(cfg.speedup.lambdas)
    sol = solve_speedups(SpeedupProblem(args.ls, args.lns, F_d, float(lam[0]), float(lam[1]), F_max))
    result.update(
        lambdas=lam, F_s=sol.F_s, F_ns=sol.F_ns, objective=sol.objective, D=sol.D, p_s=sol.p_s,
        achieved_speedup=sol.achieved(args.ls, args.lns),
    )
    _write(_out(args) / "speedup.json", result)


def cmd_select(args) -> None:
    cfg = _load_config(args)
    if cfg.graph.lambdas == AUTO:
        raise ConfigError("'select' needs explicit graph lambdas; use 'run' for automatic tuning")
    stream = load_feature_stream(args.features)
    scores = stream_scores(stream, cfg.score.floors, cfg.score.norms)
    tree = _tree_from_file(args.segments, len(stream))
    graphs = segment_graphs(CostInputs.from_stream(stream, scores), tree.leaves, cfg.graph_weights((1, 1, 1, 1)))
    selection, paths, costs = select_frames(graphs, cfg.graph.lambdas)
    _write(
        _out(args) / "selection.json",
        {
            "version": 1,
            "frames": selection,
            "graph_lambdas": list(cfg.graph.lambdas),
            "segments": [{**s.to_dict(), "path": p, "cost": c} for s, p, c in zip(tree.leaves, paths, costs)],
        },
    )


def _selection_from_file(path, length: int) -> list[int]:
    frames = _read_json(path).get("frames")
    if not isinstance(frames, list) or not all(isinstance(f, int) and 0 <= f < length for f in frames):
        raise FormatError(f"{path}: 'frames' must list frame indices of the stream")
    return frames


def cmd_stabilize(args) -> None:
    cfg = _load_config(args)
    stream = load_feature_stream(args.features)
    scores = stream_scores(stream, cfg.score.floors, cfg.score.norms)
    selection = _selection_from_file(args.selection, len(stream))
    plan = stabilize(selection, stream, cfg.stabilizer_config(), scores)
    out = _out(args)
    _write(out / "plan.json", plan.to_dict())
    if args.render:
        rasters = load_rasters(stream, args.features)
        if rasters is None:
            raise FormatError("--render needs a raster for every frame")
        (out / "stabilized").mkdir(exist_ok=True)
        for k, img in enumerate(render_stabilized(plan, rasters)):
            write_pgm(out / "stabilized" / f"out_{k:05d}.pgm", img)


def cmd_metrics(args) -> None:
    cfg = _load_config(args)
    stream = load_feature_stream(args.features)
    scores = stream_scores(stream, cfg.score.floors, cfg.score.norms)
    selection = _selection_from_file(args.selection, len(stream))
    tree = _tree_from_file(args.segments, len(stream))
    plan = None
    if args.stabilize:
        # The plan is deterministic per seed, so it is rebuilt rather than parsed.
        plan = stabilize(selection, stream, cfg.stabilizer_config(), scores)
    report = build_report(stream, scores, tree, selection, plan, cfg, load_rasters(stream, args.features))
    _write(_out(args) / "report.json", report)


def cmd_run(args) -> None:
    cfg = _load_config(args)
    stream = load_feature_stream(args.features)
    result = run_pipeline(stream, cfg, load_rasters(stream, args.features))
    write_outputs(result, _out(args), cfg)


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (versioned; unknown keys rejected)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--speedup", type=float, help="override the required speed-up F_d")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="miff", description="Multi-importance semantic fast-forward.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic feature stream")
    p.add_argument("--preset", default="25p", choices=["0p", "25p", "50p", "75p", "two-level", "jitter"])
    p.add_argument("--length", type=int, default=3000)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--rasters", action="store_true", help="also render grayscale PGM frames")
    p.set_defaults(func=cmd_synth)

    for name, func, help_ in (
        ("score", cmd_score, "per-frame semantic scores"),
        ("segment", cmd_segment, "multi-importance segmentation and speed-ups"),
        ("run", cmd_run, "the whole pipeline"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("features", help="feature stream (JSON Lines)")
        p.set_defaults(func=func)

    p = sub.add_parser("speedup", parents=[common], help="solve one speed-up assignment")
    p.add_argument("--ls", type=int, required=True, help="semantic frame count")
    p.add_argument("--lns", type=int, required=True, help="non-semantic frame count")
    p.set_defaults(func=cmd_speedup)

    p = sub.add_parser("select", parents=[common], help="shortest-path frame selection")
    p.add_argument("features")
    p.add_argument("--segments", required=True, help="segments.json")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("stabilize", parents=[common], help="stabilization plan for a selection")
    p.add_argument("features")
    p.add_argument("--selection", required=True, help="selection.json")
    p.add_argument("--render", action="store_true", help="write stabilized PGM frames")
    p.set_defaults(func=cmd_stabilize)

    p = sub.add_parser("metrics", parents=[common], help="evaluation report for a selection")
    p.add_argument("features")
    p.add_argument("--selection", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--stabilize", action="store_true", help="include stabilization and instability")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except MiffError as exc:
        print(f"miff: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"miff: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
