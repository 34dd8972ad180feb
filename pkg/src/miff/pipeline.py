"""End-to-end orchestration: scoring, segmentation, speed-ups, frame selection,
stabilization and evaluation, with a strict versioned JSON configuration."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, FeatureMissingError, MiffError, StageError
from .features import DEFAULT_CONFIDENCE_FLOOR, DEFAULT_CONFIDENCE_NORM, FeatureStream, stream_scores
from .graph import CostInputs, GraphWeights, TransitionGraph, build_graph, compose_selection, frame_foe, shortest_path
from .metrics import InstabilityConfig, achieved_speedup, instability_index, semantic_retention
from .profile import SEMANTIC, Segment, SegmentTree, refine_multi_importance
from .pso import GraphFitnessContext, PsoConfig, PsoResult, fitness_graph_weights, optimize_speedup_lambdas, pso_optimize
from .speedup import SpeedupProblem, SpeedupSolution, solve_speedups
from .stabilizer import StabilizationPlan, StabilizerConfig, crop_unstabilized, render_stabilized, stabilize

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
AUTO = "auto"


# --- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class ScoreSettings:
    floors: dict = field(default_factory=lambda: dict(DEFAULT_CONFIDENCE_FLOOR))
    norms: dict = field(default_factory=lambda: dict(DEFAULT_CONFIDENCE_NORM))


@dataclass(frozen=True)
class ProfileSettings:
    t: float = 0.9
    num_bins: int = 256
    max_levels: int = 8


@dataclass(frozen=True)
class SpeedupSettings:
    # "auto" tunes (lambda1, lambda2) with the swarm at every refinement pass.
    lambdas: Any = AUTO
    F_max: float | None = None


@dataclass(frozen=True)
class GraphSettings:
    # (lambda_I, lambda_V, lambda_A, lambda_S) or "auto".
    lambdas: Any = (1.0, 1.0, 1.0, 10.0)
    epsilon: float = 1.0
    tau_max: int = 100
    tau_b: int = 30


@dataclass(frozen=True)
class PsoSettings:
    swarm: int = 30
    iterations: int = 100
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    neighbors: int = 1
    speedup_bounds: tuple = (0.0, 10.0)
    graph_bounds: tuple = (0.0, 10.0)
    # Each graph-weight evaluation solves every segment graph, so that swarm is smaller.
    graph_swarm: int = 10
    graph_iterations: int = 10


@dataclass(frozen=True)
class StabilizerSettings:
    enabled: bool = True
    alpha: int = 4
    dp: float = 0.5
    cp: float = 0.9
    eta: float = 0.5
    sigma_rep: float = 10.0
    ransac_iterations: int = 200
    ransac_threshold: float = 2.0


@dataclass(frozen=True)
class MetricsSettings:
    buffer_size: int | None = None
    stride: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    version: int = CONFIG_VERSION
    required_speedup: float = 10.0
    seed: int = 0
    score: ScoreSettings = field(default_factory=ScoreSettings)
    profile: ProfileSettings = field(default_factory=ProfileSettings)
    speedup: SpeedupSettings = field(default_factory=SpeedupSettings)
    graph: GraphSettings = field(default_factory=GraphSettings)
    pso: PsoSettings = field(default_factory=PsoSettings)
    stabilizer: StabilizerSettings = field(default_factory=StabilizerSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if not (isinstance(self.required_speedup, (int, float)) and self.required_speedup >= 1):
            raise ConfigError("required_speedup must be a number >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not 0 < self.profile.t < 1:
            raise ConfigError("profile.t must lie in (0, 1)")
        if self.profile.num_bins < 2 or self.profile.max_levels < 1:
            raise ConfigError("profile.num_bins must be >= 2 and profile.max_levels >= 1")
        _check_lambdas("speedup.lambdas", self.speedup.lambdas, 2)
        _check_lambdas("graph.lambdas", self.graph.lambdas, 4)
        if self.speedup.F_max is not None and self.speedup.F_max < self.required_speedup:
            raise ConfigError("speedup.F_max must be >= required_speedup")
        for name in ("speedup_bounds", "graph_bounds"):
            lo, hi = getattr(self.pso, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and 0 <= lo <= hi):
                raise ConfigError(f"pso.{name} must be finite with 0 <= lo <= hi")
        try:
            self.graph_weights((1.0, 1.0, 1.0, 1.0))
            self.stabilizer_config()
            if self.metrics.buffer_size is not None:
                InstabilityConfig(self.metrics.buffer_size, self.metrics.stride)
            PsoConfig(self.pso.swarm, self.pso.iterations, neighbors=self.pso.neighbors)
        except MiffError as exc:
            raise ConfigError(str(exc)) from exc

    def graph_weights(self, lambdas) -> GraphWeights:
        g = self.graph
        return GraphWeights(*map(float, lambdas), epsilon=g.epsilon, tau_max=g.tau_max, tau_b=g.tau_b)

    def stabilizer_config(self) -> StabilizerConfig:
        s = self.stabilizer
        return StabilizerConfig(
            s.alpha, s.dp, s.cp, s.eta, s.sigma_rep, s.ransac_iterations, s.ransac_threshold, seed=self.seed
        )

    def pso_config(self, dims: int, bounds, swarm: int, iterations: int, seed: int) -> PsoConfig:
        p = self.pso
        return PsoConfig(swarm, iterations, p.inertia, p.cognitive, p.social, (tuple(bounds),) * dims, seed, p.neighbors)

    def with_overrides(self, seed: int | None = None, required_speedup: float | None = None) -> PipelineConfig:
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if required_speedup is not None:
            changes["required_speedup"] = required_speedup
        return dataclasses.replace(self, **changes) if changes else self

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, obj: dict) -> PipelineConfig:
        return _build(cls, obj, "config")

    @classmethod
    def load(cls, path) -> PipelineConfig:
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(obj)


def _check_lambdas(name, value, dims):
    if value == AUTO:
        return
    if (
        not isinstance(value, (list, tuple))
        or len(value) != dims
        or not all(isinstance(v, (int, float)) and math.isfinite(v) and v >= 0 for v in value)
    ):
        raise ConfigError(f"{name} must be '{AUTO}' or {dims} non-negative numbers")


_TUPLE_FIELDS = {"speedup_bounds", "graph_bounds", "lambdas"}


def _build(cls, obj, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in obj.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif name in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# --- stages -------------------------------------------------------------------


def uniform_baseline(length: int, required_speedup: float) -> list[int]:
    """Every ceil(F_d)-th frame starting at frame 0."""
    if length < 1:
        raise MiffError("empty video")
    return list(range(0, length, math.ceil(required_speedup)))


def segment_border(weights: GraphWeights, speedup: float) -> int:
    """Source/sink fan-out for a segment: tau_b, but never wider than one skip.

    A wider border lets a path start or end up to tau_b frames inside the
    segment, and that loss repeats at every segment boundary.
    """
    return max(1, min(weights.tau_b, math.ceil(speedup)))


@dataclass
class SegmentGraphs:
    """Unit-weight term matrices of one segment graph, combined for any lambdas."""

    segment: Segment
    border: int
    terms: list[np.ndarray]

    def graph(self, lambdas) -> TransitionGraph:
        missing = ~np.isfinite(self.terms[0])
        W = sum(float(l) * np.where(missing, 0.0, t) for l, t in zip(lambdas, self.terms))
        W[missing] = np.inf
        s = self.segment
        return TransitionGraph(s.start, s.end, float(s.speedup), self.border, W)


def segment_graphs(inputs: CostInputs, leaves: Sequence[Segment], base: GraphWeights) -> list[SegmentGraphs]:
    out = []
    for leaf in leaves:
        border = segment_border(base, leaf.speedup)
        terms = []
        for k in range(4):
            unit = [0.0] * 4
            unit[k] = 1.0
            w = dataclasses.replace(base, lambda_i=unit[0], lambda_v=unit[1], lambda_a=unit[2], lambda_s=unit[3])
            terms.append(build_graph(inputs, leaf, w, leaf.speedup, border=border).weights)
        out.append(SegmentGraphs(leaf, border, terms))
    return out


def select_frames(term_graphs: Sequence[SegmentGraphs], lambdas):
    paths, costs = [], []
    for tg in term_graphs:
        p, c = shortest_path(tg.graph(lambdas))
        paths.append(p)
        costs.append(c)
    return compose_selection(paths), paths, costs


def frame_foes(stream: FeatureStream) -> list:
    out = []
    for k in range(len(stream)):
        try:
            out.append(frame_foe(stream, k))
        except FeatureMissingError:
            out.append(None)
    return out


@dataclass
class PipelineResult:
    scores: np.ndarray
    tree: SegmentTree
    selection: list[int]
    paths: list[list[int]]
    path_costs: list[float]
    graph_lambdas: tuple
    plan: StabilizationPlan | None
    report: dict
    pso_runs: list[dict]

    def segments_json(self) -> dict:
        return self.tree.to_dict()

    def selection_json(self) -> dict:
        return {
            "version": 1,
            "frames": self.selection,
            "graph_lambdas": list(self.graph_lambdas),
            "segments": [
                {**leaf.to_dict(), "path": path, "cost": cost}
                for leaf, path, cost in zip(self.tree.leaves, self.paths, self.path_costs)
            ],
        }

    def pso_json(self) -> dict:
        return {"version": 1, "runs": self.pso_runs}


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, et, exc, tb):
        if exc is not None and isinstance(exc, MiffError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def make_speedup_solver(config: PipelineConfig, pso_runs: list[dict]):
    """Solver handed to the refinement: tunes the regularizers per pass when they are 'auto'."""
    auto = config.speedup.lambdas == AUTO

    def solve(L_s, L_ns, F_d, ceiling):
        F_max = ceiling if ceiling is not None else config.speedup.F_max
        if auto:
            k = len(pso_runs)
            p = config.pso
            pso_cfg = config.pso_config(2, p.speedup_bounds, p.swarm, p.iterations, config.seed + k)
            res = optimize_speedup_lambdas(L_s, L_ns, F_d, F_max, pso_cfg)
            lam = res.position
            pso_runs.append(
                {"stage": "speedup", "pass": k, "L_s": L_s, "L_ns": L_ns, "required_speedup": F_d, **res.to_dict()}
            )
        else:
            lam = config.speedup.lambdas
        return solve_speedups(SpeedupProblem(L_s, L_ns, F_d, float(lam[0]), float(lam[1]), F_max))

    return solve


def run_pipeline(
    stream: FeatureStream,
    config: PipelineConfig = PipelineConfig(),
    rasters: Sequence[np.ndarray] | None = None,
) -> PipelineResult:
    F_d = float(config.required_speedup)
    L = len(stream)
    pso_runs: list[dict] = []
    with _Stage("score"):
        scores = stream_scores(stream, config.score.floors, config.score.norms)
    with _Stage("segment"):
        tree = refine_multi_importance(
            scores,
            stream.fps,
            F_d,
            config.profile.t,
            make_speedup_solver(config, pso_runs),
            config.profile.num_bins,
            config.profile.max_levels,
        )
    with _Stage("graph"):
        inputs = CostInputs.from_stream(stream, scores)
        base = config.graph_weights((1.0, 1.0, 1.0, 1.0))
        term_graphs = segment_graphs(inputs, tree.leaves, base)
    with _Stage("pso-graph"):
        if config.graph.lambdas == AUTO:
            ctx = GraphFitnessContext(
                scores, tuple(frame_foes(stream)), stream.width, stream.height, F_d, lambda lam: select_frames(term_graphs, lam)[0]
            )
            p = config.pso
            res = pso_optimize(
                lambda pos: fitness_graph_weights(pos, ctx),
                config.pso_config(4, p.graph_bounds, p.graph_swarm, p.graph_iterations, config.seed),
            )
            lambdas = tuple(float(v) for v in res.position)
            pso_runs.append({"stage": "graph", **res.to_dict()})
        else:
            lambdas = tuple(float(v) for v in config.graph.lambdas)
    with _Stage("select"):
        selection, paths, costs = select_frames(term_graphs, lambdas)
    plan = None
    with _Stage("stabilize"):
        if config.stabilizer.enabled:
            plan = stabilize(selection, stream, config.stabilizer_config(), scores)
    with _Stage("metrics"):
        report = build_report(stream, scores, tree, selection, plan, config, rasters)
    return PipelineResult(scores, tree, selection, paths, costs, lambdas, plan, report, pso_runs)


def build_report(stream, scores, tree, selection, plan, config, rasters=None) -> dict:
    F_d = float(config.required_speedup)
    L = len(stream)
    ret = semantic_retention(selection, scores, F_d)
    base = uniform_baseline(L, F_d)
    base_ret = semantic_retention(base, scores, F_d)
    sel = np.asarray(selection)
    per_segment = []
    for leaf in tree.leaves:
        n_out = int(((sel >= leaf.start) & (sel < leaf.end)).sum())
        per_segment.append(
            {
                **leaf.to_dict(),
                "output_frames": n_out,
                "achieved_speedup": (len(leaf) / n_out) if n_out else None,
            }
        )
    n_out = len(selection) if plan is None else len(plan.output_entries())
    report = {
        "version": 1,
        "input_frames": L,
        "selected_frames": len(selection),
        "output_frames": n_out,
        "required_speedup": F_d,
        "achieved_speedup": achieved_speedup(L, len(selection)),
        "speedup_abs_error": abs(achieved_speedup(L, len(selection)) - F_d),
        "retention": ret.value,
        "retention_degenerate": ret.degenerate,
        "uniform_retention": base_ret.value,
        "thresholds": tree.thresholds,
        "stop_reason": tree.stop_reason,
        "segments": per_segment,
        "stabilization": None if plan is None else {
            "actions": plan.action_counts(),
            "masters": len(plan.masters),
            "unstabilizable_segments": len(plan.unstabilizable_segments),
        },
        "instability": None,
    }
    if rasters is not None and plan is not None:
        nb = config.metrics.buffer_size or InstabilityConfig.for_fps(stream.fps).buffer_size
        icfg = InstabilityConfig(nb, config.metrics.stride)
        stab = render_stabilized(plan, rasters)
        raw = crop_unstabilized(selection, rasters, plan.config.cp)
        report["instability"] = {
            "buffer_size": nb,
            "stabilized": instability_index(stab, icfg) if len(stab) >= nb else None,
            "unstabilized": instability_index(raw, icfg) if len(raw) >= nb else None,
        }
    return report


def dump_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(_to_jsonable(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_outputs(result: PipelineResult, out_dir, config: PipelineConfig) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "segments.json": result.segments_json(),
        "selection.json": result.selection_json(),
        "report.json": result.report,
        "pso_trace.json": result.pso_json(),
        "config.json": config.to_dict(),
    }
    if result.plan is not None:
        files["plan.json"] = result.plan.to_dict()
    written = []
    for name, obj in files.items():
        path = out / name
        path.write_text(dump_json(obj))
        written.append(path)
    return written
