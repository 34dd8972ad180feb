"""Particle swarm optimization and the fitness functions used to tune the pipeline weights."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleError, InvalidArgumentError, MiffError
from .speedup import SpeedupProblem, achieved_rate, solve_speedups

log = logging.getLogger(__name__)

FITNESS_C = 2.0


@dataclass(frozen=True)
class PsoConfig:
    swarm: int = 30
    iterations: int = 100
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    bounds: tuple[tuple[float, float], ...] = ((0.0, 10.0), (0.0, 10.0))
    seed: int = 0
    # Ring neighbourhood radius for the social term; 0 means every particle follows the global best.
    neighbors: int = 1

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))
        if self.swarm < 2:
            raise InvalidArgumentError("swarm must have at least two particles")
        if self.iterations < 1:
            raise InvalidArgumentError("need at least one iteration")
        if self.neighbors < 0:
            raise InvalidArgumentError("neighbors must be non-negative")
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise InvalidArgumentError(f"bad bounds ({lo}, {hi})")


@dataclass
class PsoResult:
    position: np.ndarray
    fitness: float
    trace: list[float] = field(default_factory=list)
    positions: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "best_position": self.position.tolist(),
            "best_fitness": self.fitness,
            "trace": [{"iteration": i, "fitness": f, "position": p} for i, (f, p) in enumerate(zip(self.trace, self.positions))],
        }


def pso_optimize(fitness: Callable[[np.ndarray], float], config: PsoConfig, init_positions=None) -> PsoResult:
    """Minimize ``fitness`` with an inertia-weight swarm.

    The social pull is toward the best personal best within a ring of
    ``config.neighbors`` particles on each side (the whole swarm when 0). A
    sparse ring keeps the swarm spread out for longer on piecewise-constant
    fitness landscapes, where a global-best swarm tends to collapse onto the
    first plateau it finds. ``trace[k]`` is the global-best fitness after iteration k (index 0 is the
    initial swarm), so it never increases.
    """
    rng = np.random.default_rng(config.seed)
    lo = np.array([b[0] for b in config.bounds])
    hi = np.array([b[1] for b in config.bounds])
    width = hi - lo
    dim = len(lo)
    if init_positions is None:
        x = lo + rng.random((config.swarm, dim)) * width
    else:
        x = np.clip(np.array(init_positions, dtype=float).reshape(config.swarm, dim), lo, hi)
    v = (rng.random((config.swarm, dim)) * 2.0 - 1.0) * width

    def evaluate(pos):
        f = float(fitness(pos))
        if not math.isfinite(f):
            raise MiffError(f"non-finite fitness at position {pos.tolist()}")
        return f

    f = np.array([evaluate(p) for p in x])
    pbest, pbest_f = x.copy(), f.copy()
    g = int(np.argmin(pbest_f))
    gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
    result = PsoResult(gbest.copy(), gbest_f, [gbest_f], [gbest.tolist()])
    idx = np.arange(config.swarm)
    ring = None
    if 0 < config.neighbors and 2 * config.neighbors + 1 < config.swarm:
        ring = (idx[:, None] + np.arange(-config.neighbors, config.neighbors + 1)) % config.swarm
    for _ in range(config.iterations):
        social = gbest if ring is None else pbest[ring[idx, np.argmin(pbest_f[ring], axis=1)]]
        r1 = rng.random((config.swarm, dim))
        r2 = rng.random((config.swarm, dim))
        v = config.inertia * v + config.cognitive * r1 * (pbest - x) + config.social * r2 * (social - x)
        v = np.clip(v, -width, width)
        x = np.clip(x + v, lo, hi)
        f = np.array([evaluate(p) for p in x])
        improved = f < pbest_f
        pbest[improved], pbest_f[improved] = x[improved], f[improved]
        g = int(np.argmin(pbest_f))
        if pbest_f[g] < gbest_f:
            gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
        result.trace.append(gbest_f)
        result.positions.append(gbest.tolist())
    result.position, result.fitness = gbest, gbest_f
    return result


# --- speed-up regularizers --------------------------------------------------


def lambda_fitness_terms(F_s, F_ns, L_s, L_ns, F_d, c: float = FITNESS_C) -> float:
    """Fitness of a speed-up pair: semantic rate near the midpoint of [p_s*F_d, F_d],
    overall rate near F_d, and a small semantic / non-semantic spread."""
    total = L_s + L_ns
    p_s, p_ns = L_s / total, L_ns / total
    achieved = achieved_rate(L_s, L_ns, F_s, F_ns)
    return c * abs(F_s - (F_d + p_s * F_d) / 2.0) + abs(achieved - F_d) + p_ns * abs(F_s - F_ns)


def fitness_lambda(position, L_s: int, L_ns: int, F_d: float, F_max: float | None = None, penalty: float = 1e4) -> float:
    lam1, lam2 = float(position[0]), float(position[1])
    try:
        sol = solve_speedups(SpeedupProblem(L_s, L_ns, F_d, lam1, lam2, F_max))
    except InfeasibleError as exc:
        log.warning("infeasible speed-up problem at %s: %s", (lam1, lam2), exc)
        return penalty
    return lambda_fitness_terms(sol.F_s, sol.F_ns, L_s, L_ns, F_d)


def optimize_speedup_lambdas(L_s, L_ns, F_d, F_max=None, config: PsoConfig = PsoConfig()) -> PsoResult:
    width = max(hi - lo for lo, hi in config.bounds)
    return pso_optimize(lambda p: fitness_lambda(p, L_s, L_ns, F_d, F_max, penalty=width * 1e3), config)


# --- graph weights ----------------------------------------------------------


def resolve_foes(foes: Sequence[tuple[float, float] | None]) -> list[tuple[float, float] | None]:
    """Replace missing FOEs by the nearest preceding one."""
    out, last = [], None
    for p in foes:
        last = p if p is not None else last
        out.append(last)
    return out


def compute_jitter(foes: Sequence[tuple[float, float] | None], width: float, height: float) -> tuple[float, float]:
    """Mean FOE displacement between consecutive selected frames, and its ceiling (the diagonal).

    FOEs are clipped to the frame first, so J never exceeds the diagonal.
    """
    pts = [p for p in resolve_foes(foes) if p is not None]
    max_j = math.hypot(width, height)
    if len(pts) < 2:
        return 0.0, max_j
    a = np.clip(np.asarray(pts, dtype=float), 0.0, [width, height])
    return float(np.mean(np.hypot(*(a[1:] - a[:-1]).T))), max_j


@dataclass(frozen=True)
class GraphFitnessContext:
    """Everything the graph-weight fitness needs besides the candidate lambdas.

    ``build_selection`` maps a 4-vector of lambdas to the selected frames;
    ``foes`` holds one FOE (or None) per input frame.
    """

    scores: np.ndarray
    foes: tuple
    width: float
    height: float
    required_speedup: float
    build_selection: Callable[[np.ndarray], list[int]] | None = None

    @property
    def length(self) -> int:
        return len(self.scores)

    @property
    def expected_length(self) -> float:
        return self.length / self.required_speedup

    @property
    def max_semantics(self) -> float:
        n = math.ceil(self.length / self.required_speedup)
        return float(np.sort(self.scores)[::-1][:n].sum())

    @property
    def max_jitter(self) -> float:
        return math.hypot(self.width, self.height)


def selection_fitness(selection: Sequence[int], context: GraphFitnessContext, penalty: float = 1e4) -> float:
    if len(selection) == 0:
        return penalty
    jitter, max_j = compute_jitter([context.foes[i] for i in selection], context.width, context.height)
    e_l = context.expected_length
    s_star = context.max_semantics
    semantics = float(np.sum(context.scores[list(selection)]))
    # A selection longer than the expected length can exceed the top-n sum.
    sem_term = max(s_star - semantics, 0.0) / s_star if s_star > 0 else 0.0
    return jitter / max_j + abs((len(selection) - e_l) / e_l) + sem_term


def fitness_graph_weights(position, context: GraphFitnessContext, penalty: float = 1e4) -> float:
    if context.build_selection is None:
        raise InvalidArgumentError("context has no selection builder")
    return selection_fitness(context.build_selection(np.asarray(position, dtype=float)), context, penalty)
