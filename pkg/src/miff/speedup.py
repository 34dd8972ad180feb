"""Integer speed-up assignment for semantic and non-semantic frames by exhaustive search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InfeasibleError, InvalidArgumentError


@dataclass(frozen=True)
class SpeedupProblem:
    L_s: int
    L_ns: int
    F_d: float
    lambda1: float = 0.0
    lambda2: float = 0.0
    F_max: float | None = None

    def __post_init__(self):
        if self.L_s < 0 or self.L_ns < 0 or self.L_s + self.L_ns < 1:
            raise InvalidArgumentError("frame counts must be non-negative with a positive total")
        if not self.F_d >= 1:
            raise InvalidArgumentError("required speed-up must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidArgumentError("regularizers must be non-negative")
        if self.F_max is None:
            object.__setattr__(self, "F_max", 10.0 * self.F_d)
        if self.F_max < self.F_d:
            raise InvalidArgumentError("F_max must be >= F_d")

    @property
    def total(self) -> int:
        return self.L_s + self.L_ns

    @property
    def p_s(self) -> float:
        return self.L_s / self.total

    def semantic_floor(self) -> int:
        """Smallest admissible F_s: max(1, ceil(p_s * F_d)), computed exactly."""
        return max(1, math.ceil(Fraction(self.L_s, self.total) * Fraction(self.F_d)))


@dataclass(frozen=True)
class SpeedupSolution:
    F_s: int
    F_ns: int
    objective: float
    D: float
    p_s: float

    def achieved(self, L_s: int, L_ns: int) -> float:
        return achieved_rate(L_s, L_ns, self.F_s, self.F_ns)


def achieved_rate(L_s, L_ns, F_s, F_ns) -> float:
    """Overall speed-up produced by applying F_s to L_s frames and F_ns to L_ns."""
    return (L_s + L_ns) / (L_s / F_s + L_ns / F_ns)


def energy(problem: SpeedupProblem, F_s, F_ns) -> float:
    """Absolute mismatch between the required and the produced output length."""
    if F_s <= 0 or F_ns <= 0:
        raise InvalidArgumentError("speed-ups must be positive")
    return abs(problem.total / problem.F_d - (problem.L_s / F_s + problem.L_ns / F_ns))


def solve_speedups(problem: SpeedupProblem) -> SpeedupSolution:
    """Minimize energy + lambda1*|F_ns - F_s| + lambda2*|F_s| over the integer box.

    Ties go to the smaller F_s, then the smaller F_ns.
    """
    lo_s, hi_s = problem.semantic_floor(), math.floor(problem.F_d)
    lo_ns, hi_ns = math.ceil(problem.F_d), math.floor(problem.F_max)
    if hi_s < 1:
        raise InfeasibleError("r1 (F_s <= F_d) leaves no positive integer")
    if lo_s > hi_s:
        raise InfeasibleError(f"r3 (F_s >= p_s*F_d = {lo_s}) conflicts with r1 (F_s <= {hi_s})")
    if lo_ns > hi_ns:
        raise InfeasibleError(f"r2 (F_ns >= {lo_ns}) exceeds the search ceiling F_max = {problem.F_max}")
    fs = np.arange(lo_s, hi_s + 1)[:, None]
    fns = np.arange(lo_ns, hi_ns + 1)[None, :]
    D = np.abs(problem.total / problem.F_d - (problem.L_s / fs + problem.L_ns / fns))
    obj = D + problem.lambda1 * np.abs(fns - fs) + problem.lambda2 * np.abs(fs)
    r, c = np.unravel_index(int(np.argmin(obj)), obj.shape)
    return SpeedupSolution(
        F_s=int(fs[r, 0]),
        F_ns=int(fns[0, c]),
        objective=float(obj[r, c]),
        D=float(D[r, c]),
        p_s=problem.p_s,
    )
