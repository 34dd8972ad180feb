"""Semantic profile smoothing, Otsu thresholding and multi-importance segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateProfileError, InvalidArgumentError
from .speedup import SpeedupSolution

SEMANTIC = "semantic"
NON_SEMANTIC = "non-semantic"

MERGE_GAP_SECONDS = 5.0


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    kind: str
    level: int = 0
    speedup: int | None = None

    def __post_init__(self):
        if not self.start < self.end:
            raise InvalidArgumentError(f"empty segment [{self.start}, {self.end})")
        if self.kind not in (SEMANTIC, NON_SEMANTIC):
            raise InvalidArgumentError(f"unknown segment kind {self.kind!r}")

    def __len__(self):
        return self.end - self.start

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "kind": self.kind, "level": self.level, "speedup": self.speedup}


@dataclass(frozen=True)
class SemanticProfile:
    raw: np.ndarray
    smoothed: np.ndarray
    fps: float
    required_speedup: float

    @classmethod
    def build(cls, raw, fps: float, required_speedup: float) -> SemanticProfile:
        raw = np.asarray(raw, dtype=float)
        return cls(raw, smooth_profile(raw, fps, required_speedup), fps, required_speedup)


@dataclass
class Iteration:
    threshold: float
    required_speedup: float
    solution: SpeedupSolution | None
    L_s: int
    L_ns: int
    segments: list[Segment]


@dataclass
class SegmentTree:
    t: float
    length: int
    iterations: list[Iteration] = field(default_factory=list)
    leaves: list[Segment] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def thresholds(self) -> list[float]:
        return [it.threshold for it in self.iterations]

    def semantic_leaves(self) -> list[Segment]:
        return [s for s in self.leaves if s.kind == SEMANTIC]

    def speedup_per_frame(self) -> np.ndarray:
        out = np.zeros(self.length, dtype=int)
        for s in self.leaves:
            out[s.start : s.end] = s.speedup
        return out

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "t": self.t,
            "length": self.length,
            "stop_reason": self.stop_reason,
            "thresholds": self.thresholds,
            "iterations": [
                {
                    "threshold": it.threshold,
                    "required_speedup": it.required_speedup,
                    "L_s": it.L_s,
                    "L_ns": it.L_ns,
                    "F_s": None if it.solution is None else it.solution.F_s,
                    "F_ns": None if it.solution is None else it.solution.F_ns,
                    "segments": [s.to_dict() for s in it.segments],
                }
                for it in self.iterations
            ],
            "segments": [s.to_dict() for s in self.leaves],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> SegmentTree:
        tree = cls(t=float(obj["t"]), length=int(obj["length"]), stop_reason=obj.get("stop_reason", ""))
        for it in obj.get("iterations", []):
            sol = None
            if it.get("F_s") is not None:
                sol = SpeedupSolution(int(it["F_s"]), int(it["F_ns"]), math.nan, math.nan, math.nan)
            segs = [Segment(**s) for s in it["segments"]]
            tree.iterations.append(Iteration(it["threshold"], it["required_speedup"], sol, it["L_s"], it["L_ns"], segs))
        tree.leaves = [Segment(**s) for s in obj["segments"]]
        validate_tiling(tree.leaves, 0, tree.length)
        return tree


def validate_tiling(segments: Sequence[Segment], start: int, end: int) -> None:
    pos = start
    for s in segments:
        if s.start != pos:
            raise InvalidArgumentError(f"segments do not tile [{start}, {end}): expected start {pos}, got {s.start}")
        pos = s.end
    if pos != end:
        raise InvalidArgumentError(f"segments end at {pos}, expected {end}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def smooth_profile(scores, fps: float, required_speedup: float) -> np.ndarray:
    """Gaussian filter with sigma = required_speedup / 2 * fps samples, reflective borders."""
    x = np.asarray(scores, dtype=float)
    if x.size == 0:
        raise InvalidArgumentError("empty score vector")
    if not fps > 0 or not required_speedup >= 1:
        raise InvalidArgumentError("need fps > 0 and speed-up >= 1")
    k = gaussian_kernel(required_speedup / 2.0 * fps)
    r = len(k) // 2
    if r == 0:
        return x.copy()
    padded = np.pad(x, r, mode="symmetric")
    return np.convolve(padded, k, mode="valid")


def _as_exact(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    return Fraction(float(v))


def otsu_bin_index(counts: Sequence[float]) -> int:
    """Split index k maximizing between-class variance (class 0 = bins < k).

    Uses exact rational arithmetic. Among distinct splits with equal variance
    the lowest k wins; when empty bins make several k produce the same split,
    the middle of that run is returned.
    """
    c = [_as_exact(v) for v in counts]
    nb = len(c)
    if nb < 2:
        raise InvalidArgumentError("need at least two bins")
    if any(v < 0 for v in c):
        raise InvalidArgumentError("negative bin count")
    N = sum(c)
    S = sum(b * v for b, v in enumerate(c))
    best = None
    best_k = None
    n0 = s0 = 0
    for k in range(1, nb):
        n0 += c[k - 1]
        s0 += (k - 1) * c[k - 1]
        n1 = N - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (N * s0 - n0 * S) ** 2
        den = n0 * n1
        if best is None or num * best[1] > best[0] * den:
            best, best_k = (num, den), k
    if best_k is None:
        raise DegenerateProfileError("all mass in a single bin")
    k_end = best_k
    while k_end + 1 < nb and c[k_end] == 0:
        k_end += 1
    return (best_k + k_end) // 2


def otsu_threshold(scores, num_bins: int = 256) -> float:
    """Bin-edge threshold; frames scoring above it are semantic."""
    if num_bins < 2:
        raise InvalidArgumentError("num_bins must be >= 2")
    x = np.asarray(scores, dtype=float)
    if x.size == 0:
        raise InvalidArgumentError("empty score vector")
    lo, hi = float(x.min()), float(x.max())
    if not hi - lo > 1e-12 * max(1.0, abs(hi)):
        raise DegenerateProfileError("all scores identical")
    counts, edges = np.histogram(x, bins=num_bins, range=(lo, hi))
    k = otsu_bin_index(counts.tolist())
    return float(edges[k])


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    m = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def extract_segments(profile, threshold: float, fps: float, required_speedup: float, offset: int = 0) -> list[Segment]:
    """Threshold the profile into semantic / non-semantic segments tiling it.

    Semantic runs at most five seconds apart are merged first; merged runs
    shorter than one output second (``required_speedup * fps`` frames) are
    then demoted.
    """
    x = np.asarray(profile, dtype=float)
    if not math.isfinite(threshold):
        raise InvalidArgumentError("threshold must be finite")
    n = len(x)
    if n == 0:
        raise InvalidArgumentError("empty profile")
    max_gap = MERGE_GAP_SECONDS * fps
    min_len = required_speedup * fps
    merged: list[list[int]] = []
    for a, b in _runs(x > threshold):
        if merged and a - merged[-1][1] <= max_gap:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    kept = [(a, b) for a, b in merged if b - a >= min_len]
    out: list[Segment] = []
    pos = 0
    for a, b in kept:
        if a > pos:
            out.append(Segment(offset + pos, offset + a, NON_SEMANTIC))
        out.append(Segment(offset + a, offset + b, SEMANTIC))
        pos = b
    if pos < n:
        out.append(Segment(offset + pos, offset + n, NON_SEMANTIC))
    return out


# (L_s, L_ns, required speed-up, ceiling for F_ns or None) -> solution
SpeedupSolver = Callable[[int, int, float, "float | None"], SpeedupSolution]


def refine_multi_importance(
    scores,
    fps: float,
    required_speedup: float,
    t: float,
    solver: SpeedupSolver,
    num_bins: int = 256,
    max_levels: int = 8,
) -> SegmentTree:
    """Iteratively split semantic segments into importance levels.

    The first pass fixes the non-semantic speed-up. Each later pass keeps
    only the current semantic segments, re-smooths their raw scores inside
    each segment, re-thresholds, and solves a new speed-up pair with the
    previous semantic speed-up as the required rate. Deeper levels get
    lower speed-ups: each pass caps its non-semantic rate strictly below the
    rate of the level it was split from.
    """
    if not 0 < t < 1:
        raise InvalidArgumentError("t must lie in (0, 1)")
    raw = np.asarray(scores, dtype=float)
    L = len(raw)
    tree = SegmentTree(t=t, length=L)
    smoothed = smooth_profile(raw, fps, required_speedup)

    def everything_non_semantic(reason, threshold=math.nan):
        sol = solver(0, L, required_speedup, None)
        seg = Segment(0, L, NON_SEMANTIC, 0, sol.F_ns)
        tree.iterations.append(Iteration(threshold, required_speedup, sol, 0, L, [seg]))
        tree.leaves = [seg]
        tree.stop_reason = reason
        return tree

    try:
        threshold = otsu_threshold(smoothed, num_bins)
    except DegenerateProfileError:
        return everything_non_semantic("degenerate profile")
    segments = extract_segments(smoothed, threshold, fps, required_speedup)
    L_s = sum(len(s) for s in segments if s.kind == SEMANTIC)
    if L_s == 0:
        return everything_non_semantic("no semantic segment", threshold)
    sol = solver(L_s, L - L_s, required_speedup, None)
    leaves = [replace(s, speedup=sol.F_ns) for s in segments if s.kind == NON_SEMANTIC]
    current = [replace(s, level=1, speedup=sol.F_s) for s in segments if s.kind == SEMANTIC]
    tree.iterations.append(Iteration(threshold, required_speedup, sol, L_s, L - L_s, segments))
    required = sol.F_s
    outer = required_speedup
    level = 1
    tree.stop_reason = "max levels"
    while level < max_levels:
        ceiling = math.ceil(outer) - 1
        if required <= 1 or required > ceiling:
            tree.stop_reason = "speed-up floor reached"
            break
        profiles = [smooth_profile(raw[s.start : s.end], fps, required) for s in current]
        try:
            new_threshold = otsu_threshold(np.concatenate(profiles), num_bins)
        except DegenerateProfileError:
            tree.stop_reason = "degenerate profile"
            break
        if new_threshold < t * threshold:
            tree.stop_reason = "threshold drop"
            break
        children = [extract_segments(p, new_threshold, fps, required, offset=s.start) for s, p in zip(current, profiles)]
        flat = [c for group in children for c in group]
        L_s = sum(len(c) for c in flat if c.kind == SEMANTIC)
        L_ns = sum(len(c) for c in flat if c.kind == NON_SEMANTIC)
        if L_s == 0 or L_ns == 0:
            tree.stop_reason = "no split"
            break
        sol = solver(L_s, L_ns, required, ceiling)
        if sol.F_s >= sol.F_ns:
            tree.stop_reason = "no speed-up separation"
            break
        tree.iterations.append(Iteration(new_threshold, required, sol, L_s, L_ns, flat))
        leaves += [replace(c, level=level, kind=SEMANTIC, speedup=sol.F_ns) for c in flat if c.kind == NON_SEMANTIC]
        current = [replace(c, level=level + 1, speedup=sol.F_s) for c in flat if c.kind == SEMANTIC]
        threshold, required, outer = new_threshold, sol.F_s, sol.F_ns
        level += 1
    tree.leaves = sorted(leaves + current, key=lambda s: s.start)
    validate_tiling(tree.leaves, 0, L)
    return tree
