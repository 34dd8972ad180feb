"""Frame-transition graphs: cost terms, skip DAG construction and shortest path."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateFlowError,
    FeatureMissingError,
    InvalidArgumentError,
    MiffError,
)
from .features import FeatureStream


@dataclass(frozen=True)
class GraphWeights:
    lambda_i: float = 1.0
    lambda_v: float = 2.0
    lambda_a: float = 1.0
    lambda_s: float = 1.0
    epsilon: float = 1.0
    tau_max: int = 100
    tau_b: int = 30

    def __post_init__(self):
        if min(self.lambda_i, self.lambda_v, self.lambda_a, self.lambda_s) < 0:
            raise InvalidArgumentError("graph lambdas must be non-negative")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")
        if not 1 <= self.tau_b <= self.tau_max:
            raise InvalidArgumentError("need 1 <= tau_b <= tau_max")

    @property
    def lambdas(self) -> tuple[float, float, float, float]:
        return (self.lambda_i, self.lambda_v, self.lambda_a, self.lambda_s)


# --- focus of expansion -----------------------------------------------------


def estimate_foe(positions, displacements):
    """Least-squares intersection of the lines through each position along its flow.

    Returns ``(foe, residual)``; residual is the RMS point-to-line distance.
    Raises DegenerateFlowError when the lines are (near) parallel.
    """
    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    d = np.asarray(displacements, dtype=float).reshape(-1, 2)
    norm = np.hypot(d[:, 0], d[:, 1])
    keep = norm > 1e-12
    p, d, norm = p[keep], d[keep], norm[keep]
    if len(p) < 2:
        raise DegenerateFlowError("need at least two non-zero flow vectors")
    n = np.c_[-d[:, 1], d[:, 0]] / norm[:, None]
    b = (n * p).sum(axis=1)
    sv = np.linalg.svd(n, compute_uv=False)
    if sv[1] <= 1e-9 * sv[0]:
        raise DegenerateFlowError("flow vectors are parallel")
    foe, *_ = np.linalg.lstsq(n, b, rcond=None)
    residual = float(np.sqrt(np.mean((n @ foe - b) ** 2)))
    return (float(foe[0]), float(foe[1])), residual


def _track_flow(stream: FeatureStream, k: int):
    a, b = (k, k + 1) if k + 1 < len(stream) else (k - 1, k)
    ka, kb = stream[a].keypoint_map(), stream[b].keypoint_map()
    shared = sorted(set(ka) & set(kb))
    pos = np.array([ka[t] for t in shared], dtype=float).reshape(-1, 2)
    disp = np.array([kb[t] for t in shared], dtype=float).reshape(-1, 2) - pos
    return pos, disp


def frame_foe(stream: FeatureStream, k: int) -> tuple[float, float]:
    """The frame's FOE, estimated from its keypoint tracks when not supplied.

    Uniform translation has no FOE; the frame center shifted by the mean
    displacement stands in for it.
    """
    frame = stream[k]
    if frame.foe is not None:
        return frame.foe
    pos, disp = _track_flow(stream, k)
    if len(pos) == 0:
        raise FeatureMissingError(f"frame {k}: no FOE and no flow vectors", frame=k)
    try:
        foe, _ = estimate_foe(pos, disp)
    except DegenerateFlowError:
        cx, cy = frame.center
        mean = disp.mean(axis=0)
        foe = (cx + float(mean[0]), cy + float(mean[1]))
    return foe


def _foe_distance(foe, width, height) -> float:
    half_diag = 0.5 * math.hypot(width, height)
    return min(math.hypot(foe[0] - width / 2.0, foe[1] - height / 2.0) / half_diag, 1.0)


# --- cost terms -------------------------------------------------------------


def instability_cost(stream: FeatureStream, i: int, j: int) -> float:
    """Mean FOE-to-center distance over frames [i, j), in half-diagonals (capped at 1)."""
    if not 0 <= i < j <= len(stream):
        raise InvalidArgumentError(f"bad transition ({i}, {j})")
    return float(
        np.mean([_foe_distance(frame_foe(stream, k), stream[k].width, stream[k].height) for k in range(i, j)])
    )


def video_mean_magnitude(stream: FeatureStream) -> float:
    return float(np.mean([f.flow_mean_magnitude for f in stream.frames]))


def velocity_cost(stream: FeatureStream, i: int, j: int, video_mean_mag: float, speedup: float) -> float:
    """Relative gap between the flow accumulated over [i, j) and ``speedup`` average steps."""
    if not 0 <= i < j <= len(stream):
        raise InvalidArgumentError(f"bad transition ({i}, {j})")
    target = video_mean_mag * speedup
    if target <= 0:
        return 0.0
    acc = math.fsum(stream[k].flow_mean_magnitude for k in range(i, j))
    return abs(target - acc) / target


def appearance_cost(hist_i, hist_j) -> float:
    """1-D earth mover's distance between normalized histograms, scaled to [0, 1]."""
    h1 = np.asarray(hist_i, dtype=float)
    h2 = np.asarray(hist_j, dtype=float)
    if h1.shape != h2.shape or h1.ndim != 1:
        raise InvalidArgumentError("histograms must be 1-D and of equal length")
    if len(h1) < 2:
        return 0.0
    return float(np.abs(np.cumsum(h1) - np.cumsum(h2)).sum() / (len(h1) - 1))


def semantic_cost(s_i: float, s_j: float, epsilon: float = 1.0) -> float:
    if s_i < 0 or s_j < 0:
        raise InvalidArgumentError("semantic scores must be non-negative")
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be positive")
    return 1.0 / (s_i + s_j + epsilon)


def edge_weight(costs, weights: GraphWeights, i: int, j: int, speedup: float) -> float:
    """Weighted cost sum times the number of output steps the skip j - i spans."""
    c_i, c_v, c_a, c_s = costs
    combo = weights.lambda_i * c_i + weights.lambda_v * c_v + weights.lambda_a * c_a + weights.lambda_s * c_s
    return combo * math.ceil((j - i) / speedup)


# --- graph ------------------------------------------------------------------


@dataclass(frozen=True)
class CostInputs:
    """Per-frame arrays the edge costs are computed from, shared by all segment graphs."""

    foe_distance: np.ndarray
    magnitude: np.ndarray
    cdf: np.ndarray
    scores: np.ndarray
    mean_magnitude: float

    @classmethod
    def from_stream(cls, stream: FeatureStream, scores: Sequence[float]) -> CostInputs:
        scores = np.asarray(scores, dtype=float)
        if len(scores) != len(stream):
            raise InvalidArgumentError("one score per frame required")
        if np.any(scores < 0):
            raise InvalidArgumentError("semantic scores must be non-negative")
        foe_d = np.array([_foe_distance(frame_foe(stream, k), f.width, f.height) for k, f in enumerate(stream.frames)])
        mag = np.array([f.flow_mean_magnitude for f in stream.frames])
        hists = np.array([f.histogram for f in stream.frames])
        return cls(foe_d, mag, np.cumsum(hists, axis=1), scores, float(mag.mean()))

    def __len__(self):
        return len(self.scores)


@dataclass(frozen=True)
class TransitionGraph:
    """Skip DAG over frames [start, end).

    ``weights[a, s - 1]`` is the weight of the edge from local node ``a`` to
    ``a + s``; entries past the segment end are +inf. The source links to
    local nodes ``[0, border)``, the sink to ``[n - border, n)``, at weight 0.
    """

    start: int
    end: int
    speedup: float
    border: int
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.end - self.start

    @property
    def tau_max(self) -> int:
        return self.weights.shape[1]

    def edges(self):
        """Yield ``(i, j, weight)`` in global frame indices."""
        for a in range(self.n):
            for s in range(1, min(self.tau_max, self.n - 1 - a) + 1):
                yield self.start + a, self.start + a + s, float(self.weights[a, s - 1])

    def num_edges(self) -> int:
        return int(np.isfinite(self.weights).sum())

    def source_nodes(self) -> range:
        return range(self.start, self.start + min(self.border, self.n))

    def sink_nodes(self) -> range:
        return range(self.end - min(self.border, self.n), self.end)


def build_graph(
    inputs: CostInputs | FeatureStream,
    segment,
    weights: GraphWeights,
    speedup: float,
    scores: Sequence[float] | None = None,
    border: int | None = None,
) -> TransitionGraph:
    """Build the skip graph of ``segment`` (anything with ``start``/``end``, or a pair).

    ``border`` overrides ``weights.tau_b`` for the source/sink links.
    """
    if isinstance(inputs, FeatureStream):
        if scores is None:
            raise InvalidArgumentError("scores are required when building from a stream")
        inputs = CostInputs.from_stream(inputs, scores)
    start, end = (segment.start, segment.end) if hasattr(segment, "start") else segment
    if not 0 <= start < end <= len(inputs):
        raise InvalidArgumentError(f"segment [{start}, {end}) outside the stream")
    if not speedup > 0:
        raise InvalidArgumentError("speed-up must be positive")
    border = weights.tau_b if border is None else border
    if border < 1:
        raise InvalidArgumentError("border must be at least 1")
    n = end - start
    tau = weights.tau_max
    W = np.full((n, tau), np.inf)
    foe_p = np.concatenate([[0.0], np.cumsum(inputs.foe_distance[start:end])])
    mag_p = np.concatenate([[0.0], np.cumsum(inputs.magnitude[start:end])])
    cdf = inputs.cdf[start:end]
    sc = inputs.scores[start:end]
    bins = cdf.shape[1]
    target = inputs.mean_magnitude * speedup
    li, lv, la, ls = weights.lambdas
    for s in range(1, min(tau, n - 1) + 1):
        a = np.arange(n - s)
        b = a + s
        c_i = (foe_p[b] - foe_p[a]) / s
        if target > 0:
            c_v = np.abs(target - (mag_p[b] - mag_p[a])) / target
        else:
            c_v = np.zeros(len(a))
        if bins > 1:
            c_a = np.abs(cdf[a] - cdf[b]).sum(axis=1) / (bins - 1)
        else:
            c_a = np.zeros(len(a))
        c_s = 1.0 / (sc[a] + sc[b] + weights.epsilon)
        W[a, s - 1] = (li * c_i + lv * c_v + la * c_a + ls * c_s) * math.ceil(s / speedup)
    return TransitionGraph(start, end, float(speedup), int(border), W)


def _path_to(pred, v):
    path = []
    while v != -1:
        path.append(v)
        v = pred[v]
    return path[::-1]


def shortest_path(graph: TransitionGraph) -> tuple[list[int], float]:
    """Dijkstra from the virtual source to the virtual sink.

    Returns the global frame indices on the path (without source/sink) and
    its cost. Among equal-cost paths the lexicographically smallest frame
    sequence wins.
    """
    n = graph.n
    if n == 1:
        return [graph.start], 0.0
    W = graph.weights
    if np.any(W < 0):
        raise InvalidArgumentError("negative edge weight")
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    heap = []
    for v in range(min(graph.border, n)):
        dist[v] = 0.0
        heap.append((0.0, v))
    heapq.heapify(heap)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u] or d > dist[u]:
            continue
        done[u] = True
        hi = min(graph.tau_max, n - 1 - u)
        if hi < 1:
            continue
        succ = np.arange(u + 1, u + hi + 1)
        nd = d + W[u, :hi]
        better = nd < dist[succ]
        for v, dv in zip(succ[better].tolist(), nd[better].tolist()):
            dist[v] = dv
            pred[v] = u
            heapq.heappush(heap, (dv, v))
        tie = (nd == dist[succ]) & ~better & ~done[succ]
        for v in succ[tie].tolist():
            # Keys are (dist, node) and edges point forward, so every
            # predecessor of v is settled before v and its path is final.
            if pred[v] == -1 or _path_to(pred, u) + [v] < _path_to(pred, int(pred[v])) + [v]:
                pred[v] = u
    sinks = list(range(n - min(graph.border, n), n))
    best = min(dist[v] for v in sinks)
    if not math.isfinite(best):
        raise MiffError("sink unreachable; graph invariant violated")
    candidates = [_path_to(pred, v) for v in sinks if dist[v] == best]
    path = min(candidates)
    return [int(graph.start + v) for v in path], float(best)


def compose_selection(paths: Sequence[Sequence[int]]) -> list[int]:
    """Concatenate per-segment paths given in temporal order."""
    out: list[int] = []
    for p in paths:
        for f in p:
            if out and f <= out[-1]:
                raise InvalidArgumentError("segment paths overlap or are out of order")
            out.append(int(f))
    return out
