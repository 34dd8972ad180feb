"""Fast-forward stabilization: master frames, interpolated homographies, and
stitching or replacement of frames that leave holes in the crop area."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .errors import (
    GeometryError,
    InsufficientCorrespondencesError,
    InvalidArgumentError,
    NonPrincipalPowerError,
    UnstabilizableError,
)
from .features import FeatureStream
from .geometry import (
    RansacConfig,
    centered_rect,
    coverage_fraction,
    homography_fractional_power,
    interpolate_homography_linear,
    normalize_homography,
    ransac_homography,
    warped_quad,
)

KEPT, STITCHED, REPLACED, DROPPED = "kept", "stitched", "replaced", "dropped"
COVER_TOL = 1e-9


@dataclass(frozen=True)
class StabilizerConfig:
    alpha: int = 4
    dp: float = 0.5
    cp: float = 0.9
    eta: float = 0.5
    sigma_rep: float = 10.0
    ransac_iterations: int = 200
    ransac_threshold: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 2:
            raise InvalidArgumentError("alpha must be >= 2")
        if not 0 < self.dp < self.cp < 1:
            raise InvalidArgumentError("need 0 < dp < cp < 1")
        if not self.eta > 0:
            raise InvalidArgumentError("eta must be positive")


def correspondences(stream: FeatureStream, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the tracks frames ``a`` and ``b`` share, ordered by track id."""
    ka, kb = stream[a].keypoint_map(), stream[b].keypoint_map()
    shared = sorted(set(ka) & set(kb))
    if len(shared) < 4:
        raise InsufficientCorrespondencesError(f"frames {a} and {b} share {len(shared)} tracks (< 4)")
    return np.array([ka[t] for t in shared]), np.array([kb[t] for t in shared])


class Registrar:
    """Memoized pairwise RANSAC homographies between frames of one stream.

    Each unordered pair is estimated once; the reverse direction is its
    inverse, so inlier counts are symmetric.
    """

    def __init__(self, stream: FeatureStream, config: StabilizerConfig):
        self.stream = stream
        self.config = config
        self._cache: dict[tuple[int, int], tuple[np.ndarray, int] | None] = {}

    def _estimate(self, a, b):
        try:
            src, dst = correspondences(self.stream, a, b)
            seed = int(np.random.SeedSequence([self.config.seed, a, b]).generate_state(1)[0])
            cfg = RansacConfig(self.config.ransac_iterations, self.config.ransac_threshold, seed)
            H, inliers = ransac_homography(src, dst, cfg)
        except GeometryError:
            return None
        return H, len(inliers)

    def pair(self, a: int, b: int) -> tuple[np.ndarray, int] | None:
        """(H taking frame a into frame b, inlier count), or None if unregistrable."""
        if a == b:
            return np.eye(3), len(self.stream[a].keypoints)
        key = (min(a, b), max(a, b))
        if key not in self._cache:
            self._cache[key] = self._estimate(*key)
        hit = self._cache[key]
        if hit is None:
            return None
        H, n = hit
        return (H, n) if a < b else (normalize_homography(np.linalg.inv(H)), n)

    def inliers(self, a: int, b: int) -> int:
        hit = self.pair(a, b)
        return 0 if hit is None else hit[1]


def select_master(frames: Sequence[int], registrar: Registrar) -> int:
    """Frame with the most RANSAC inliers to the rest of its segment.

    Ties go to the frame closest to the segment center, then the lower index.
    """
    frames = list(frames)
    if len(frames) == 1:
        return frames[0]
    totals = [sum(registrar.inliers(f, g) for g in frames if g != f) for f in frames]
    if max(totals) == 0:
        raise UnstabilizableError(f"no frame of segment {frames} registers to another")
    center = (len(frames) - 1) / 2.0
    best = min(range(len(frames)), key=lambda k: (-totals[k], abs(k - center), frames[k]))
    return frames[best]


def replacement_gain(coverage: float, inliers: int, score: float, eta: float, sigma: float) -> float:
    """Gaussian(coverage; mean 1, sigma) * neighbour inliers * (eta + semantic score)."""
    return math.exp(-((coverage - 1.0) ** 2) / (2.0 * sigma * sigma)) * inliers * (eta + score)


@dataclass(frozen=True)
class ReplacementCandidate:
    frame: int
    coverage: float
    inliers: int
    score: float


def select_replacement_frame(candidates: Sequence[ReplacementCandidate], eta: float, sigma: float) -> int | None:
    """Best candidate by ``replacement_gain``; lower frame index on ties. None when empty."""
    if not candidates:
        return None
    best = max(candidates, key=lambda c: (replacement_gain(c.coverage, c.inliers, c.score, eta, sigma), -c.frame))
    return best.frame


@dataclass
class PlanEntry:
    position: int
    selected_frame: int
    source_frame: int
    homography: np.ndarray
    coverage: float
    action: str
    master_pre: int
    master_pos: int
    delta: int
    Delta: int
    w: float
    stitched: list[tuple[int, np.ndarray]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "position": self.position,
            "selected_frame": self.selected_frame,
            "source_frame": self.source_frame,
            "homography": [float(v) for v in self.homography.ravel()],
            "coverage": self.coverage,
            "action": self.action,
            "masters": [self.master_pre, self.master_pos],
            "delta": self.delta,
            "Delta": self.Delta,
            "w": self.w,
            "stitched": [{"frame": f, "homography": [float(v) for v in H.ravel()]} for f, H in self.stitched],
            "flags": list(self.flags),
        }


@dataclass
class StabilizationPlan:
    width: int
    height: int
    config: StabilizerConfig
    masters: list[int]
    entries: list[PlanEntry]
    unstabilizable_segments: list[list[int]] = field(default_factory=list)

    @property
    def crop_rect(self) -> np.ndarray:
        return centered_rect(self.width, self.height, self.config.cp)

    def output_entries(self) -> list[PlanEntry]:
        return [e for e in self.entries if e.action != DROPPED]

    def action_counts(self) -> dict[str, int]:
        out = {KEPT: 0, STITCHED: 0, REPLACED: 0, DROPPED: 0}
        for e in self.entries:
            out[e.action] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "width": self.width,
            "height": self.height,
            "crop_rect": self.crop_rect.tolist(),
            "masters": self.masters,
            "unstabilizable_segments": self.unstabilizable_segments,
            "actions": self.action_counts(),
            "frames": [e.to_dict() for e in self.entries],
        }


def _safe_power(H, w):
    try:
        return homography_fractional_power(H, w)
    except NonPrincipalPowerError:
        return interpolate_homography_linear(H, w)


def _union_coverage(quads, rect) -> float:
    target = Polygon(rect)
    covered = unary_union([Polygon(q) for q in quads]).intersection(target).area
    return min(covered / target.area, 1.0)


class _Stabilizer:
    def __init__(self, selection, stream, config, scores):
        self.sel = list(selection)
        self.stream = stream
        self.cfg = config
        self.scores = scores
        self.reg = Registrar(stream, config)
        self.W, self.H = stream.width, stream.height
        self.crop = centered_rect(self.W, self.H, config.cp)
        self.drop = centered_rect(self.W, self.H, config.dp)
        selected = set(self.sel)
        self.dropped = [f for f in range(len(stream)) if f not in selected]
        self.used: set[int] = set()

    def masters(self):
        a = self.cfg.alpha
        masters, bad = [], []
        for c in range(0, len(self.sel), a):
            chunk = self.sel[c : c + a]
            try:
                masters.append(select_master(chunk, self.reg))
            except UnstabilizableError:
                bad.append(chunk)
        return masters, bad

    def warp_for(self, src, m_pre, m_pos):
        """Interpolated homography for frame ``src`` between its two masters."""
        flags = []
        delta, Delta = src - m_pre, m_pos - m_pre
        w = 0.0 if Delta == 0 else min(max(delta * 2.0 * self.cfg.alpha / Delta, 0.0), 1.0)
        mats = []
        for m in (m_pre, m_pos):
            hit = self.reg.pair(src, m)
            if hit is None:
                flags.append(f"unregistered:{m}")
                mats.append(np.eye(3))
            else:
                mats.append(hit[0])
        H = normalize_homography(_safe_power(mats[0], 1.0 - w) @ _safe_power(mats[1], w))
        return H, delta, Delta, w, flags

    def coverage(self, H, rect=None):
        try:
            return coverage_fraction(H, self.W, self.H, self.crop if rect is None else rect)
        except GeometryError:
            return 0.0

    def window(self, pos):
        lo = self.sel[pos - 1] if pos > 0 else -1
        hi = self.sel[pos + 1] if pos + 1 < len(self.sel) else len(self.stream)
        a, b = bisect.bisect_right(self.dropped, lo), bisect.bisect_left(self.dropped, hi)
        return [d for d in self.dropped[a:b] if d not in self.used]

    def neighbour_inliers(self, d, pos):
        total = 0
        for q in (pos - 1, pos + 1):
            if 0 <= q < len(self.sel):
                total += self.reg.inliers(d, self.sel[q])
        return total

    def stabilize_frame(self, pos, m_pre, m_pos):
        f = self.sel[pos]
        H, delta, Delta, w, flags = self.warp_for(f, m_pre, m_pos)
        entry = PlanEntry(pos, f, f, H, self.coverage(H), KEPT, m_pre, m_pos, delta, Delta, w, flags=flags)
        quads = [warped_quad(H, self.W, self.H)] if entry.coverage > 0 else []
        tried: set[int] = set()
        while entry.coverage < 1.0 - COVER_TOL:
            window = [d for d in self.window(pos) if d not in tried]
            covers_drop = bool(quads) and _union_coverage(quads, self.drop) >= 1.0 - COVER_TOL
            if covers_drop and window:
                d = min(window, key=lambda x: (abs(x - entry.source_frame), x))
                tried.add(d)
                hit = self.reg.pair(d, entry.source_frame)
                if hit is None:
                    continue
                Hd = normalize_homography(entry.homography @ hit[0])
                try:
                    quads.append(warped_quad(Hd, self.W, self.H))
                except GeometryError:
                    continue
                self.used.add(d)
                entry.stitched.append((d, Hd))
                entry.action = STITCHED
                entry.coverage = _union_coverage(quads, self.crop)
                continue
            candidates = []
            for d in window:
                Hd = self.warp_for(d, m_pre, m_pos)[0]
                candidates.append(
                    ReplacementCandidate(d, self.coverage(Hd), self.neighbour_inliers(d, pos), float(self.scores[d]))
                )
            choice = select_replacement_frame(candidates, self.cfg.eta, self.cfg.sigma_rep)
            if choice is None:
                entry.action = DROPPED
                break
            tried.add(choice)
            self.used.add(choice)
            H, delta, Delta, w, flags = self.warp_for(choice, m_pre, m_pos)
            entry.source_frame, entry.homography = choice, H
            entry.delta, entry.Delta, entry.w, entry.flags = delta, Delta, w, flags
            entry.stitched = []
            entry.action = REPLACED
            entry.coverage = self.coverage(H)
            quads = [warped_quad(H, self.W, self.H)] if entry.coverage > 0 else []
        return entry


def stabilize(
    selection: Sequence[int],
    stream: FeatureStream,
    config: StabilizerConfig = StabilizerConfig(),
    scores: Sequence[float] | None = None,
) -> StabilizationPlan:
    """Build the stabilization plan for the selected frames (all others are the dropped set)."""
    if len(selection) == 0:
        raise InvalidArgumentError("empty selection")
    if any(b <= a for a, b in zip(selection, selection[1:])):
        raise InvalidArgumentError("selection must be strictly increasing")
    scores = np.zeros(len(stream)) if scores is None else np.asarray(scores, dtype=float)
    st = _Stabilizer(selection, stream, config, scores)
    masters, bad = st.masters()
    if not masters:
        raise UnstabilizableError("no segment of the selection could be registered")
    bad_frames = {f for chunk in bad for f in chunk}
    master_pos = sorted(st.sel.index(m) for m in masters)
    entries = []
    for pos, f in enumerate(st.sel):
        if f in bad_frames:
            e = PlanEntry(pos, f, f, np.eye(3), 1.0, KEPT, f, f, 0, 0, 0.0, flags=["unstabilizable"])
            entries.append(e)
            continue
        k = bisect.bisect_right(master_pos, pos)
        pre = st.sel[master_pos[k - 1]] if k > 0 else st.sel[master_pos[0]]
        post = st.sel[master_pos[k]] if k < len(master_pos) else pre
        entries.append(st.stabilize_frame(pos, pre, post))
    return StabilizationPlan(stream.width, stream.height, config, sorted(masters), entries, [list(c) for c in bad])


# --- rendering ----------------------------------------------------------------


def _sample(img, H, xs, ys):
    """Nearest-neighbour lookup of ``img`` at H^-1 applied to output pixel centers."""
    Hinv = np.linalg.inv(H)
    pts = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5, np.ones(xs.size)])
    src = Hinv @ pts
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(src[0] / src[2]).astype(np.int64, copy=False)
        v = np.floor(src[1] / src[2]).astype(np.int64, copy=False)
    ok = (src[2] > 0) & (u >= 0) & (u < img.shape[1]) & (v >= 0) & (v < img.shape[0])
    out = np.zeros(xs.size, dtype=img.dtype)
    out[ok] = img[v[ok], u[ok]]
    return out.reshape(xs.shape), ok.reshape(xs.shape)


def render_stabilized(plan: StabilizationPlan, rasters: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Crop-area images of every output frame, holes filled from stitched frames."""
    x0, y0 = plan.crop_rect[0]
    x1, y1 = plan.crop_rect[2]
    xs_i = np.arange(int(math.ceil(x0)), int(math.floor(x1)))
    ys_i = np.arange(int(math.ceil(y0)), int(math.floor(y1)))
    ys, xs = np.meshgrid(ys_i.astype(float), xs_i.astype(float), indexing="ij")
    out = []
    for e in plan.output_entries():
        img, filled = _sample(rasters[e.source_frame], e.homography, xs, ys)
        for d, Hd in e.stitched:
            if filled.all():
                break
            extra, ok = _sample(rasters[d], Hd, xs, ys)
            take = ok & ~filled
            img[take] = extra[take]
            filled |= ok
        out.append(img)
    return out


def crop_unstabilized(frames: Sequence[int], rasters: Sequence[np.ndarray], cp: float) -> list[np.ndarray]:
    """The same crop window taken from the raw selected frames, for comparison."""
    h, w = rasters[0].shape
    rect = centered_rect(w, h, cp)
    x0, y0 = int(math.ceil(rect[0][0])), int(math.ceil(rect[0][1]))
    x1, y1 = int(math.floor(rect[2][0])), int(math.floor(rect[2][1]))
    return [rasters[f][y0:y1, x0:x1].copy() for f in frames]
