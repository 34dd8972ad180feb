"""Synthetic egocentric feature streams with known camera motion and semantic labels.

A planar world (smooth gradient plus a grid of textured squares, scattered
landmarks for tracking) is viewed by a camera whose per-frame pose is a
similarity transform ``[tx, ty, rotation, scale]``. Faces are planted in
the frames of each semantic block with size and confidence growing with
the block intensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateFlowError, InvalidArgumentError
from .features import DEFAULT_CONFIDENCE_FLOOR, Detection, FeatureStream, FrameFeatures, normalized_histogram
from .geometry import normalize_homography
from .graph import estimate_foe


@dataclass(frozen=True)
class ScenarioSpec:
    length: int
    fps: float = 30.0
    semantic_blocks: tuple[tuple[int, int, float], ...] = ()
    camera_motion: np.ndarray | None = field(default=None, compare=False)
    width: int = 160
    height: int = 120
    keypoint_noise: float = 0.0
    confidence_noise: float = 0.1
    raster_noise: float = 2.0
    miss_rate: float = 0.1
    false_positive_rate: float = 0.05
    detection_class: str = "face"
    landmark_density: float = 0.003
    histogram_bins: int = 16
    render_rasters: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.length < 2:
            raise InvalidArgumentError("scenario needs at least two frames")
        blocks = tuple(sorted((int(a), int(b), float(q)) for a, b, q in self.semantic_blocks))
        for a, b, q in blocks:
            if not 0 <= a < b <= self.length:
                raise InvalidArgumentError(f"block [{a}, {b}) outside [0, {self.length})")
            if q <= 0:
                raise InvalidArgumentError("block intensity must be positive")
        for (_, b0, _), (a1, _, _) in zip(blocks, blocks[1:]):
            if a1 < b0:
                raise InvalidArgumentError("semantic blocks overlap")
        object.__setattr__(self, "semantic_blocks", blocks)
        motion = identity_motion(self.length) if self.camera_motion is None else np.asarray(self.camera_motion, float)
        if motion.shape != (self.length, 4):
            raise InvalidArgumentError("camera_motion must have shape (length, 4)")
        object.__setattr__(self, "camera_motion", motion)


@dataclass
class GroundTruth:
    poses: np.ndarray
    labels: np.ndarray
    rasters: list[np.ndarray] | None = None

    def pairwise(self, a: int, b: int) -> np.ndarray:
        """Homography taking frame ``a`` pixel coordinates to frame ``b``."""
        return normalize_homography(self.poses[b] @ np.linalg.inv(self.poses[a]))


def identity_motion(length: int) -> np.ndarray:
    m = np.zeros((length, 4))
    m[:, 3] = 1.0
    return m


def walking_motion(
    length: int,
    fps: float = 30.0,
    seed: int = 0,
    pan_speed: float = 0.3,
    shake: float = 1.5,
    bob: float = 0.01,
    roll: float = 0.004,
) -> np.ndarray:
    """Slow pan with head bob (periodic zoom) and random shake."""
    rng = np.random.default_rng(seed)
    k = np.arange(length, dtype=float)
    step = 2 * math.pi * k / (0.9 * fps)
    m = np.empty((length, 4))
    m[:, 0] = pan_speed * k + shake * rng.standard_normal(length)
    m[:, 1] = 2.0 * np.sin(step) + shake * rng.standard_normal(length)
    m[:, 2] = roll * rng.standard_normal(length)
    m[:, 3] = 1.0 + bob * np.sin(step + 0.5) + 0.002 * rng.standard_normal(length)
    return m


def jitter_motion(length: int, seed: int = 0, amplitude: float = 3.0) -> np.ndarray:
    """Static camera with independent per-frame translational shake."""
    rng = np.random.default_rng(seed)
    m = identity_motion(length)
    m[:, :2] = amplitude * rng.uniform(-1.0, 1.0, (length, 2))
    return m


def pose_matrix(params, width: float, height: float) -> np.ndarray:
    """World-to-frame homography: shift by -t, then rotate/scale about the frame center."""
    tx, ty, rot, scale = params
    cx, cy = width / 2.0, height / 2.0
    c, s = math.cos(rot) * scale, math.sin(rot) * scale
    center = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    rs = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    back = np.array([[1.0, 0.0, -cx - tx], [0.0, 1.0, -cy - ty], [0.0, 0.0, 1.0]])
    return center @ rs @ back


def world_texture(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    g = 128.0 + 40.0 * np.sin(2 * np.pi * x / 200.0) + 30.0 * np.cos(2 * np.pi * y / 150.0)
    cx = np.floor(x / 16.0).astype(np.int64)
    cy = np.floor(y / 16.0).astype(np.int64)
    h = ((cx * 73856093) ^ (cy * 19349663)) & 0xFFFF
    g = g + np.where(h % 4 == 0, (h >> 4) % 120 - 60, 0)
    return np.clip(g, 0.0, 255.0)


def render_view(pose: np.ndarray, width: int, height: int, step: int = 1) -> np.ndarray:
    ys, xs = np.mgrid[0:height:step, 0:width:step].astype(float)
    pts = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5, np.ones(xs.size)])
    w = np.linalg.inv(pose) @ pts
    vals = world_texture(w[0] / w[2], w[1] / w[2])
    return vals.reshape(xs.shape)


def _project(pose, pts):
    hom = pts @ pose[:, :2].T + pose[:, 2]
    return hom[:, :2] / hom[:, 2:3]


def _world_bounds(poses, width, height):
    corners = np.array([[0, 0, 1], [width, 0, 1], [width, height, 1], [0, height, 1]], float).T
    pts = []
    for P in poses:
        w = np.linalg.inv(P) @ corners
        pts.append((w[:2] / w[2]).T)
    pts = np.concatenate(pts)
    return pts.min(axis=0) - 10.0, pts.max(axis=0) + 10.0


def _block_intensity(spec: ScenarioSpec) -> np.ndarray:
    labels = np.zeros(spec.length)
    for a, b, q in spec.semantic_blocks:
        labels[a:b] = q
    return labels


def _detections(rng, spec: ScenarioSpec, intensity: float) -> tuple[Detection, ...]:
    W, H = spec.width, spec.height
    floor = DEFAULT_CONFIDENCE_FLOOR.get(spec.detection_class, 60.0)
    dets = []
    if intensity > 0:
        count = int(rng.random() >= spec.miss_rate) + int(rng.random() < 0.3)
        for _ in range(count):
            side = 18.0 * math.sqrt(intensity) * max(0.3, 1.0 + 0.15 * rng.standard_normal())
            cx = W / 2.0 + rng.normal(0.0, W / 8.0)
            cy = H / 2.0 + rng.normal(0.0, H / 8.0)
            conf = floor + 15.0 * intensity * (1.0 + spec.confidence_noise * rng.standard_normal())
            x0 = min(max(cx - side / 2.0, 0.0), W - 1.0)
            y0 = min(max(cy - side / 2.0, 0.0), H - 1.0)
            dets.append(Detection(x0, y0, side, side, conf, spec.detection_class).clamped(W, H))
    elif rng.random() < spec.false_positive_rate:
        side = 12.0
        x0 = rng.uniform(0, W - side)
        y0 = rng.uniform(0, H - side)
        dets.append(Detection(x0, y0, side, side, floor * rng.uniform(0.3, 0.9), spec.detection_class))
    return tuple(dets)


def synthesize_scenario(spec: ScenarioSpec) -> tuple[FeatureStream, GroundTruth]:
    """Generate a feature stream and its ground truth; deterministic per ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    W, H, L = spec.width, spec.height, spec.length
    poses = np.array([pose_matrix(p, W, H) for p in spec.camera_motion])
    lo, hi = _world_bounds(poses, W, H)
    n_landmarks = rng.poisson(spec.landmark_density * float(np.prod(hi - lo)))
    landmarks = lo + rng.random((n_landmarks, 2)) * (hi - lo)

    visible = []
    for P in poses:
        img = _project(P, landmarks)
        ok = np.flatnonzero((img[:, 0] >= 0) & (img[:, 0] < W) & (img[:, 1] >= 0) & (img[:, 1] < H))
        noisy = img[ok] + spec.keypoint_noise * rng.standard_normal((len(ok), 2))
        visible.append((ok, noisy))

    motion = []
    for k in range(L):
        a, b = (k, k + 1) if k + 1 < L else (k - 1, k)
        ids_a, pa = visible[a]
        ids_b, pb = visible[b]
        shared, ia, ib = np.intersect1d(ids_a, ids_b, assume_unique=True, return_indices=True)
        if len(shared) == 0:
            motion.append(((W / 2.0, H / 2.0), 0.0))
            continue
        disp = pb[ib] - pa[ia]
        mag = float(np.mean(np.hypot(disp[:, 0], disp[:, 1])))
        try:
            foe, _ = estimate_foe(pa[ia], disp)
        except DegenerateFlowError:
            mean = disp.mean(axis=0)
            foe = (W / 2.0 + float(mean[0]), H / 2.0 + float(mean[1]))
        motion.append((foe, mag))

    labels = _block_intensity(spec)
    rasters = [] if spec.render_rasters else None
    hist_step = 1 if spec.render_rasters else 4
    frames = []
    for k in range(L):
        view = render_view(poses[k], W, H, hist_step)
        view = np.clip(view + spec.raster_noise * rng.standard_normal(view.shape), 0, 255)
        if rasters is not None:
            rasters.append(np.round(view).astype(np.uint8))
        counts, _ = np.histogram(view, bins=spec.histogram_bins, range=(0.0, 256.0))
        ids, pts = visible[k]
        kps = tuple((int(t), float(x), float(y)) for t, (x, y) in zip(ids, pts))
        foe, mag = motion[k]
        frames.append(
            FrameFeatures(
                frame_index=k,
                width=W,
                height=H,
                detections=_detections(rng, spec, labels[k]),
                keypoints=kps,
                foe=(float(foe[0]), float(foe[1])),
                flow_mean_magnitude=mag,
                histogram=normalized_histogram(counts),
            )
        )
    return FeatureStream(tuple(frames), spec.fps), GroundTruth(poses, labels, rasters)


def density_blocks(length: int, fps: float, density: float, seed: int = 0, intensity: float = 1.0):
    """Blocks covering about ``density`` of the video, each at least 20 s long and
    separated by at least 20 s, well clear of the smoothing scale."""
    if density <= 0:
        return ()
    rng = np.random.default_rng(seed)
    total = int(round(density * length))
    min_block, min_gap = int(20 * fps), int(20 * fps)
    n_blocks = max(1, min(total // min_block, int(rng.integers(1, 4))))
    sizes = np.full(n_blocks, total // n_blocks)
    sizes[: total % n_blocks] += 1
    free = length - total - min_gap * (n_blocks + 1)
    if free < 0:
        n_blocks, sizes, free = 1, np.array([total]), max(length - total, 0)
        gaps = np.array([free // 2, free - free // 2])
    else:
        cuts = np.sort(rng.integers(0, free + 1, n_blocks))
        extra = np.diff(np.concatenate([[0], cuts, [free]]))
        gaps = extra + min_gap
    blocks, pos = [], int(gaps[0])
    for i in range(n_blocks):
        blocks.append((pos, pos + int(sizes[i]), intensity))
        pos += int(sizes[i]) + int(gaps[i + 1])
    return tuple(blocks)


def preset(name: str, length: int = 3000, fps: float = 30.0, seed: int = 0, **overrides) -> ScenarioSpec:
    """Named scenario families: ``0p``, ``25p``, ``50p``, ``75p``, ``two-level``, ``jitter``."""
    motion = walking_motion(length, fps, seed=seed + 1)
    if name in ("0p", "25p", "50p", "75p"):
        blocks = density_blocks(length, fps, int(name[:-1]) / 100.0, seed=seed + 2)
    elif name == "two-level":
        q = length // 5
        blocks = ((q, 2 * q, 1.0), (3 * q, 4 * q, 2.0))
    elif name == "jitter":
        motion = jitter_motion(length, seed=seed + 1)
        blocks = ()
    else:
        raise InvalidArgumentError(f"unknown scenario preset {name!r}")
    spec = ScenarioSpec(length=length, fps=fps, semantic_blocks=blocks, camera_motion=motion, seed=seed)
    return replace(spec, **overrides) if overrides else spec
