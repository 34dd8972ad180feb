"""Per-frame feature records, the semantic score, and the JSON-Lines stream format.

A feature stream file starts with a header object::

    {"format": "miff-features", "version": 1, "fps": 30.0}

followed by one object per frame (``frame_index``, ``width``, ``height``,
``detections``, ``keypoints``, ``foe``, ``flow_mean_magnitude``,
``histogram``, ``raster``, ``score``).

Motion fields describe the flow from a frame to its successor; the last
frame repeats the previous one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, FormatError, InvalidArgumentError

STREAM_FORMAT = "miff-features"
STREAM_VERSION = 1

# Minimum raw detector confidence accepted per class.
DEFAULT_CONFIDENCE_FLOOR = {"face": 60.0, "pedestrian": 100.0}
# Raw confidence mapped to 1.0; roughly the largest score each detector emits.
DEFAULT_CONFIDENCE_NORM = {"face": 100.0, "pedestrian": 200.0}

HISTOGRAM_TOL = 1e-9


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    w: float
    h: float
    confidence: float
    class_label: str

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidArgumentError(f"detection size must be positive, got {self.w}x{self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h, self.confidence)):
            raise InvalidArgumentError("detection fields must be finite")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def clamped(self, width: float, height: float) -> Detection:
        x0, y0 = max(self.x, 0.0), max(self.y, 0.0)
        x1, y1 = min(self.x + self.w, width), min(self.y + self.h, height)
        if x1 <= x0 or y1 <= y0:
            raise InvalidArgumentError(f"detection {self} lies outside the {width}x{height} frame")
        if (x0, y0, x1 - x0, y1 - y0) == (self.x, self.y, self.w, self.h):
            return self
        return Detection(x0, y0, x1 - x0, y1 - y0, self.confidence, self.class_label)


@dataclass(frozen=True)
class FrameFeatures:
    frame_index: int
    width: int
    height: int
    detections: tuple[Detection, ...] = ()
    keypoints: tuple[tuple[int, float, float], ...] = ()
    foe: tuple[float, float] | None = None
    flow_mean_magnitude: float = 0.0
    histogram: tuple[float, ...] = (1.0,)
    raster_ref: str | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("frame dimensions must be positive")
        dets = tuple(d.clamped(self.width, self.height) for d in self.detections)
        object.__setattr__(self, "detections", dets)
        object.__setattr__(self, "keypoints", tuple((int(t), float(x), float(y)) for t, x, y in self.keypoints))
        object.__setattr__(self, "histogram", tuple(float(v) for v in self.histogram))
        ids = [k[0] for k in self.keypoints]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError(f"frame {self.frame_index}: duplicate keypoint track ids")
        if self.foe is not None:
            foe = (float(self.foe[0]), float(self.foe[1]))
            if not all(math.isfinite(v) for v in foe):
                raise InvalidArgumentError(f"frame {self.frame_index}: non-finite FOE")
            object.__setattr__(self, "foe", foe)
        hist = self.histogram
        if not hist or any(v < 0 for v in hist) or abs(math.fsum(hist) - 1.0) > HISTOGRAM_TOL:
            raise InvalidArgumentError(f"frame {self.frame_index}: histogram must be non-negative and sum to 1")
        if not math.isfinite(self.flow_mean_magnitude) or self.flow_mean_magnitude < 0:
            raise InvalidArgumentError(f"frame {self.frame_index}: bad flow magnitude")

    @property
    def center(self) -> tuple[float, float]:
        return (self.width / 2.0, self.height / 2.0)

    def keypoint_map(self) -> dict[int, tuple[float, float]]:
        return {t: (x, y) for t, x, y in self.keypoints}


@dataclass(frozen=True)
class FeatureStream:
    frames: tuple[FrameFeatures, ...]
    fps: float
    external_score: tuple[float | None, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise InvalidArgumentError("fps must be positive")
        if len(self.frames) < 2:
            raise InvalidArgumentError("a stream needs at least two frames")
        for i, f in enumerate(self.frames):
            if f.frame_index != i:
                raise InvalidArgumentError(f"frame_index must be gapless from 0; position {i} has {f.frame_index}")
        if self.external_score is not None:
            ext = tuple(None if s is None else float(s) for s in self.external_score)
            if len(ext) != len(self.frames):
                raise InvalidArgumentError("external_score length differs from frame count")
            object.__setattr__(self, "external_score", ext)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i) -> FrameFeatures:
        return self.frames[i]

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


def gaussian_centrality(point, width: float, height: float) -> float:
    """Unnormalized Gaussian weight (peak 1) of ``point`` around the frame center."""
    px, py = point
    if not all(math.isfinite(v) for v in (px, py, width, height)):
        raise InvalidArgumentError("gaussian_centrality needs finite inputs")
    if width <= 0 or height <= 0:
        raise InvalidArgumentError("frame dimensions must be positive")
    sigma = min(width / 2.0, height / 2.0)
    d2 = (px - width / 2.0) ** 2 + (py - height / 2.0) ** 2
    return math.exp(-d2 / (2.0 * sigma * sigma))


def semantic_score(
    frame: FrameFeatures,
    confidence_floor_by_class: Mapping[str, float] = DEFAULT_CONFIDENCE_FLOOR,
    confidence_norm: Mapping[str, float] = DEFAULT_CONFIDENCE_NORM,
    external: float | None = None,
) -> float:
    """Sum of confidence * relative area * centrality over accepted detections.

    ``external`` (e.g. a CNN rating for the frame) replaces the sum when given.
    """
    if external is not None:
        return external
    frame_area = float(frame.width * frame.height)
    total = 0.0
    for det in frame.detections:
        label = det.class_label
        if label not in confidence_floor_by_class or label not in confidence_norm:
            raise ConfigError(f"no confidence floor/norm configured for class '{label}'")
        norm = confidence_norm[label]
        if norm <= 0:
            raise ConfigError(f"confidence norm for '{label}' must be positive")
        if det.confidence < confidence_floor_by_class[label]:
            continue
        c = min(max(det.confidence / norm, 0.0), 1.0)
        a = det.area / frame_area
        total += c * a * gaussian_centrality(det.center, frame.width, frame.height)
    return total


def stream_scores(
    stream: FeatureStream,
    confidence_floor_by_class: Mapping[str, float] = DEFAULT_CONFIDENCE_FLOOR,
    confidence_norm: Mapping[str, float] = DEFAULT_CONFIDENCE_NORM,
) -> np.ndarray:
    ext = stream.external_score or (None,) * len(stream)
    return np.array(
        [semantic_score(f, confidence_floor_by_class, confidence_norm, e) for f, e in zip(stream.frames, ext)],
        dtype=float,
    )


# --- JSON Lines I/O ---------------------------------------------------------


def _frame_to_dict(frame: FrameFeatures, score) -> dict:
    return {
        "frame_index": frame.frame_index,
        "width": frame.width,
        "height": frame.height,
        "detections": [
            {"bbox": [d.x, d.y, d.w, d.h], "confidence": d.confidence, "class_label": d.class_label}
            for d in frame.detections
        ],
        "keypoints": [{"track_id": t, "x": x, "y": y} for t, x, y in frame.keypoints],
        "foe": None if frame.foe is None else list(frame.foe),
        "flow_mean_magnitude": frame.flow_mean_magnitude,
        "histogram": list(frame.histogram),
        "raster": frame.raster_ref,
        "score": score,
    }


def _frame_from_dict(obj: dict, line: int, record: int) -> tuple[FrameFeatures, float | None]:
    try:
        dets = tuple(
            Detection(*map(float, d["bbox"]), float(d["confidence"]), str(d["class_label"]))
            for d in obj.get("detections", [])
        )
        kps = tuple((int(k["track_id"]), float(k["x"]), float(k["y"])) for k in obj.get("keypoints", []))
        foe = obj.get("foe")
        frame = FrameFeatures(
            frame_index=int(obj["frame_index"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            detections=dets,
            keypoints=kps,
            foe=None if foe is None else (float(foe[0]), float(foe[1])),
            flow_mean_magnitude=float(obj.get("flow_mean_magnitude", 0.0)),
            histogram=tuple(float(v) for v in obj["histogram"]),
            raster_ref=obj.get("raster"),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"malformed frame record: {exc!r}", line, record) from exc
    except InvalidArgumentError as exc:
        raise FormatError(str(exc), line, record) from exc
    score = obj.get("score")
    return frame, None if score is None else float(score)


def dumps_stream(stream: FeatureStream) -> str:
    header = {"format": STREAM_FORMAT, "version": STREAM_VERSION, "fps": stream.fps}
    ext = stream.external_score or (None,) * len(stream)
    lines = [json.dumps(header)]
    lines += [json.dumps(_frame_to_dict(f, s)) for f, s in zip(stream.frames, ext)]
    return "\n".join(lines) + "\n"


def save_feature_stream(stream: FeatureStream, path) -> None:
    Path(path).write_text(dumps_stream(stream))


def loads_stream(text: str) -> FeatureStream:
    lines = [(n, ln) for n, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise FormatError("empty feature stream")
    try:
        header = json.loads(lines[0][1])
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", lines[0][0]) from exc
    if not isinstance(header, dict) or header.get("format") != STREAM_FORMAT:
        raise FormatError("missing stream header", lines[0][0])
    if header.get("version") != STREAM_VERSION:
        raise FormatError(f"unsupported stream version {header.get('version')!r}", lines[0][0])
    frames, scores = [], []
    for n, ln in lines[1:]:
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", n, len(frames) + 1) from exc
        frame, score = _frame_from_dict(obj, n, len(frames) + 1)
        expected = len(frames)
        if frame.frame_index != expected:
            kind = "duplicate" if frame.frame_index < expected else "gap in"
            raise FormatError(f"{kind} frame_index: expected {expected}, got {frame.frame_index}", n, expected + 1)
        frames.append(frame)
        scores.append(score)
    ext = tuple(scores) if any(s is not None for s in scores) else None
    try:
        return FeatureStream(tuple(frames), float(header["fps"]), ext)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(str(exc)) from exc


def load_feature_stream(path) -> FeatureStream:
    return loads_stream(Path(path).read_text())


def normalized_histogram(counts: Sequence[float]) -> tuple[float, ...]:
    """Normalize ``counts`` so the entries sum to 1 within float rounding."""
    arr = np.asarray(counts, dtype=float)
    total = arr.sum()
    if total <= 0:
        raise InvalidArgumentError("histogram has no mass")
    return tuple(float(v) for v in arr / total)
