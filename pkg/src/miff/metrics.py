"""Output quality measures: instability index, semantic retention and achieved speed-up."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class InstabilityConfig:
    buffer_size: int = 15
    stride: int = 1

    def __post_init__(self):
        if self.buffer_size < 2:
            raise InvalidArgumentError("buffer size must be >= 2")
        if self.stride < 1:
            raise InvalidArgumentError("stride must be >= 1")

    @classmethod
    def for_fps(cls, fps: float) -> InstabilityConfig:
        """Half a second of output frames, at least two."""
        return cls(buffer_size=max(2, math.ceil(fps / 2.0)))


def instability_index(frames: Sequence[np.ndarray], config: InstabilityConfig = InstabilityConfig()) -> float:
    """Mean over sliding buffers of the pixel-averaged temporal standard deviation.

    The standard deviation uses the N_B - 1 divisor.
    """
    if len(frames) < config.buffer_size:
        raise InvalidArgumentError(f"need at least {config.buffer_size} frames, got {len(frames)}")
    shape = np.shape(frames[0])
    if any(np.shape(f) != shape for f in frames):
        raise InvalidArgumentError("frames differ in dimensions")
    stack = np.asarray(frames, dtype=np.float64)
    nb = config.buffer_size
    starts = range(0, len(stack) - nb + 1, config.stride)
    per_buffer = [float(stack[s : s + nb].std(axis=0, ddof=1).mean()) for s in starts]
    return float(np.mean(per_buffer))


@dataclass(frozen=True)
class Retention:
    value: float
    degenerate: bool = False


def semantic_retention(selection: Sequence[int], scores: Sequence[float], required_speedup: float) -> Retention:
    """Selected score mass relative to the top-n frames, n = ceil(L / F_d).

    When the top-n mass is zero there is nothing to retain; the value is 1
    and the result is flagged degenerate.
    """
    s = np.asarray(scores, dtype=float)
    if not required_speedup >= 1:
        raise InvalidArgumentError("required speed-up must be >= 1")
    if np.any(s < 0):
        raise InvalidArgumentError("scores must be non-negative")
    idx = np.asarray(list(selection), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= len(s)):
        raise InvalidArgumentError("selection index out of range")
    if len(set(idx.tolist())) != idx.size:
        raise InvalidArgumentError("selection has duplicate frames")
    n = math.ceil(len(s) / required_speedup)
    best = float(np.sort(s)[::-1][:n].sum())
    if best <= 0:
        return Retention(1.0, True)
    # A selection longer than n frames can exceed the top-n mass.
    return Retention(min(float(s[idx].sum()) / best, 1.0))


def achieved_speedup(input_length: int, output_length: int) -> float:
    if output_length <= 0:
        raise InvalidArgumentError("empty output")
    if input_length < 0:
        raise InvalidArgumentError("negative input length")
    return input_length / output_length
