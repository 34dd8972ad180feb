import numpy as np
import pytest

from miff.features import Detection, FeatureStream, FrameFeatures


def make_frame(k, width=100, height=100, **kw):
    return FrameFeatures(frame_index=k, width=width, height=height, **kw)


def make_stream(n, fps=30.0, width=100, height=100, foes=None, mags=None, hists=None, keypoints=None, **kw):
    frames = []
    for k in range(n):
        extra = dict(kw)
        if foes is not None:
            extra["foe"] = foes[k]
        if mags is not None:
            extra["flow_mean_magnitude"] = float(mags[k])
        if hists is not None:
            extra["histogram"] = tuple(hists[k])
        if keypoints is not None:
            extra["keypoints"] = tuple(keypoints[k])
        frames.append(make_frame(k, width, height, **extra))
    return FeatureStream(tuple(frames), fps)


def face(cx, cy, w, h, conf=1.0):
    return Detection(cx - w / 2.0, cy - h / 2.0, w, h, conf, "face")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
