import json
import math

import numpy as np
import pytest

from miff.errors import InsufficientCorrespondencesError, InvalidArgumentError, UnstabilizableError
from miff.scenario import ScenarioSpec, identity_motion, synthesize_scenario
from miff.stabilizer import (
    DROPPED,
    KEPT,
    REPLACED,
    STITCHED,
    Registrar,
    ReplacementCandidate,
    StabilizerConfig,
    correspondences,
    crop_unstabilized,
    render_stabilized,
    select_master,
    select_replacement_frame,
    stabilize,
)

from conftest import make_stream


def tracks(ids, rng_seed=0):
    """Keypoints at fixed, non-collinear positions per track id."""
    rng = np.random.default_rng(rng_seed)
    pos = rng.uniform(5, 95, (100, 2))
    return [(t, *pos[t]) for t in ids]


def shifted_scenario(shift, length=20):
    m = identity_motion(length)
    m[8, 0] = shift
    return synthesize_scenario(ScenarioSpec(length=length, camera_motion=m, seed=4))[0]


class TestCorrespondences:
    def test_shared(self):
        s = make_stream(2, keypoints=[tracks(range(10)), tracks(range(5, 20))])
        src, dst = correspondences(s, 0, 1)
        assert len(src) == 5 and np.array_equal(src, dst)

    def test_disjoint(self):
        s = make_stream(2, keypoints=[tracks(range(10)), tracks(range(10, 20))])
        with pytest.raises(InsufficientCorrespondencesError):
            correspondences(s, 0, 1)

    def test_ground_truth_consistent(self):
        m = identity_motion(3)
        m[:, 0] = [0, 4, 9]
        m[:, 3] = [1, 1.02, 0.97]
        s, gt = synthesize_scenario(ScenarioSpec(length=3, camera_motion=m, seed=1))
        src, dst = correspondences(s, 0, 2)
        H = gt.pairwise(0, 2)
        proj = np.c_[src, np.ones(len(src))] @ H.T
        assert np.abs(proj[:, :2] / proj[:, 2:] - dst).max() < 1e-9


class TestMaster:
    def test_hub_frame(self):
        s = make_stream(3, keypoints=[tracks(range(10)), tracks(range(20)), tracks(range(10, 20))])
        assert select_master([0, 1, 2], Registrar(s, StabilizerConfig())) == 1

    def test_symmetric_picks_center(self):
        s = make_stream(5, keypoints=[tracks(range(12))] * 5)
        assert select_master([0, 1, 2, 3, 4], Registrar(s, StabilizerConfig())) == 2

    def test_pair_picks_lower(self):
        s = make_stream(2, keypoints=[tracks(range(12))] * 2)
        assert select_master([0, 1], Registrar(s, StabilizerConfig(alpha=2))) == 0

    def test_no_registration(self):
        s = make_stream(3, keypoints=[tracks(range(3)), tracks(range(3, 6)), tracks(range(6, 9))])
        with pytest.raises(UnstabilizableError):
            select_master([0, 1, 2], Registrar(s, StabilizerConfig()))

    def test_inliers_symmetric(self):
        s = shifted_scenario(10)
        reg = Registrar(s, StabilizerConfig())
        assert reg.inliers(3, 8) == reg.inliers(8, 3) > 0
        H, _ = reg.pair(3, 8)
        Hinv, _ = reg.pair(8, 3)
        assert np.allclose(H @ Hinv / (H @ Hinv)[2, 2], np.eye(3), atol=1e-9)


class TestReplacement:
    def test_single(self):
        assert select_replacement_frame([ReplacementCandidate(4, 0.3, 2, 0.0)], 0.5, 10) == 4

    def test_empty(self):
        assert select_replacement_frame([], 0.5, 10) is None

    def test_semantic_score_breaks_equality(self):
        c = [ReplacementCandidate(4, 0.8, 10, 0.0), ReplacementCandidate(5, 0.8, 10, 1.0)]
        assert select_replacement_frame(c, 0.5, 10) == 5

    def test_triple(self):
        # Gains: exp(0)*20*0.5 = 10, exp(-0.25/200)*40*0.5 = 19.975..., exp(-1/200)*20*0.5 = 9.950...
        c = [
            ReplacementCandidate(1, 1.0, 20, 0.0),
            ReplacementCandidate(2, 0.5, 40, 0.0),
            ReplacementCandidate(3, 0.0, 20, 0.0),
        ]
        assert select_replacement_frame(c, 0.5, 10) == 2


class TestPlan:
    def test_identity_motion(self):
        s, _ = synthesize_scenario(ScenarioSpec(length=30, seed=2))
        plan = stabilize(list(range(0, 30, 3)), s)
        assert plan.action_counts() == {KEPT: 10, STITCHED: 0, REPLACED: 0, DROPPED: 0}
        for e in plan.entries:
            assert np.linalg.norm(e.homography - np.eye(3)) <= 1e-6
            assert e.coverage == pytest.approx(1.0)

    def test_stitched(self):
        plan = stabilize(list(range(0, 20, 2)), shifted_scenario(30))
        e = plan.entries[4]
        assert e.selected_frame == 8 and e.action == STITCHED
        assert [f for f, _ in e.stitched] == [7]
        assert e.coverage >= 1 - 1e-9

    def test_replaced(self):
        plan = stabilize(list(range(0, 20, 2)), shifted_scenario(50))
        e = plan.entries[4]
        assert e.action == REPLACED and e.source_frame in (7, 9)
        assert e.coverage >= 1 - 1e-9

    def test_dropped_without_candidates(self):
        sel = [0, 2, 4, 6, 7, 8, 9, 10, 12, 14, 16, 18]
        plan = stabilize(sel, shifted_scenario(50))
        e = plan.entries[sel.index(8)]
        assert e.action == DROPPED
        assert len(plan.output_entries()) == len(sel) - 1

    def test_interpolation_weight(self):
        plan = stabilize(list(range(0, 20, 2)), shifted_scenario(10))
        for e in plan.entries:
            expected = 0.0 if e.Delta == 0 else min(max(e.delta * 2 * 4 / e.Delta, 0.0), 1.0)
            assert e.w == pytest.approx(expected)
            assert e.delta == e.source_frame - e.master_pre

    def test_plan_serializes(self):
        plan = stabilize(list(range(0, 20, 2)), shifted_scenario(30))
        d = json.loads(json.dumps(plan.to_dict()))
        assert d["actions"][STITCHED] == 1 and len(d["frames"]) == 10

    def test_deterministic(self):
        a = stabilize(list(range(0, 20, 2)), shifted_scenario(30)).to_dict()
        b = stabilize(list(range(0, 20, 2)), shifted_scenario(30)).to_dict()
        assert a == b

    def test_bad_selection(self):
        s = shifted_scenario(0)
        with pytest.raises(InvalidArgumentError):
            stabilize([], s)
        with pytest.raises(InvalidArgumentError):
            stabilize([3, 2], s)

    def test_unregistrable_stream(self):
        with pytest.raises(UnstabilizableError):
            stabilize([0, 1, 2], make_stream(3))

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            StabilizerConfig(dp=0.95, cp=0.9)
        with pytest.raises(InvalidArgumentError):
            StabilizerConfig(alpha=1)


class TestRender:
    def test_identity_plan_renders_the_crop(self):
        s, gt = synthesize_scenario(ScenarioSpec(length=12, render_rasters=True, seed=3))
        sel = list(range(0, 12, 2))
        plan = stabilize(sel, s)
        out = render_stabilized(plan, gt.rasters)
        raw = crop_unstabilized(sel, gt.rasters, plan.config.cp)
        assert all(np.array_equal(a, b) for a, b in zip(out, raw))
        h, w = gt.rasters[0].shape
        assert out[0].shape == (math.floor(h - h * 0.05) - math.ceil(h * 0.05), math.floor(w - w * 0.05) - math.ceil(w * 0.05))
