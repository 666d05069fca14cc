import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import boxmocap as bm
from boxmocap.errors import FrameCountMismatch, InvariantError


def make_box(center, extents=(0.3, 0.2, 0.1), rotation=None):
    quat = np.array([1.0, 0.0, 0.0, 0.0]) if rotation is None else rotation
    return bm.BoxPose(center=np.asarray(center, float), rotation=quat, half_extents=np.asarray(extents, float))


def random_instance(rng, frames=2, boxes=3, joints=22):
    rows = []
    for _ in range(frames):
        rows.append(tuple(make_box(rng.normal(size=3)) for _ in range(boxes)))
    pts = rng.normal(size=(frames, joints, 3))
    return pts, rows


def fd_grad(joints, rows, cfg, h=1e-6):
    out = np.zeros_like(joints)
    it = np.nditer(joints, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        plus = joints.copy()
        plus[idx] += h
        minus = joints.copy()
        minus[idx] -= h
        out[idx] = (bm.guidance_loss(plus, rows, cfg) - bm.guidance_loss(minus, rows, cfg)) / (2 * h)
        it.iternext()
    return out


class TestSoftWeights:
    def test_single_distance(self):
        assert bm.soft_weights(np.array([0.42]), 0.1) == pytest.approx([1.0])

    def test_two_equal(self):
        np.testing.assert_allclose(bm.soft_weights(np.array([0.3, 0.3]), 0.1), [0.5, 0.5])

    def test_zero_one_tau_tenth(self):
        w = bm.soft_weights(np.array([0.0, 1.0]), 0.1)
        expect = np.array([1.0 / (1.0 + math.exp(-10.0)), math.exp(-10.0) / (1.0 + math.exp(-10.0))])
        np.testing.assert_allclose(w, expect, rtol=0, atol=1e-15)

    @given(
        d=st.lists(st.floats(min_value=0.0, max_value=50.0), min_size=1, max_size=22),
        tau=st.floats(min_value=1e-3, max_value=10.0),
        shift=st.floats(min_value=0.0, max_value=100.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_sum_and_shift_invariance(self, d, tau, shift):
        d = np.asarray(d)
        w = bm.soft_weights(d, tau)
        assert abs(w.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(bm.soft_weights(d + shift, tau), w, atol=1e-12)

    def test_large_distances_stable(self):
        w = bm.soft_weights(np.array([1e6, 1e6 + 1.0]), 0.1)
        assert np.isfinite(w).all()
        assert abs(w.sum() - 1.0) <= 1e-12


class TestGuidanceLoss:
    def test_centers_on_joints_small_tau(self, rng):
        joints = rng.normal(size=(3, 22, 3))
        rows = []
        for f in range(3):
            picks = rng.choice(22, size=2, replace=False)
            rows.append(tuple(make_box(joints[f, j]) for j in picks))
        cfg = bm.GuidanceConfig(tau=0.01)
        assert bm.guidance_loss(joints, rows, cfg) < 1e-6

    def test_all_absent_zero(self):
        joints = np.ones((2, 4, 3))
        assert bm.guidance_loss(joints, [(None,), (None,)]) == 0.0

    def test_single_pair_distance(self):
        joints = np.zeros((1, 1, 3))
        rows = [(make_box([0.7, 0.0, 0.0]),)]
        assert bm.guidance_loss(joints, rows) == pytest.approx(0.7, abs=1e-12)

    def test_relabeling_invariance(self, rng):
        joints, rows = random_instance(rng)
        base = bm.guidance_loss(joints, rows)
        shuffled_boxes = [tuple(reversed(row)) for row in rows]
        assert bm.guidance_loss(joints, shuffled_boxes) == pytest.approx(base, rel=1e-12)
        perm = rng.permutation(joints.shape[1])
        assert bm.guidance_loss(joints[:, perm], rows) == pytest.approx(base, rel=1e-12)

    def test_term_bounds(self, rng):
        for _ in range(20):
            joints = rng.normal(size=(1, 8, 3))
            box = make_box(rng.normal(size=3))
            loss = bm.guidance_loss(joints, [(box,)])
            d = np.linalg.norm(joints[0] - box.center, axis=1)
            assert d.min() - 1e-12 <= loss <= d.max() + 1e-12

    def test_frame_mismatch(self):
        with pytest.raises(FrameCountMismatch):
            bm.guidance_loss(np.zeros((2, 4, 3)), [(make_box([0, 0, 0]),)])

    def test_singleton_monotonic_sweep(self):
        # one box, one joint: L equals the distance, strictly increasing
        box = make_box([0.0, 0.0, 0.0])
        losses = []
        for d in np.linspace(0.01, 5.0, 100):
            joints = np.array([[[d, 0.0, 0.0]]])
            losses.append(bm.guidance_loss(joints, [(box,)]))
        diffs = np.diff(losses)
        assert (diffs > 0).all()


class TestGuidanceGrad:
    def test_all_absent_zero(self):
        g = bm.guidance_grad(np.ones((2, 4, 3)), [(None,), (None,)])
        assert (g == 0).all()

    def test_singleton_unit_vector(self):
        joints = np.array([[[1.0, 2.0, 2.0]]])
        rows = [(make_box([0.0, 0.0, 0.0]),)]
        g = bm.guidance_grad(joints, rows)
        np.testing.assert_allclose(g[0, 0], np.array([1.0, 2.0, 2.0]) / 3.0, atol=1e-12)

    def test_matches_finite_differences(self, rng):
        cfg = bm.GuidanceConfig()
        for _ in range(20):
            joints, rows = random_instance(rng)
            g = bm.guidance_grad(joints, rows, cfg)
            fd = fd_grad(joints, rows, cfg)
            denom = max(np.linalg.norm(fd), 1e-12)
            assert np.linalg.norm(g - fd) / denom < 1e-4

    def test_taylor_consistency(self, rng):
        joints, rows = random_instance(rng, frames=2, boxes=2, joints=8)
        g = bm.guidance_grad(joints, rows)
        base = bm.guidance_loss(joints, rows)
        gsq = float((g * g).sum())
        ratios = []
        for eps in (1e-3, 1e-4):
            shifted = bm.guidance_loss(joints + eps * g, rows)
            ratios.append(abs(shifted - base - eps * gsq) / eps)
        assert ratios[1] < ratios[0]
        assert ratios[1] < 1e-5

    def test_descent_direction(self, rng):
        joints, rows = random_instance(rng)
        g = bm.guidance_grad(joints, rows)
        before = bm.guidance_loss(joints, rows)
        after = bm.guidance_loss(joints - 1e-3 * g, rows)
        assert after < before


class TestContainmentRate:
    def test_fitted_boxes_fully_contained(self, walk_motion):
        seq = bm.skeleton_to_boxes(walk_motion, bm.part_grouping(bm.HUMANOID22, 4))
        assert bm.containment_rate(walk_motion.joints, seq) == 1.0

    def test_far_translation_zero(self, walk_motion):
        seq = bm.skeleton_to_boxes(walk_motion, bm.part_grouping(bm.HUMANOID22, 4))
        assert bm.containment_rate(walk_motion.joints + 10.0, seq) == 0.0

    def test_brute_force_oracle_on_jittered_boxes(self, walk_motion):
        seq = bm.skeleton_to_boxes(walk_motion, bm.part_grouping(bm.HUMANOID22, 4))
        jit, _ = bm.augment_sequence((seq, "walk"), bm.AugmentConfig(p_drop_label=0.0, p_drop_box=0.0, p_jitter=1.0, seed=3))
        cfg = bm.GuidanceConfig()
        got = bm.containment_rate(walk_motion.joints, jit, cfg)

        hits = 0
        total = 0
        for f, row in enumerate(jit.frames):
            for box in row:
                if box is None:
                    continue
                total += 1
                rot = box.rotation_matrix
                for p in walk_motion.joints[f]:
                    local = rot.T @ (p - box.center)
                    if (np.abs(local) <= box.half_extents + cfg.containment_margin).all():
                        hits += 1
                        break
        assert got == hits / total
        assert 0.0 < got < 1.0 or got in (0.0, 1.0)

    def test_frame_mismatch(self, walk_motion):
        seq = bm.skeleton_to_boxes(walk_motion, bm.part_grouping(bm.HUMANOID22, 1))
        with pytest.raises(FrameCountMismatch):
            bm.containment_rate(walk_motion.joints[:-1], seq)


class TestMeanCenterDistance:
    def test_nearest_joint_definition(self, rng):
        joints = rng.normal(size=(2, 5, 3))
        rows = [tuple(make_box(rng.normal(size=3)) for _ in range(2)) for _ in range(2)]
        want = np.mean(
            [
                np.linalg.norm(joints[f] - box.center, axis=1).min()
                for f, row in enumerate(rows)
                for box in row
            ]
        )
        assert bm.mean_center_distance(joints, rows) == pytest.approx(want, rel=1e-12)


class TestGuidanceConfig:
    def test_defaults(self):
        cfg = bm.GuidanceConfig()
        assert cfg.tau == 0.1
        assert cfg.containment_margin == 0.05
        assert cfg.step_scale == 0.3
        assert cfg.inner_steps == 5
        assert cfg.active_fraction == 1.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"tau": 0.0},
            {"tau": -1.0},
            {"inner_steps": -1},
            {"step_scale": -0.1},
            {"active_fraction": 0.0},
            {"active_fraction": 1.5},
            {"variance_floor": -1.0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvariantError):
            bm.GuidanceConfig(**kwargs)
