import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import boxmocap as bm
from boxmocap.errors import InvariantError, UnknownLabel
from boxmocap.quat import from_axis_angle, normalize, rotate

from conftest import random_box


def _unit_quats():
    return (
        st.lists(st.floats(-1, 1), min_size=4, max_size=4)
        .map(np.array)
        .filter(lambda q: np.linalg.norm(q) > 1e-3)
        .map(normalize)
    )


class TestRigidTransform:
    def test_identity_is_noop(self, rng):
        pts = rng.normal(size=(5, 3))
        assert np.array_equal(bm.RigidTransform.identity().apply(pts), pts)

    def test_apply_rotates_then_translates(self):
        rt = bm.RigidTransform(
            from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2), np.array([1.0, 0.0, 0.0])
        )
        out = rt.apply(np.array([[1.0, 0.0, 0.0]]))
        assert np.allclose(out, [[1.0, 1.0, 0.0]], atol=1e-12)

    def test_compose_order(self, rng):
        a = bm.RigidTransform(normalize(rng.normal(size=4)), rng.normal(size=3))
        b = bm.RigidTransform(normalize(rng.normal(size=4)), rng.normal(size=3))
        pts = rng.normal(size=(4, 3))
        assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(q=_unit_quats(), t=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    def test_inverse_roundtrip(self, q, t):
        rt = bm.RigidTransform(q, np.array(t))
        back = rt.inverse().compose(rt)
        pts = np.eye(3)
        assert np.allclose(back.apply(pts), pts, atol=1e-9)

    def test_rejects_non_unit_quaternion(self):
        with pytest.raises(InvariantError):
            bm.RigidTransform(np.array([1.0, 1.0, 0.0, 0.0]), np.zeros(3))

    def test_rejects_non_finite(self):
        with pytest.raises(InvariantError):
            bm.RigidTransform(np.array([1.0, 0.0, 0.0, np.nan]), np.zeros(3))

    def test_arrays_are_read_only(self):
        rt = bm.RigidTransform.identity()
        with pytest.raises(ValueError):
            rt.translation[0] = 1.0


class TestBoxPose:
    def test_corners_axis_aligned(self):
        box = bm.BoxPose(np.zeros(3), np.array([1.0, 0, 0, 0]), np.array([0.5, 0.5, 0.5]))
        expected = {(sx, sy, sz) for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)}
        got = {tuple(np.round(c, 12)) for c in box.corners()}
        assert got == expected

    def test_corner_order_starts_all_minus(self):
        box = bm.BoxPose(np.zeros(3), np.array([1.0, 0, 0, 0]), np.array([3.0, 2.0, 1.0]))
        assert np.array_equal(box.corners()[0], [-3.0, -2.0, -1.0])
        assert np.array_equal(box.corners()[-1], [3.0, 2.0, 1.0])

    def test_transformed_moves_corners(self, rng):
        box = random_box(rng)
        rt = bm.RigidTransform(normalize(rng.normal(size=4)), rng.normal(size=3))
        assert np.allclose(box.transformed(rt).corners(), rt.apply(box.corners()), atol=1e-12)

    def test_contains_with_margin(self):
        box = bm.BoxPose(np.zeros(3), np.array([1.0, 0, 0, 0]), np.array([1.0, 1.0, 1.0]))
        pts = np.array([[0.0, 0.0, 0.0], [1.04, 0.0, 0.0], [1.06, 0.0, 0.0]])
        assert box.contains(pts).tolist() == [True, False, False]
        assert box.contains(pts, margin=0.05).tolist() == [True, True, False]

    def test_rejects_unsorted_extents(self):
        with pytest.raises(InvariantError):
            bm.BoxPose(np.zeros(3), np.array([1.0, 0, 0, 0]), np.array([0.1, 0.5, 0.2]))

    def test_rejects_nonpositive_extent(self):
        with pytest.raises(InvariantError):
            bm.BoxPose(np.zeros(3), np.array([1.0, 0, 0, 0]), np.array([0.5, 0.2, 0.0]))


class TestBoxMotionSequence:
    def test_frame_zero_must_be_fully_present(self, rng):
        with pytest.raises(InvariantError):
            bm.BoxMotionSequence(20.0, [[random_box(rng), None]])

    def test_box_count_bounds(self, rng):
        with pytest.raises(InvariantError):
            bm.BoxMotionSequence(20.0, [[random_box(rng) for _ in range(7)]])
        with pytest.raises(InvariantError):
            bm.BoxMotionSequence(20.0, [[]])

    def test_slot_count_constant_across_frames(self, rng):
        a, b = random_box(rng), random_box(rng)
        with pytest.raises(InvariantError):
            bm.BoxMotionSequence(20.0, [[a, b], [a]])

    def test_present_mask(self, rng):
        a, b = random_box(rng), random_box(rng)
        seq = bm.BoxMotionSequence(20.0, [[a, b], [None, b]])
        assert seq.present.tolist() == [[True, True], [False, True]]

    def test_equality(self, rng):
        a, b = random_box(rng), random_box(rng)
        seq1 = bm.BoxMotionSequence(20.0, [[a, b], [a, None]])
        seq2 = bm.BoxMotionSequence(20.0, [[a, b], [a, None]])
        seq3 = bm.BoxMotionSequence(20.0, [[a, b], [None, b]])
        assert seq1 == seq2
        assert seq1 != seq3


class TestSkeletonDef:
    def test_humanoid22_shape(self):
        sk = bm.HUMANOID22
        assert sk.num_joints == 22
        assert sk.parents[0] == -1
        assert sorted(sk.groupings) == [1, 2, 4, 6]

    def test_groupings_partition_all_joints(self):
        for level, parts in bm.HUMANOID22.groupings.items():
            seen = sorted(i for part in parts for i in part)
            assert seen == list(range(22)), f"level {level}"

    def test_rejects_two_roots(self):
        with pytest.raises(InvariantError):
            bm.SkeletonDef(("a", "b"), (-1, -1), {})

    def test_rejects_cycle(self):
        with pytest.raises(InvariantError):
            bm.SkeletonDef(("a", "b", "c"), (-1, 2, 1), {})

    def test_rejects_bad_partition(self):
        with pytest.raises(InvariantError):
            bm.SkeletonDef(("a", "b"), (-1, 0), {1: ((0,),)})


class TestSkeletonMotion:
    def test_rejects_below_ground(self):
        joints = np.zeros((2, 3, 3))
        joints[1, 0, 1] = -0.06
        with pytest.raises(InvariantError):
            bm.SkeletonMotion(fps=20.0, joints=joints)

    def test_allows_slight_penetration(self):
        joints = np.zeros((1, 2, 3))
        joints[0, 0, 1] = -0.05
        m = bm.SkeletonMotion(fps=20.0, joints=joints)
        assert m.num_frames == 1 and m.num_joints == 2

    def test_rejects_nan(self):
        joints = np.zeros((1, 2, 3))
        joints[0, 1, 2] = np.nan
        with pytest.raises(InvariantError):
            bm.SkeletonMotion(fps=20.0, joints=joints)


class TestTrack:
    def test_nan_iff_invisible(self):
        pos = np.array([[0.0, 1.0, 2.0], [np.nan, np.nan, np.nan]])
        bm.Track(0, 1, pos, np.array([True, False]))
        with pytest.raises(InvariantError):
            bm.Track(0, 1, pos, np.array([True, True]))
        with pytest.raises(InvariantError):
            bm.Track(0, 1, pos, np.array([False, False]))


class TestCaptureSession:
    def _frame(self, seg_ids):
        return np.array([[0.0, 0.0, 0.0, 1.0, s] for s in seg_ids])

    def test_track_must_cite_frame0_segment(self):
        frames = [self._frame([0, 1])]
        track = bm.Track(0, 2, np.zeros((1, 3)), np.array([True]))
        with pytest.raises(InvariantError):
            bm.CaptureSession(20.0, frames, [track], 0)

    def test_confidence_bounds(self):
        bad = np.array([[0.0, 0.0, 0.0, 1.5, 0]])
        with pytest.raises(InvariantError):
            bm.CaptureSession(20.0, [bad], [], 0)

    def test_frame_points_filters_segment(self):
        frames = [np.array([[0.0, 0, 0, 1.0, 0], [1.0, 0, 0, 0.5, 1], [2.0, 0, 0, 0.9, 1]])]
        sess = bm.CaptureSession(20.0, frames, [], 0)
        pts, conf = sess.frame_points(0, 1)
        assert pts.shape == (2, 3)
        assert conf.tolist() == [0.5, 0.9]
        assert sess.segment_ids() == [0, 1]


class TestLabelVocabulary:
    def test_null_label_is_index_zero(self):
        vocab = bm.LabelVocabulary()
        assert vocab.index(None) == 0
        assert vocab.label_for(0) is None

    def test_default_labels_round_trip(self):
        vocab = bm.LabelVocabulary()
        for i, label in enumerate(vocab.labels, start=1):
            assert vocab.index(label) == i
            assert vocab.label_for(i) == label

    def test_unknown_label(self):
        with pytest.raises(UnknownLabel):
            bm.LabelVocabulary().index("run")

    def test_rejects_duplicates(self):
        with pytest.raises(InvariantError):
            bm.LabelVocabulary(("walk", "walk"))
