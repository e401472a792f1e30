import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rog import motion
from conftest import random_rotation


class TestRot6d:
    def test_identity(self):
        m = motion.rot6d_to_matrix([1, 0, 0, 0, 1, 0])
        assert np.allclose(m, np.eye(3))

    def test_scale_and_shear_removed(self):
        m = motion.rot6d_to_matrix([2, 0, 0, 3, 5, 0])
        assert np.allclose(m[:, 0], [1, 0, 0])
        assert np.allclose(m[:, 1], [0, 1, 0])
        assert np.allclose(m[:, 2], [0, 0, 1])

    def test_round_trip_100_random_rotations(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            m = random_rotation(rng)
            back = motion.rot6d_to_matrix(motion.matrix_to_rot6d(m))
            assert np.abs(back - m).max() < 1e-6

    def test_degenerate_parallel(self):
        with pytest.raises(ValueError, match="parallel"):
            motion.rot6d_to_matrix([1, 0, 0, 2, 0, 0])

    def test_degenerate_zero(self):
        with pytest.raises(ValueError, match="zero"):
            motion.rot6d_to_matrix([0, 0, 0, 0, 1, 0])

    def test_matrix_to_rot6d_identity(self):
        assert np.allclose(motion.matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_matrix_to_rot6d_z90(self):
        rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.allclose(motion.matrix_to_rot6d(rz), [0, 1, 0, -1, 0, 0])

    def test_matrix_to_rot6d_rejects_non_rotation(self):
        with pytest.raises(ValueError, match="orthonormal"):
            motion.matrix_to_rot6d(np.diag([2.0, 1.0, 1.0]))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
    def test_output_always_orthonormal(self, values):
        r = np.array(values)
        a1, a2 = r[:3], r[3:]
        n1 = np.linalg.norm(a1)
        if n1 <= 1e-6:
            return
        residual = a2 - (a1 @ a2) / n1**2 * a1
        if np.linalg.norm(residual) <= 1e-6 * max(np.linalg.norm(a2), 1.0):
            return
        m = motion.rot6d_to_matrix(r)
        assert np.abs(m.T @ m - np.eye(3)).max() < 1e-6
        assert abs(np.linalg.det(m) - 1.0) < 1e-6

    def test_vjp_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            r = rng.normal(size=(3, 6))
            g = rng.normal(size=(3, 3, 3))
            analytic = motion.rot6d_to_matrix_vjp(r, g)
            h = 1e-6
            for n in range(3):
                for k in range(6):
                    rp, rm = r.copy(), r.copy()
                    rp[n, k] += h
                    rm[n, k] -= h
                    num = np.sum((motion.rot6d_to_matrix(rp) - motion.rot6d_to_matrix(rm)) * g) / (2 * h)
                    assert abs(analytic[n, k] - num) < 1e-5 * max(1.0, abs(num))


class TestObjectKeypointsWorld:
    def test_identity(self):
        pts = np.random.default_rng(0).normal(size=(24, 3))
        out = motion.object_keypoints_world(pts, np.zeros(3), np.eye(3))
        assert np.allclose(out, pts)

    def test_translation(self):
        pts = np.random.default_rng(0).normal(size=(24, 3))
        out = motion.object_keypoints_world(pts, [1, 2, 3], np.eye(3))
        assert np.allclose(out, pts + np.array([1, 2, 3]))

    def test_z90_per_point_oracle(self, unit_cube):
        rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        t = np.array([0.5, -0.5, 2.0])
        corners = unit_cube.vertices
        padded = np.vstack([corners, np.zeros((16, 3))])
        out = motion.object_keypoints_world(padded, t, rz)
        for j in range(24):
            assert np.allclose(out[j], rz @ padded[j] + t)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(3)
        canon = rng.normal(size=(24, 3))
        trans = rng.normal(size=(5, 3))
        rots = np.stack([random_rotation(rng) for _ in range(5)])
        out = motion.object_keypoints_world(canon, trans, rots)
        for n in range(5):
            assert np.allclose(out[n], canon @ rots[n].T + trans[n])

    def test_pairwise_distances_preserved(self):
        rng = np.random.default_rng(9)
        canon = rng.normal(size=(24, 3))
        d0 = np.linalg.norm(canon[:, None] - canon[None, :], axis=-1)
        for _ in range(10):
            out = motion.object_keypoints_world(canon, rng.normal(size=3), random_rotation(rng))
            d1 = np.linalg.norm(out[:, None] - out[None, :], axis=-1)
            assert np.abs(d0 - d1).max() < 1e-6


def _random_pose_pair(rng):
    human = motion.HumanPose(rng.normal(size=(24, 3)), rng.normal(size=(22, 6)))
    obj = motion.ObjectPose(rng.normal(size=3), random_rotation(rng), rng.normal(size=(24, 3)))
    return human, obj


class TestPackUnpack:
    def test_zero(self):
        h = motion.HumanPose(np.zeros((24, 3)), np.zeros((22, 6)))
        o = motion.ObjectPose(np.zeros(3), np.zeros((3, 3)), np.zeros((24, 3)))
        assert np.array_equal(motion.pack_frame(h, o), np.zeros(288))

    def test_round_trip_bit_identical(self):
        rng = np.random.default_rng(1)
        h, o = _random_pose_pair(rng)
        vec = motion.pack_frame(h, o)
        h2, o2 = motion.unpack_frame(vec)
        assert np.array_equal(h2.joints, h.joints)
        assert np.array_equal(h2.rotations6d, h.rotations6d)
        assert np.array_equal(o2.translation, o.translation)
        assert np.array_equal(o2.rotation, o.rotation)
        assert np.array_equal(o2.keypoints, o.keypoints)

    def test_layout_translation_slot(self):
        rng = np.random.default_rng(2)
        h, o = _random_pose_pair(rng)
        o.translation = np.array([4.0, 5.0, 6.0])
        vec = motion.pack_frame(h, o)
        assert np.array_equal(vec[204:207], [4.0, 5.0, 6.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bijection_property(self, seed):
        rng = np.random.default_rng(seed)
        h, o = _random_pose_pair(rng)
        vec = motion.pack_frame(h, o)
        h2, o2 = motion.unpack_frame(vec)
        assert np.array_equal(motion.pack_frame(h2, o2), vec)

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="288"):
            motion.unpack_frame(np.zeros(100))

    def test_sequence_views(self):
        rng = np.random.default_rng(3)
        frames = rng.normal(size=(4, 288))
        assert np.allclose(motion.joints_of(frames), frames[:, :72].reshape(4, 24, 3))
        assert np.allclose(motion.object_translation_of(frames), frames[:, 204:207])
        assert np.allclose(motion.object_rotation_of(frames), frames[:, 207:216].reshape(4, 3, 3))
        assert np.allclose(motion.object_keypoints_of(frames), frames[:, 216:].reshape(4, 24, 3))


def _standing_frames(n):
    frames = np.zeros((n, 288), dtype=np.float32)
    frames[:, :72] = np.tile(motion.REST_JOINTS.ravel(), (n, 1))
    return frames


class TestFootSliding:
    def test_static_standing(self):
        seq = motion.MotionSequence(_standing_frames(10), 20.0, 0)
        assert motion.foot_sliding_score(seq) == 0.0

    def test_grounded_drift_1cm_per_frame(self):
        frames = _standing_frames(10)
        joints = frames[:, :72].reshape(10, 24, 3)
        for j in motion.FOOT_JOINTS:
            joints[:, j, 2] = 0.02
            joints[:, j, 0] += 0.01 * np.arange(10)
        frames[:, :72] = joints.reshape(10, 72)
        seq = motion.MotionSequence(frames, 20.0, 0)
        # direct summation oracle: 1 cm per frame on both feet
        assert abs(motion.foot_sliding_score(seq) - 1.0) < 1e-5

    def test_airborne_feet_score_zero(self):
        frames = _standing_frames(10)
        joints = frames[:, :72].reshape(10, 24, 3)
        for j in motion.FOOT_JOINTS:
            joints[:, j, 2] = 0.5
            joints[:, j, 0] += 0.05 * np.arange(10)
        frames[:, :72] = joints.reshape(10, 72)
        seq = motion.MotionSequence(frames, 20.0, 0)
        assert motion.foot_sliding_score(seq) == 0.0


class TestHoim:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        seq = motion.MotionSequence(rng.normal(size=(7, 288)).astype(np.float32), 30.0, 3)
        path = tmp_path / "seq.hoim"
        motion.save_hoim(seq, path)
        loaded = motion.load_hoim(path)
        assert np.array_equal(loaded.frames, seq.frames)
        assert loaded.fps == seq.fps
        assert loaded.action_label == seq.action_label

    def test_save_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(0)
        seq = motion.MotionSequence(rng.normal(size=(5, 288)).astype(np.float32), 20.0, 1)
        motion.save_hoim(seq, tmp_path / "a.hoim")
        motion.save_hoim(seq, tmp_path / "b.hoim")
        assert (tmp_path / "a.hoim").read_bytes() == (tmp_path / "b.hoim").read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hoim"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(ValueError, match="magic"):
            motion.load_hoim(path)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(0)
        seq = motion.MotionSequence(rng.normal(size=(5, 288)).astype(np.float32), 20.0, 1)
        path = tmp_path / "t.hoim"
        motion.save_hoim(seq, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ValueError, match="truncated"):
            motion.load_hoim(path)

    def test_min_frames(self):
        with pytest.raises(ValueError, match="2 frames"):
            motion.MotionSequence(np.zeros((1, 288), dtype=np.float32), 20.0, 0)
