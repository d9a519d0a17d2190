"""Projection, back-projection, and pose-error metric tests.

Expected values are hand-computed or recomputed by independent oracles
(Rodrigues construction, componentwise norms).
"""

import math

import numpy as np
import pytest

from semloc.geometry import (
    CameraIntrinsics,
    PoseError,
    RigidPose,
    back_project,
    back_project_pixels,
    matrix_to_quaternion,
    position_error_m,
    project,
    project_points,
    quaternion_to_matrix,
    rotation_error_deg,
)

from conftest import default_intrinsics, random_pose, rodrigues


def _simple_K():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


class TestProject:
    def test_on_optical_axis(self):
        p = project(np.array([0.0, 0.0, 5.0]), RigidPose.identity(), _simple_K())
        np.testing.assert_allclose(p, [50.0, 50.0], atol=0)

    def test_off_axis(self):
        # 100 * 1/5 + 50 = 70
        p = project(np.array([1.0, 0.0, 5.0]), RigidPose.identity(), _simple_K())
        np.testing.assert_allclose(p, [70.0, 50.0], atol=0)

    def test_behind_camera_is_none(self):
        assert project(np.array([0.0, 0.0, -1.0]), RigidPose.identity(), _simple_K()) is None

    def test_on_camera_plane_is_none(self):
        assert project(np.array([1.0, 1.0, 0.0]), RigidPose.identity(), _simple_K()) is None

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        K = default_intrinsics()
        pose = random_pose(rng)
        pts = rng.normal(scale=4.0, size=(100, 3))
        pixels, front = project_points(pts, pose, K)
        for i in range(len(pts)):
            single = project(pts[i], pose, K)
            if single is None:
                assert not front[i]
            else:
                assert front[i]
                # matmul and scalar dot may differ in the last ulp
                np.testing.assert_allclose(pixels[i], single, rtol=1e-12, atol=1e-9)


class TestBackProject:
    def test_principal_point(self):
        X = back_project(np.array([50.0, 50.0]), 5.0, RigidPose.identity(), _simple_K())
        np.testing.assert_allclose(X, [0.0, 0.0, 5.0], atol=0)

    def test_off_axis(self):
        X = back_project(np.array([70.0, 50.0]), 5.0, RigidPose.identity(), _simple_K())
        np.testing.assert_allclose(X, [1.0, 0.0, 5.0], atol=1e-15)

    @pytest.mark.parametrize("depth", [0.0, -1.0, math.nan, math.inf])
    def test_rejects_bad_depth(self, depth):
        with pytest.raises(ValueError):
            back_project(np.array([50.0, 50.0]), depth, RigidPose.identity(), _simple_K())

    def test_roundtrip_property(self):
        # project(back_project(q, d)) == q within 1e-9 px over random draws
        rng = np.random.default_rng(11)
        K = default_intrinsics()
        worst = 0.0
        for _ in range(200):
            pose = random_pose(rng)
            pix = np.array([rng.uniform(0, K.width), rng.uniform(0, K.height)])
            d = rng.uniform(0.1, 50.0)
            back = back_project(pix, d, pose, K)
            forward = project(back, pose, K)
            worst = max(worst, float(np.linalg.norm(forward - pix)))
        assert worst < 1e-9

    def test_roundtrip_bulk(self):
        rng = np.random.default_rng(12)
        K = default_intrinsics()
        for _ in range(20):
            pose = random_pose(rng)
            pix = np.stack([rng.uniform(0, K.width, 500), rng.uniform(0, K.height, 500)], axis=1)
            d = rng.uniform(0.1, 50.0, 500)
            world = back_project_pixels(pix, d, pose, K)
            out, front = project_points(world, pose, K)
            assert front.all()
            assert np.max(np.linalg.norm(out - pix, axis=1)) < 1e-9


class TestRotationError:
    def test_identity(self):
        rng = np.random.default_rng(3)
        R = random_pose(rng).rotation
        assert rotation_error_deg(R, R) == pytest.approx(0.0, abs=1e-9)

    def test_half_turn(self):
        # Composing with a 180 degree rotation gives trace(rel) = -1.
        rng = np.random.default_rng(4)
        R = random_pose(rng).rotation
        flip = rodrigues(rng.normal(size=3), math.pi)
        assert rotation_error_deg(R, R @ flip) == pytest.approx(180.0, abs=1e-6)

    def test_constructed_angle(self):
        rng = np.random.default_rng(6)
        R = random_pose(rng).rotation
        rel = rodrigues(rng.normal(size=3), math.radians(37.0))
        assert rotation_error_deg(R, R @ rel) == pytest.approx(37.0, abs=1e-6)

    def test_symmetry_bitwise(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            A = random_pose(rng).rotation
            B = random_pose(rng).rotation
            assert rotation_error_deg(A, B) == rotation_error_deg(B, A)

    def test_triangle_sanity(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            A = random_pose(rng).rotation
            B = random_pose(rng).rotation
            C = random_pose(rng).rotation
            ab = rotation_error_deg(A, B)
            bc = rotation_error_deg(B, C)
            ac = rotation_error_deg(A, C)
            assert ac <= ab + bc + 1e-6

    def test_never_nan_at_boundaries(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            R = random_pose(rng).rotation
            for angle in (0.0, math.pi):
                rel = rodrigues(rng.normal(size=3), angle)
                err = rotation_error_deg(R, R @ rel)
                assert math.isfinite(err)
        # and a trace pushed numerically past the valid range
        R = np.eye(3) * (1.0 + 1e-13)
        assert math.isfinite(rotation_error_deg(np.eye(3), R))


class TestPositionError:
    def test_zero(self):
        assert position_error_m(np.ones(3), np.ones(3)) == 0.0

    def test_345(self):
        assert position_error_m(np.zeros(3), np.array([3.0, 4.0, 0.0])) == pytest.approx(5.0)

    def test_random_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            a = rng.normal(size=3)
            b = rng.normal(size=3)
            oracle = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
            assert position_error_m(a, b) == pytest.approx(oracle, rel=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            position_error_m(np.array([np.nan, 0, 0]), np.zeros(3))


class TestPoseTypes:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidPose(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_pose_error_range_validation(self):
        with pytest.raises(ValueError):
            PoseError(position_error=-1.0, orientation_error=0.0)
        with pytest.raises(ValueError):
            PoseError(position_error=0.0, orientation_error=181.0)

    def test_compose_identity_bitwise(self):
        rng = np.random.default_rng(13)
        K = default_intrinsics()
        identity = RigidPose.identity()
        for _ in range(20):
            pose = random_pose(rng)
            X = rng.normal(scale=3.0, size=3) + pose.rotation.T @ np.array([0, 0, 5.0]) + pose.center
            base = project(X, pose, K)
            for composed in (pose.compose(identity), identity.compose(pose)):
                out = project(X, composed, K)
                if base is None:
                    assert out is None
                else:
                    assert np.array_equal(out, base)

    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=10.0, cy=0.0, width=10, height=10)


class TestQuaternions:
    def test_roundtrip(self):
        rng = np.random.default_rng(14)
        for _ in range(300):
            R = random_pose(rng).rotation
            q = matrix_to_quaternion(R)
            assert q[0] >= 0.0
            assert abs(np.linalg.norm(q) - 1.0) < 1e-12
            np.testing.assert_allclose(quaternion_to_matrix(q), R, atol=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            quaternion_to_matrix(np.array([2.0, 0.0, 0.0, 0.0]))
