"""Geometry unit tests.

Expected values are hand-computed (matrix multiplication by hand, angle
addition, corner enumeration) and frozen here, independent of the code
under test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqlabel.errors import BehindCamera, DegenerateProjection, ZeroArea
from seqlabel.geometry import (
    Box2D,
    Dimensions3D,
    Pose,
    ProjectionMatrix,
    back_project,
    box3d_corners,
    compose,
    inverse,
    iou_2d,
    nearest_rotation,
    project_box,
    project_point,
    wrap_angle,
    yaw_from_rotation,
    yaw_to_rotation,
)

P_SIMPLE = ProjectionMatrix(np.array([[700.0, 0, 600, 0], [0, 700, 180, 0], [0, 0, 1, 0]]))


def yaw_pose(yaw, t=(0.0, 0.0, 0.0)):
    return Pose(yaw_to_rotation(yaw), np.array(t, dtype=float))


def random_pose(rng):
    # Random rotation via QR of a Gaussian matrix, sign-fixed to det +1.
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Pose(nearest_rotation(q), rng.uniform(-20, 20, size=3))


class TestProjectPoint:
    def test_optical_axis_hits_principal_point(self):
        assert project_point((0, 0, 10), P_SIMPLE) == (600.0, 180.0, 10.0)

    def test_off_axis_point(self):
        # Hand multiplication: u = (700*1 + 600*10)/10 = 670.
        u, v, z = project_point((1, 0, 10), P_SIMPLE)
        assert (u, v, z) == (670.0, 180.0, 10.0)

    def test_negative_depth_preserved(self):
        u, v, z = project_point((0, 0, -5), P_SIMPLE)
        assert (u, v, z) == (600.0, 180.0, -5.0)

    def test_degenerate_projection(self):
        with pytest.raises(DegenerateProjection):
            project_point((1, 1, 0), P_SIMPLE)

    def test_back_project_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p = rng.uniform([-30, -10, 1], [30, 10, 80])
            u, v, z = project_point(p, P_SIMPLE)
            assert np.allclose(back_project(u, v, z, P_SIMPLE), p, atol=1e-9)

    def test_back_project_nonzero_last_column(self):
        # KITTI-style P with a translation column still round-trips.
        P = ProjectionMatrix(
            np.array([[700.0, 0, 600, 44.8], [0, 700, 180, 0.2], [0, 0, 1, 0.0027]])
        )
        p = np.array([3.0, 1.5, 25.0])
        u, v, z = project_point(p, P)
        assert np.allclose(back_project(u, v, z, P), p, atol=1e-9)


class TestPoseAlgebra:
    def test_identity_compose(self):
        x = yaw_pose(0.4, (1, 2, 3))
        out = compose(Pose.identity(), x)
        assert np.allclose(out.rotation, x.rotation)
        assert np.allclose(out.translation, x.translation)

    def test_translation_composition(self):
        a = Pose(np.eye(3), [0, 0, 5])
        b = Pose(np.eye(3), [0, 0, 10])
        assert np.allclose(compose(a, b).translation, [0, 0, 15])

    def test_yaw_angle_addition(self):
        a = yaw_pose(math.radians(30))
        b = yaw_pose(math.radians(60))
        assert np.allclose(compose(a, b).rotation, yaw_to_rotation(math.radians(90)), atol=1e-12)

    def test_inverse_identity(self):
        inv = inverse(Pose.identity())
        assert np.allclose(inv.rotation, np.eye(3))
        assert np.allclose(inv.translation, 0.0)

    def test_inverse_pure_translation(self):
        inv = inverse(Pose(np.eye(3), [1, 2, 3]))
        assert np.allclose(inv.translation, [-1, -2, -3])

    def test_compose_inverse_round_trip(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            p = random_pose(rng)
            ident = compose(p, inverse(p))
            assert np.abs(ident.rotation - np.eye(3)).max() < 1e-9
            assert np.abs(ident.translation).max() < 1e-9

    def test_invalid_rotation_rejected(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 1.1, np.zeros(3))
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # reflection


class TestYaw:
    def test_identity_zero(self):
        assert yaw_from_rotation(np.eye(3)) == 0.0

    def test_30_degrees(self):
        # R[2,0] = -sin(30), so atan2(0.5, 0.8660...) = 30 deg.
        assert yaw_from_rotation(yaw_to_rotation(math.radians(30))) == pytest.approx(
            math.radians(30), abs=1e-12
        )

    def test_minus_45_degrees(self):
        assert yaw_from_rotation(yaw_to_rotation(math.radians(-45))) == pytest.approx(
            math.radians(-45), abs=1e-12
        )

    def test_yaw_to_rotation_pi(self):
        r = yaw_to_rotation(math.pi)
        assert r[0, 0] == pytest.approx(-1)
        assert r[2, 2] == pytest.approx(-1)
        assert r[1, 1] == 1.0
        assert abs(r[0, 2]) < 1e-15 and abs(r[2, 0]) < 1e-15

    def test_yaw_to_rotation_half_pi(self):
        r = yaw_to_rotation(math.pi / 2)
        assert r[0, 2] == pytest.approx(1)
        assert r[2, 0] == pytest.approx(-1)
        assert abs(r[0, 0]) < 1e-15 and abs(r[2, 2]) < 1e-15

    @given(st.floats(min_value=-math.pi / 2 + 1e-6, max_value=math.pi / 2 - 1e-6))
    def test_round_trip_within_half_pi(self, theta):
        assert yaw_from_rotation(yaw_to_rotation(theta)) == pytest.approx(theta, abs=1e-12)

    @given(st.floats(min_value=-math.pi + 1e-6, max_value=math.pi))
    def test_full_range_recovery_for_pure_yaw(self, theta):
        # Disambiguation path: a verified y rotation recovers the full range.
        assert yaw_from_rotation(yaw_to_rotation(theta)) == pytest.approx(theta, abs=1e-9)

    def test_folded_range_for_tilted_rotation(self):
        # With pitch mixed in, the base formula stays in [-pi/2, pi/2].
        tilt = nearest_rotation(
            yaw_to_rotation(math.radians(140))
            @ np.array([[1, 0, 0], [0, 0.9998, -0.02], [0, 0.02, 0.9998]])
        )
        got = yaw_from_rotation(tilt)
        assert -math.pi / 2 <= got <= math.pi / 2

    def test_wrap_angle_range(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
        assert wrap_angle(0.3 + 4 * math.pi) == pytest.approx(0.3, abs=1e-12)


class TestBoxCorners:
    def test_identity_bottom_centered(self):
        corners = box3d_corners(Pose.identity(), Dimensions3D(2, 2, 2))
        expected = {
            (1, 0, 1), (1, 0, -1), (-1, 0, -1), (-1, 0, 1),
            (1, -2, 1), (1, -2, -1), (-1, -2, -1), (-1, -2, 1),
        }
        got = {tuple(np.round(c, 9)) for c in corners}
        assert got == expected

    def test_translation_equivariance(self):
        base = box3d_corners(Pose.identity(), Dimensions3D(1.5, 1.6, 4.0))
        moved = box3d_corners(Pose(np.eye(3), [0, 0, 10]), Dimensions3D(1.5, 1.6, 4.0))
        assert np.allclose(moved, base + np.array([0, 0, 10]))

    def test_yaw_90_swaps_extents(self):
        dims = Dimensions3D(1.0, 2.0, 6.0)  # width 2 along z, length 6 along x
        corners = box3d_corners(yaw_pose(math.pi / 2), dims)
        # After a 90 degree yaw the x extent comes from width, z from length.
        assert corners[:, 0].max() - corners[:, 0].min() == pytest.approx(2.0)
        assert corners[:, 2].max() - corners[:, 2].min() == pytest.approx(6.0)

    def test_group_equivariance(self):
        rng = np.random.default_rng(3)
        dims = Dimensions3D(1.5, 1.7, 4.2)
        for _ in range(20):
            g = random_pose(rng)
            pose = random_pose(rng)
            lhs = box3d_corners(compose(g, pose), dims)
            rhs = g.apply(box3d_corners(pose, dims))
            assert np.allclose(lhs, rhs, atol=1e-9)


class TestProjectBox:
    def test_centered_cuboid_symmetric_box(self):
        # Cuboid around the optical axis: box symmetric about the principal point.
        pose = Pose(np.eye(3), [0, 1, 20])  # bottom center 1 below axis, height 2
        box = project_box(box3d_corners(pose, Dimensions3D(2, 2, 2)), P_SIMPLE)
        assert box.left + box.right == pytest.approx(2 * 600)
        assert box.top + box.bottom == pytest.approx(2 * 180)

    def test_all_behind_camera(self):
        pose = Pose(np.eye(3), [0, 0, -50])
        with pytest.raises(BehindCamera):
            project_box(box3d_corners(pose, Dimensions3D(2, 2, 2)), P_SIMPLE)

    def test_degenerate_cuboid_matches_point(self):
        eps = 1e-9
        pose = Pose(np.eye(3), [2, 1, 30])
        box = project_box(box3d_corners(pose, Dimensions3D(eps, eps, eps)), P_SIMPLE)
        u, v, _ = project_point((2, 1, 30), P_SIMPLE)
        assert box.area() < 1e-6
        assert box.left == pytest.approx(u, abs=1e-6)
        assert box.top == pytest.approx(v, abs=1e-6)


class TestIoU:
    def test_identical(self):
        b = Box2D(0, 0, 10, 10)
        assert iou_2d(b, b) == 1.0

    def test_disjoint(self):
        assert iou_2d(Box2D(0, 0, 10, 10), Box2D(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        # Intersection 50, union 150.
        got = iou_2d(Box2D(0, 0, 10, 10), Box2D(5, 0, 15, 10))
        assert got == pytest.approx(50 / 150)

    def test_zero_area_error(self):
        z = Box2D(5, 5, 5, 5)
        with pytest.raises(ZeroArea):
            iou_2d(z, z)

    def test_one_degenerate_box_is_zero(self):
        assert iou_2d(Box2D(5, 5, 5, 5), Box2D(0, 0, 10, 10)) == 0.0

    @given(
        st.tuples(*[st.floats(-100, 100) for _ in range(4)]),
        st.tuples(*[st.floats(-100, 100) for _ in range(4)]),
    )
    @settings(max_examples=200)
    def test_symmetric_and_bounded(self, raw_a, raw_b):
        a = Box2D(min(raw_a[0], raw_a[2]), min(raw_a[1], raw_a[3]),
                  max(raw_a[0], raw_a[2]), max(raw_a[1], raw_a[3]))
        b = Box2D(min(raw_b[0], raw_b[2]), min(raw_b[1], raw_b[3]),
                  max(raw_b[0], raw_b[2]), max(raw_b[1], raw_b[3]))
        if a.area() == 0.0 and b.area() == 0.0:
            return
        ab = iou_2d(a, b)
        assert ab == iou_2d(b, a)
        assert 0.0 <= ab <= 1.0
