import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wex.geometry import (
    CameraPose,
    DepthMap,
    forward_angle_deg,
    intrinsics_from_fov,
    pixel_center_grid,
    plucker_image,
    project_point,
    project_points,
    quat_to_rotmat,
    rot_y,
    rotation_geodesic_deg,
    rotmat_to_quat,
    unproject_depth,
    yaw_pose,
)
from wex.geometry import random_rotation
from helpers import random_pose


def intr_odd(fov=90.0, size=3):
    # odd sizes put one pixel center exactly on the principal point
    return intrinsics_from_fov(fov, size, size)


class TestIntrinsics:
    def test_fov_60_576(self):
        k = intrinsics_from_fov(60.0, 576, 576)
        assert k.fx == pytest.approx(498.8306, abs=1e-3)
        assert k.fy == k.fx
        assert k.cx == 288.0 and k.cy == 288.0

    def test_invalid_fov_rejected(self):
        for bad in (0.0, 180.0, -10.0):
            with pytest.raises(ValueError):
                intrinsics_from_fov(bad, 64, 64)

    def test_matrix_layout(self):
        k = intrinsics_from_fov(90.0, 4, 4)
        m = k.matrix
        assert m[0, 0] == k.fx and m[1, 1] == k.fy
        assert m[0, 2] == k.cx and m[1, 2] == k.cy
        assert m[2, 2] == 1.0


class TestPose:
    def test_yaw_zero_is_identity(self):
        p = yaw_pose(0.0, intr_odd())
        assert np.allclose(p.rotation, np.eye(3))
        assert np.allclose(p.forward, [0, 0, 1])

    def test_yaw_90_faces_plus_x(self):
        p = yaw_pose(90.0, intr_odd())
        assert np.allclose(p.forward, [1, 0, 0], atol=1e-12)

    def test_compose_inverse_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p = random_pose(rng, intr_odd())
            ident = p.compose(p.inverse())
            assert np.allclose(ident.rotation, np.eye(3), atol=1e-9)
            assert np.allclose(ident.center, 0.0, atol=1e-9)

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError):
            CameraPose(rotation=np.eye(3) * 2.0, center=np.zeros(3), intrinsics=intr_odd())

    def test_reflection_rejected(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            CameraPose(rotation=r, center=np.zeros(3), intrinsics=intr_odd())


class TestProjection:
    def test_known_point(self):
        # identity pose: world (2, 0, 2) lands one focal length right of center
        k = intrinsics_from_fov(60.0, 64, 64)
        p = yaw_pose(0.0, k)
        uv, z, ok = project_point(p, np.array([2.0, 0.0, 2.0]))
        assert ok and z == pytest.approx(2.0)
        assert uv[0] == pytest.approx(k.cx + k.fx)
        assert uv[1] == pytest.approx(k.cy)

    def test_behind_camera_flagged(self):
        p = yaw_pose(0.0, intr_odd())
        _, z, ok = project_point(p, np.array([0.0, 0.0, -1.0]))
        assert not ok and z == pytest.approx(-1.0)

    def test_unproject_principal_pixel(self):
        k = intr_odd(90.0, 3)
        p = yaw_pose(0.0, k)
        d = DepthMap(np.ones((3, 3), dtype=np.float32))
        pts, _ = unproject_depth(p, d)
        # row-major order: center pixel is index 4
        assert np.allclose(pts[4], [0.0, 0.0, 1.0], atol=1e-12)

    def test_unproject_known_offaxis(self):
        # pixel at (cx + fx, cy) with depth 2 lifts to (2, 0, 2)
        k = intrinsics_from_fov(90.0, 4, 4)
        p = yaw_pose(0.0, k)
        uv = np.array([k.cx + k.fx, k.cy])
        x = (uv[0] - k.cx) / k.fx * 2.0
        assert x == pytest.approx(2.0)

    def test_grid_round_trip(self):
        rng = np.random.default_rng(3)
        k = intrinsics_from_fov(70.0, 17, 11)
        for _ in range(20):
            pose = random_pose(rng, k)
            depth = DepthMap(rng.uniform(0.5, 5.0, size=(11, 17)).astype(np.float32))
            pts, _ = unproject_depth(pose, depth)
            uv, z, ok = project_points(pose, pts)
            assert ok.all()
            expect = pixel_center_grid(k).reshape(-1, 2)
            assert np.abs(uv - expect).max() < 1e-6
            assert np.abs(z - depth.values.reshape(-1)).max() < 1e-5

    def test_mask_filters_points(self):
        k = intr_odd(90.0, 3)
        p = yaw_pose(0.0, k)
        d = DepthMap(np.ones((3, 3), dtype=np.float32))
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        img = np.full((3, 3, 3), 200, dtype=np.uint8)
        pts, cols = unproject_depth(p, d, image=img, mask=mask)
        assert pts.shape == (1, 3) and cols.shape == (1, 3)

    def test_normalized_depth_rejected(self):
        p = yaw_pose(0.0, intr_odd())
        d = DepthMap(np.full((3, 3), 0.5, dtype=np.float32), normalized=True)
        with pytest.raises(ValueError):
            unproject_depth(p, d)


class TestRotationDistances:
    def test_yaw_20_geodesic(self):
        assert rotation_geodesic_deg(np.eye(3), rot_y(20.0)) == pytest.approx(20.0, abs=1e-9)

    def test_wraparound(self):
        # yaw 10 vs yaw 350 are 20 degrees apart
        assert rotation_geodesic_deg(rot_y(10.0), rot_y(350.0)) == pytest.approx(20.0, abs=1e-9)

    def test_forward_angle_example(self):
        assert forward_angle_deg(rot_y(45.0), rot_y(270.0)) == pytest.approx(135.0, abs=1e-9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_geodesic_properties(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_rotation(rng), random_rotation(rng)
        d = rotation_geodesic_deg(a, b)
        assert 0.0 <= d <= 180.0
        assert rotation_geodesic_deg(b, a) == pytest.approx(d, abs=1e-9)
        assert rotation_geodesic_deg(a, a) == pytest.approx(0.0, abs=1e-5)


class TestPlucker:
    def test_principal_ray_identity(self):
        p = yaw_pose(0.0, intr_odd(90.0, 3))
        emb = plucker_image(p)
        assert np.allclose(emb[1, 1], [0, 0, 0, 0, 0, 1], atol=1e-12)

    def test_offset_origin_moment(self):
        p = CameraPose(rotation=np.eye(3), center=np.array([1.0, 0.0, 0.0]),
                       intrinsics=intr_odd(90.0, 3))
        emb = plucker_image(p)
        # principal ray: dir +z, moment (1,0,0) x (0,0,1) = (0,-1,0)
        assert np.allclose(emb[1, 1], [0, -1, 0, 0, 0, 1], atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng, intrinsics_from_fov(70.0, 9, 7))
        emb = plucker_image(pose)
        m, d = emb[..., :3], emb[..., 3:]
        assert np.abs(np.linalg.norm(d, axis=-1) - 1.0).max() < 1e-6
        assert np.abs((m * d).sum(-1)).max() < 1e-6

    def test_shape(self):
        p = yaw_pose(30.0, intrinsics_from_fov(60.0, 8, 6))
        assert plucker_image(p).shape == (6, 8, 6)


class TestDepthMap:
    def test_nonfinite_rejected(self):
        bad = np.ones((2, 2), dtype=np.float32)
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            DepthMap(bad)

    def test_normalized_range_enforced(self):
        with pytest.raises(ValueError):
            DepthMap(np.full((2, 2), 1.5, dtype=np.float32), normalized=True)
        DepthMap(np.full((2, 2), 1.5, dtype=np.float32))  # metric: fine


class TestQuaternions:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        if q[0] < 0:
            q = -q
        r = quat_to_rotmat(q)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.allclose(rotmat_to_quat(r), q, atol=1e-9)

    def test_identity(self):
        assert np.allclose(quat_to_rotmat(np.array([1.0, 0, 0, 0])), np.eye(3))
