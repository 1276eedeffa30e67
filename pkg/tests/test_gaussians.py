import numpy as np
import pytest

from wex.gaussians import (
    Alignment,
    AlignmentError,
    GaussianScene,
    apply_alignment,
    apply_alignment_points,
    downsample_points,
    estimate_alignment,
    hull_diagonal,
    init_gaussians,
)
from wex.geometry import (
    CameraPose,
    ColoredPointCloud,
    intrinsics_from_fov,
    random_rotation,
)

INTR = intrinsics_from_fov(60.0, 16, 16)


def make_scene(n=3):
    rng = np.random.default_rng(0)
    quats = rng.normal(size=(n, 4)) + np.array([2.0, 0, 0, 0])
    return GaussianScene(
        means=rng.normal(size=(n, 3)),
        rotations=quats,
        log_scales=rng.normal(size=(n, 3)),
        opacity_logits=rng.normal(size=n),
        colors=rng.uniform(0, 1, (n, 3)))


class TestGaussianScene:
    def test_accessors(self):
        s = make_scene(5)
        assert len(s) == 5
        assert np.allclose(s.activated_scales(), np.exp(s.log_scales))
        sig = 1 / (1 + np.exp(-s.opacity_logits))
        assert np.allclose(s.activated_opacities(), sig)
        assert ((s.activated_opacities() > 0) & (s.activated_opacities() < 1)).all()

    def test_select_and_copy_are_independent(self):
        s = make_scene(4)
        c = s.copy()
        c.means[0, 0] = 99.0
        assert s.means[0, 0] != 99.0
        sub = s.select(np.array([True, False, True, False]))
        assert len(sub) == 2
        assert np.array_equal(sub.means, s.means[[0, 2]])

    def test_empty_scene_allowed(self):
        s = GaussianScene(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
                          np.zeros(0), np.zeros((0, 3)))
        assert len(s) == 0

    def test_validation(self):
        s = make_scene(2)
        with pytest.raises(ValueError):
            GaussianScene(s.means[:1], s.rotations, s.log_scales,
                          s.opacity_logits, s.colors)
        with pytest.raises(ValueError):
            GaussianScene(s.means, np.zeros((2, 4)), s.log_scales,
                          s.opacity_logits, s.colors)
        with pytest.raises(ValueError):
            GaussianScene(s.means, s.rotations, s.log_scales, s.opacity_logits,
                          s.colors + 2.0)
        bad = s.means.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            GaussianScene(bad, s.rotations, s.log_scales, s.opacity_logits,
                          s.colors)


def similarity_case(seed, s0=None):
    """Known cameras along a line through the origin, random similarity."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    offsets = np.sort(rng.uniform(0.5, 4.0, 5))
    known_centers = np.vstack([np.zeros(3), direction * offsets[:, None]])
    known_rot = random_rotation(rng)
    known_cam = CameraPose(rotation=known_rot, center=known_centers[0],
                           intrinsics=INTR)
    if s0 is None:
        s0 = float(rng.uniform(0.5, 2.0))
    r0 = random_rotation(rng)
    t0 = rng.uniform(-1.5, 1.5, 3)
    transform = lambda p: s0 * (p @ r0.T + t0)
    pred_centers = transform(known_centers)
    pred_cam = CameraPose(rotation=r0 @ known_rot, center=pred_centers[0],
                          intrinsics=INTR)
    points = rng.uniform(-3, 3, (60, 3))
    cloud_true = ColoredPointCloud(points=points,
                                   colors=rng.integers(0, 256, (60, 3),
                                                       dtype=np.uint8))
    cloud_pred = ColoredPointCloud(points=transform(points),
                                   colors=cloud_true.colors.copy())
    return known_cam, pred_cam, known_centers, pred_centers, cloud_true, cloud_pred, s0


class TestAlignment:
    def test_hull_diagonal(self):
        pts = np.array([[0, 0, 0], [1, 2, 2], [0.5, 1, 1]])
        assert hull_diagonal(pts) == pytest.approx(3.0)

    def test_identity_case(self):
        cam = CameraPose(rotation=np.eye(3), center=np.zeros(3), intrinsics=INTR)
        centers = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        a = estimate_alignment(cam, cam, centers, centers)
        assert a.scale == pytest.approx(1.0)
        assert np.allclose(a.rotation, np.eye(3))
        assert np.allclose(a.translation, 0.0)

    def test_uniform_half_scale_gives_two(self):
        cam = CameraPose(rotation=np.eye(3), center=np.zeros(3), intrinsics=INTR)
        centers = np.array([[0.0, 0, 0], [2, 1, 0], [0, 0, 3]])
        a = estimate_alignment(cam, cam, centers, centers * 0.5)
        assert a.scale == pytest.approx(2.0)

    def test_random_similarity_recovered(self):
        known_cam, pred_cam, kc, pc, *_ , s0 = similarity_case(3, s0=0.7)
        a = estimate_alignment(known_cam, pred_cam, kc, pc)
        assert a.scale == pytest.approx(1.0 / 0.7, abs=1e-9)
        # the rigid part maps predicted camera 1 onto known camera 1
        assert np.allclose(a.rotation @ pred_cam.rotation, known_cam.rotation,
                           atol=1e-12)
        assert np.allclose(a.rotation @ pred_cam.center + a.translation,
                           known_cam.center, atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_round_trip_undoes_similarity(self, seed):
        known_cam, pred_cam, kc, pc, cloud_true, cloud_pred, _ = similarity_case(seed)
        a = estimate_alignment(known_cam, pred_cam, kc, pc)
        aligned = apply_alignment(a, cloud_pred)
        err = np.abs(aligned.points - cloud_true.points).max()
        assert err < 1e-6
        assert np.array_equal(aligned.colors, cloud_true.colors)

    def test_apply_identity_and_scale(self):
        cloud = ColoredPointCloud(points=np.array([[1.0, 2, 3], [0, 0, 1]]),
                                  colors=np.zeros((2, 3), dtype=np.uint8))
        same = apply_alignment(Alignment.identity(), cloud)
        assert np.array_equal(same.points, cloud.points)
        doubled = apply_alignment(Alignment(np.eye(3), np.zeros(3), 2.0), cloud)
        assert np.array_equal(doubled.points, cloud.points * 2.0)

    def test_degenerate_hulls_rejected(self):
        cam = CameraPose(rotation=np.eye(3), center=np.zeros(3), intrinsics=INTR)
        spread = np.array([[0.0, 0, 0], [1, 0, 0]])
        collapsed = np.zeros((2, 3))
        with pytest.raises(AlignmentError):
            estimate_alignment(cam, cam, spread, collapsed)
        with pytest.raises(AlignmentError):
            estimate_alignment(cam, cam, collapsed, spread)

    def test_center_list_preconditions(self):
        cam = CameraPose(rotation=np.eye(3), center=np.zeros(3), intrinsics=INTR)
        with pytest.raises(ValueError):
            estimate_alignment(cam, cam, np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(ValueError):
            estimate_alignment(cam, cam, np.zeros((2, 3)), np.zeros((3, 3)))

    def test_alignment_validation(self):
        with pytest.raises(ValueError):
            Alignment(np.eye(3), np.zeros(3), -1.0)
        with pytest.raises(ValueError):
            Alignment(np.eye(3) * 2.0, np.zeros(3), 1.0)


class TestDownsample:
    def cloud(self, n, seed=0):
        rng = np.random.default_rng(seed)
        return ColoredPointCloud(points=rng.normal(size=(n, 3)),
                                 colors=rng.integers(0, 256, (n, 3),
                                                     dtype=np.uint8))

    def test_small_cloud_unchanged(self):
        c = self.cloud(100)
        out = downsample_points(c, 200_000, seed=1)
        assert out is c

    def test_subsample_is_subset(self):
        c = self.cloud(5000)
        out = downsample_points(c, 1200, seed=1)
        assert len(out.points) == 1200
        # every sampled row appears in the source at the same pairing
        rows = {tuple(p) for p in c.points}
        assert all(tuple(p) in rows for p in out.points)

    def test_deterministic(self):
        c = self.cloud(5000)
        a = downsample_points(c, 1200, seed=7)
        b = downsample_points(c, 1200, seed=7)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.colors, b.colors)
        different = downsample_points(c, 1200, seed=8)
        assert not np.array_equal(a.points, different.points)

    def test_target_validation(self):
        with pytest.raises(ValueError):
            downsample_points(self.cloud(10), 0, seed=0)


class TestInitGaussians:
    def test_tetrahedron_scales_equal(self):
        pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]],
                       dtype=np.float64)
        cloud = ColoredPointCloud(points=pts,
                                  colors=np.full((4, 3), 128, dtype=np.uint8))
        scene = init_gaussians(cloud)
        scales = scene.activated_scales()
        assert np.allclose(scales, scales[0, 0])
        assert np.allclose(scene.activated_opacities(), 0.1)
        assert np.array_equal(scene.rotations,
                              np.tile([1.0, 0, 0, 0], (4, 1)))
        assert np.allclose(scene.colors, 128 / 255.0)

    def test_collinear_interior_scale(self):
        # spacing 1: an interior point sees neighbors at 1, 1, 2 -> mean 4/3
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]],
                       dtype=np.float64)
        cloud = ColoredPointCloud(points=pts,
                                  colors=np.zeros((5, 3), dtype=np.uint8))
        scene = init_gaussians(cloud)
        assert scene.activated_scales()[2, 0] == pytest.approx(4.0 / 3.0)
        # endpoints see 1, 2, 3 -> mean 2
        assert scene.activated_scales()[0, 0] == pytest.approx(2.0)

    def test_requires_four_points(self):
        cloud = ColoredPointCloud(points=np.zeros((3, 3)),
                                  colors=np.zeros((3, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            init_gaussians(cloud)

    def test_coincident_points_stay_finite(self):
        pts = np.zeros((6, 3))
        cloud = ColoredPointCloud(points=pts,
                                  colors=np.zeros((6, 3), dtype=np.uint8))
        scene = init_gaussians(cloud)
        assert np.all(np.isfinite(scene.log_scales))
