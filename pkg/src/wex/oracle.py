"""Closed-form synthetic world standing in for every generative backend.

A box room (walls carry smooth-edged checkerboards in distinct hues) plus a
sphere and a box primitive, rendered by exact ray casting. Every operation is
a pure function of its request, which makes pipeline determinism and
multi-view consistency testable to the byte.

Prompts may carry a pose directive like ``@pose yaw=45`` so stage 1 can ask
for specific viewpoints without widening the t2i contract; real backends
just see extra prompt text.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .backends import (
    BackendError,
    BackendSuite,
    DepthBackend,
    InpaintBackend,
    PointCloudBackend,
    TextToImageBackend,
    VideoBackend,
    VideoDepthBackend,
    normalize_video_depth,
)
from .geometry import (
    CameraPose,
    ColoredPointCloud,
    DepthMap,
    camera_rays,
    intrinsics_from_fov,
    random_rotation,
    yaw_pose,
)

_EPS = 1e-9
_POSE_DIRECTIVE = re.compile(r"@pose\s+yaw=(-?\d+(?:\.\d+)?)")

WALL_HUES = np.array([
    [0.85, 0.35, 0.30],  # +x
    [0.30, 0.75, 0.80],  # -x
    [0.80, 0.80, 0.88],  # +y
    [0.55, 0.40, 0.25],  # -y
    [0.35, 0.75, 0.35],  # +z
    [0.75, 0.40, 0.75],  # -z
])
SPHERE_HUE = np.array([0.92, 0.82, 0.30])
BOX_HUE = np.array([0.40, 0.50, 0.90])


def parse_pose_directive(prompt: str) -> float | None:
    m = _POSE_DIRECTIVE.search(prompt)
    return float(m.group(1)) if m else None


@dataclass
class OracleConfig:
    room_center: tuple = (0.0, 0.0, 0.0)
    room_size: tuple = (6.0, 3.0, 6.0)
    fov_deg: float = 60.0
    seed: int = 0
    checker_period: float = 2.0
    contrast: float = 0.2
    include_primitives: bool = True
    sphere_center: tuple = (1.2, -0.7, 0.8)
    sphere_radius: float = 0.5
    box_min: tuple = (-2.2, -1.5, -1.0)
    box_max: tuple = (-1.2, -0.3, 0.0)
    points_per_frame: int = 1500
    scale_range: tuple = (0.5, 2.0)


class OracleWorld(TextToImageBackend, InpaintBackend, VideoBackend, DepthBackend,
                  VideoDepthBackend, PointCloudBackend):
    def __init__(self, config: OracleConfig | None = None):
        self.config = config or OracleConfig()
        c = np.asarray(self.config.room_center, dtype=np.float64)
        s = np.asarray(self.config.room_size, dtype=np.float64)
        self.room_lo = c - s / 2.0
        self.room_hi = c + s / 2.0
        # the point-cloud similarity is fixed at construction: one world, one
        # estimator frame
        rng = np.random.default_rng(self.config.seed + 101)
        self.sim_rotation = random_rotation(rng)
        self.sim_translation = rng.uniform(-1.0, 1.0, size=3)
        self.sim_scale = float(rng.uniform(*self.config.scale_range))

    # -- geometry --------------------------------------------------------

    def raycast(self, pose: CameraPose):
        """Exact render: (rgb uint8 (H,W,3), depth float32 (H,W)).

        Depth is camera z. Rays that miss everything (camera escaped the
        room) get depth 0 and black, which downstream normalization reads
        as zero clearance.
        """
        origin, dirs = camera_rays(pose)
        h, w = dirs.shape[:2]
        t_best = np.full((h, w), np.inf)
        surf = np.full((h, w), -1, dtype=np.int8)

        for axis in range(3):
            for side, bound in ((0, self.room_hi[axis]), (1, self.room_lo[axis])):
                d = dirs[..., axis]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = (bound - origin[axis]) / d
                ok = np.isfinite(t) & (t > _EPS) & (t < t_best)
                if not ok.any():
                    continue
                t = np.where(np.isfinite(t), t, 0.0)
                p = origin[None, None, :] + t[..., None] * dirs
                for other in range(3):
                    if other == axis:
                        continue
                    ok &= (p[..., other] >= self.room_lo[other] - 1e-9)
                    ok &= (p[..., other] <= self.room_hi[other] + 1e-9)
                wall_id = axis * 2 + side
                t_best[ok] = t[ok]
                surf[ok] = wall_id

        if self.config.include_primitives:
            t_s = self._intersect_sphere(origin, dirs)
            hit = t_s < t_best
            t_best[hit] = t_s[hit]
            surf[hit] = 6

            t_b = self._intersect_box(origin, dirs)
            hit = t_b < t_best
            t_best[hit] = t_b[hit]
            surf[hit] = 7

        pts = origin[None, None, :] + np.where(np.isfinite(t_best), t_best, 0.0)[..., None] * dirs
        rgb = self._shade(pts, surf)
        depth = np.where(np.isfinite(t_best), t_best, 0.0).astype(np.float32)
        return (np.round(rgb * 255.0)).astype(np.uint8), depth

    def _intersect_sphere(self, origin, dirs):
        c = np.asarray(self.config.sphere_center)
        r = self.config.sphere_radius
        oc = origin - c
        a = (dirs * dirs).sum(-1)
        b = 2.0 * (dirs @ oc)
        cc = float(oc @ oc) - r * r
        disc = b * b - 4.0 * a * cc
        t = np.full(dirs.shape[:2], np.inf)
        hit = disc >= 0.0
        if hit.any():
            sq = np.sqrt(np.where(hit, disc, 0.0))
            t0 = (-b - sq) / (2.0 * a)
            t1 = (-b + sq) / (2.0 * a)
            near = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
            t = np.where(hit, near, np.inf)
        return t

    def _intersect_box(self, origin, dirs):
        lo = np.asarray(self.config.box_min)
        hi = np.asarray(self.config.box_max)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
        tnear = np.minimum(t1, t2).max(-1)
        tfar = np.maximum(t1, t2).min(-1)
        t = np.where(tnear > _EPS, tnear, tfar)
        ok = (tnear <= tfar) & (tfar > _EPS)
        return np.where(ok, t, np.inf)

    def _shade(self, pts, surf):
        cfg = self.config
        rgb = np.zeros(pts.shape)
        pw = math.pi / cfg.checker_period
        for wall in range(6):
            m = surf == wall
            if not m.any():
                continue
            axis = wall // 2
            a_axis, b_axis = [i for i in range(3) if i != axis]
            chi = np.sin(pw * pts[..., a_axis][m]) * np.sin(pw * pts[..., b_axis][m])
            rgb[m] = WALL_HUES[wall] * (0.78 + cfg.contrast * chi)[:, None]
        pq = math.pi / 0.7
        for sid, hue in ((6, SPHERE_HUE), (7, BOX_HUE)):
            m = surf == sid
            if not m.any():
                continue
            chi = (np.sin(pq * pts[..., 0][m]) * np.sin(pq * pts[..., 1][m])
                   * np.sin(pq * pts[..., 2][m]))
            rgb[m] = hue * (0.78 + cfg.contrast * chi)[:, None]
        return np.clip(rgb, 0.0, 1.0)

    def render(self, pose: CameraPose) -> np.ndarray:
        return self.raycast(pose)[0]

    def pose_for_yaw(self, yaw_deg: float, width: int, height: int) -> CameraPose:
        return yaw_pose(yaw_deg, intrinsics_from_fov(self.config.fov_deg, width, height))

    # -- backend contracts -------------------------------------------------

    def t2i(self, prompt, width, height, seed):
        yaw = parse_pose_directive(prompt)
        pose = self.pose_for_yaw(yaw if yaw is not None else 0.0, width, height)
        return self.render(pose)

    def inpaint(self, image, mask, prompt, seed):
        yaw = parse_pose_directive(prompt)
        if yaw is None:
            raise BackendError("invalid-argument",
                               "oracle inpainting needs a @pose yaw directive")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != image.shape[:2]:
            raise BackendError("invalid-argument", "mask shape does not match image")
        truth = self.render(self.pose_for_yaw(yaw, image.shape[1], image.shape[0]))
        out = image.copy()
        out[mask] = truth[mask]
        return out

    def generate_video(self, conditions, targets, prompt, seed):
        self.check_window(conditions, targets)
        return [self.render(t.pose) for t in targets]

    def mono_depth(self, image, pose=None):
        if pose is None:
            raise BackendError("invalid-argument", "oracle depth needs the camera pose")
        return DepthMap(self.raycast(pose)[1])

    def video_depth(self, images, poses=None):
        if poses is None or len(poses) != len(images):
            raise BackendError("invalid-argument", "oracle video depth needs one pose per frame")
        return normalize_video_depth([self.raycast(p)[1] for p in poses])

    def point_cloud(self, frames):
        if not frames:
            raise BackendError("invalid-argument", "point cloud needs at least one frame")
        pts_all, col_all, cams = [], [], []
        for i, f in enumerate(frames):
            k = f.pose.intrinsics
            n_px = k.width * k.height
            stride = max(1, n_px // self.config.points_per_frame)
            sel = np.arange(i % stride, n_px, stride)
            depth = self.raycast(f.pose)[1].reshape(-1)[sel].astype(np.float64)
            origin, dirs = camera_rays(f.pose)
            pts = origin + dirs.reshape(-1, 3)[sel] * depth[:, None]
            keep = depth > 0.0
            pts_all.append(pts[keep])
            col_all.append(f.image.reshape(-1, 3)[sel][keep])
            cams.append(f.pose)
        pts = np.concatenate(pts_all, axis=0)
        cols = np.concatenate(col_all, axis=0)
        pts_pred = self.apply_similarity(pts)
        cams_pred = [CameraPose(rotation=self.sim_rotation @ c.rotation,
                                center=self.apply_similarity(c.center[None, :])[0],
                                intrinsics=c.intrinsics) for c in cams]
        return ColoredPointCloud(pts_pred, cols.astype(np.uint8)), cams_pred

    def apply_similarity(self, pts: np.ndarray) -> np.ndarray:
        """Map true points into the estimator frame: s * (R p + t)."""
        return self.sim_scale * (pts @ self.sim_rotation.T + self.sim_translation)


def oracle_suite(config: OracleConfig | None = None) -> BackendSuite:
    world = OracleWorld(config)
    return BackendSuite(t2i=world, inpaint=world, video=world, depth=world,
                        video_depth=world, point_cloud=world)
