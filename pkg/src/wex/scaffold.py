"""Stage 1: the eight-view panoramic scaffold anchored at the origin.

Four text-to-image seeds at yaw 0/90/180/270 are lifted to a shared point
cloud with mono depth, splatted into the four intermediate yaws, and the
remaining holes are inpainted. All eight cameras share the origin, so the
scaffold is a consistent panorama regardless of the global depth scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

from .backends import BackendSuite
from .frames import PROVENANCE_SCAFFOLD, Frame
from .geometry import (
    CameraPose,
    ColoredPointCloud,
    DepthMap,
    Z_NEAR,
    intrinsics_from_fov,
    project_points,
    unproject_depth,
    yaw_pose,
)
from .seeding import derive_seed

SEED_YAWS = (0.0, 90.0, 180.0, 270.0)
INTERMEDIATE_YAWS = (45.0, 135.0, 225.0, 315.0)
RING_YAWS = (0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0)
SEED_RING_INDICES = (0, 2, 4, 6)
INTERMEDIATE_RING_INDICES = (1, 3, 5, 7)

DEFAULT_VIEW_PREFIXES = (
    "front wall of",
    "right wall of",
    "back wall of",
    "left wall of",
)


class ScaffoldError(RuntimeError):
    """A backend call failed while building the scaffold."""

    def __init__(self, step: str, view: int, cause: Exception):
        super().__init__(f"scaffold {step} failed for view {view}: {cause}")
        self.step = step
        self.view = view
        self.cause = cause


@dataclass
class ScaffoldConfig:
    prompt_base: str = "a cozy living room"
    view_prefixes: tuple = DEFAULT_VIEW_PREFIXES
    inpaint_prompt: str | None = None  # falls back to prompt_base
    fov_deg: float = 60.0
    resolution: int = 576
    seed: int = 0
    splat_radius_px: int = 2
    hole_dilation_px: int = 3
    anchor_depth: float = 3.0  # median seed depth is rescaled to this

    def __post_init__(self):
        if len(self.view_prefixes) != 4:
            raise ValueError("exactly four view prefixes are required")
        if self.resolution < 8:
            raise ValueError("resolution too small")


@dataclass
class Scaffold:
    """Eight frames in ring order (yaw ascending, 45-degree steps)."""

    frames: list  # 8 Frames
    masks: dict  # ring index -> dilated inpaint mask (bool) for intermediates
    depth_scale: float  # global scalar applied to seed depths
    config: ScaffoldConfig

    def __post_init__(self):
        if len(self.frames) != 8:
            raise ValueError("scaffold needs exactly eight frames")
        for f in self.frames:
            if not np.allclose(f.pose.center, 0.0):
                raise ValueError("scaffold cameras must sit at the origin")

    @property
    def seed_frames(self):
        return [self.frames[i] for i in SEED_RING_INDICES]

    def median_depth(self) -> float:
        vals = np.concatenate([f.depth.values.reshape(-1) for f in self.seed_frames])
        return float(np.median(vals))


@njit(cache=True)
def _splat_kernel(us, vs, zs, colors, radius, img, level, zbuf):
    # level: 0 = a point's home pixel, 1 = disc spill, 2 = empty.
    # Home hits always beat spill; within a level nearer depth wins
    # (eps 1e-6), first-seen keeps ties.
    h, w = zbuf.shape
    r = int(radius)
    r2 = radius * radius
    for i in range(us.shape[0]):
        u = us[i]
        v = vs[i]
        z = zs[i]
        hc = int(np.floor(u))
        hr = int(np.floor(v))
        for dr in range(-r, r + 1):
            rr = hr + dr
            if rr < 0 or rr >= h:
                continue
            for dc in range(-r, r + 1):
                cc = hc + dc
                if cc < 0 or cc >= w:
                    continue
                dx = (cc + 0.5) - u
                dy = (rr + 0.5) - v
                if dx * dx + dy * dy > r2:
                    continue
                lev = 0 if (rr == hr and cc == hc) else 1
                if lev < level[rr, cc] or (lev == level[rr, cc] and z < zbuf[rr, cc] - 1e-6):
                    level[rr, cc] = lev
                    zbuf[rr, cc] = z
                    img[rr, cc, 0] = colors[i, 0]
                    img[rr, cc, 1] = colors[i, 1]
                    img[rr, cc, 2] = colors[i, 2]


def splat_to_view(cloud: ColoredPointCloud, pose: CameraPose, splat_radius_px: int = 2):
    """Render a colored point cloud into a view as depth-tested discs.

    Returns (image (H,W,3) uint8, coverage_mask (H,W) bool). Behind-camera
    points are skipped; uncovered pixels stay black.
    """
    k = pose.intrinsics
    h, w = k.height, k.width
    img = np.zeros((h, w, 3), dtype=np.uint8)
    level = np.full((h, w), 2, dtype=np.uint8)
    zbuf = np.full((h, w), np.inf)
    if len(cloud):
        uv, z, valid = project_points(pose, cloud.points, z_near=Z_NEAR)
        keep = valid & np.isfinite(uv).all(axis=1)
        # points whose disc cannot touch the image are dropped up front
        keep &= (uv[:, 0] > -splat_radius_px - 1) & (uv[:, 0] < w + splat_radius_px + 1)
        keep &= (uv[:, 1] > -splat_radius_px - 1) & (uv[:, 1] < h + splat_radius_px + 1)
        if keep.any():
            _splat_kernel(
                np.ascontiguousarray(uv[keep, 0]),
                np.ascontiguousarray(uv[keep, 1]),
                np.ascontiguousarray(z[keep]),
                np.ascontiguousarray(cloud.colors[keep]),
                float(splat_radius_px),
                img,
                level,
                zbuf,
            )
    return img, level < 2


def build_seed_poses(config: ScaffoldConfig):
    intr = intrinsics_from_fov(config.fov_deg, config.resolution, config.resolution)
    return [yaw_pose(yaw, intr) for yaw in SEED_YAWS]


def seed_prompt(config: ScaffoldConfig, view: int) -> str:
    return f"{config.view_prefixes[view]} {config.prompt_base} @pose yaw={SEED_YAWS[view]:g}"


def inpaint_prompt(config: ScaffoldConfig, yaw: float) -> str:
    base = config.inpaint_prompt or config.prompt_base
    return f"{base} @pose yaw={yaw:g}"


def build_scaffold(config: ScaffoldConfig, suite: BackendSuite, cache=None,
                   on_artifact=None) -> Scaffold:
    """Run stage 1. ``cache`` maps artifact keys to already-built values so a
    resumed run repeats no backend calls; ``on_artifact`` sees each fresh one.
    """
    cache = {} if cache is None else cache

    def produce(key, step, view, fn):
        if key in cache:
            return cache[key]
        try:
            value = fn()
        except Exception as exc:  # noqa: BLE001 - wrapped with context, re-raised
            raise ScaffoldError(step, view, exc) from exc
        cache[key] = value
        if on_artifact is not None:
            on_artifact(key, value)
        return value

    res = config.resolution
    intr = intrinsics_from_fov(config.fov_deg, res, res)
    seed_poses = build_seed_poses(config)

    seed_images = [
        produce(f"seed_image_{i}", "t2i", i,
                lambda i=i: suite.t2i.t2i(seed_prompt(config, i), res, res,
                                          derive_seed(config.seed, "t2i", i)))
        for i in range(4)
    ]
    raw_depths = [
        produce(f"seed_depth_{i}", "mono_depth", i,
                lambda i=i: suite.depth.mono_depth(seed_images[i], pose=seed_poses[i]))
        for i in range(4)
    ]

    med = float(np.median(np.concatenate([d.values.reshape(-1) for d in raw_depths])))
    if med <= 0.0:
        raise ScaffoldError("metricize", -1, ValueError(f"non-positive median depth {med}"))
    scale = config.anchor_depth / med
    depths = [DepthMap((d.values.astype(np.float64) * scale).astype(np.float32))
              for d in raw_depths]

    pts, cols = [], []
    for pose, depth, img in zip(seed_poses, depths, seed_images):
        p, c = unproject_depth(pose, depth, image=img)
        pts.append(p)
        cols.append(c)
    cloud = ColoredPointCloud(np.concatenate(pts), np.concatenate(cols).astype(np.uint8))

    inter_images, inter_masks = [], []
    for j, yaw in enumerate(INTERMEDIATE_YAWS):
        pose = yaw_pose(yaw, intr)

        def make_view(pose=pose, yaw=yaw, j=j):
            base, covered = splat_to_view(cloud, pose, config.splat_radius_px)
            hole = ~covered
            mask = ndimage.binary_dilation(hole, iterations=config.hole_dilation_px) \
                if hole.any() else hole
            filled = suite.inpaint.inpaint(base, mask, inpaint_prompt(config, yaw),
                                           derive_seed(config.seed, "inpaint", j))
            return filled, mask

        img, mask = produce(f"inter_{j}", "inpaint", j, make_view)
        inter_images.append(img)
        inter_masks.append(mask)

    frames, masks = [], {}
    for ring_idx, yaw in enumerate(RING_YAWS):
        pose = yaw_pose(yaw, intr)
        if ring_idx in SEED_RING_INDICES:
            view = SEED_RING_INDICES.index(ring_idx)
            frames.append(Frame(image=seed_images[view], pose=pose,
                                provenance=PROVENANCE_SCAFFOLD, depth=depths[view],
                                index=ring_idx))
        else:
            j = INTERMEDIATE_RING_INDICES.index(ring_idx)
            frames.append(Frame(image=inter_images[j], pose=pose,
                                provenance=PROVENANCE_SCAFFOLD, index=ring_idx))
            masks[ring_idx] = inter_masks[j]

    return Scaffold(frames=frames, masks=masks, depth_scale=scale, config=config)
