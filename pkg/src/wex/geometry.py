"""Camera geometry primitives shared by every pipeline stage.

Conventions (fixed, do not bend):
  * extrinsics are camera-to-world: ``p_world = R @ p_cam + center``
  * camera space is x-right / y-down / z-forward
  * world y is up; a pure yaw pose has rotation R_y(theta) with
    R_y = [[cos, 0, sin], [0, 1, 0], [-sin, 0, cos]]
  * intrinsics use a horizontal field of view; fy == fx; principal point
    at the image center
  * pixel (row i, col j) has continuous image coordinate (j + 0.5, i + 0.5)
  * depth is the camera-space z coordinate, not ray length
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Z_NEAR = 1e-4


def _as_unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def rot_y(deg: float) -> np.ndarray:
    """World-frame yaw rotation (right-handed about +y as written above)."""
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit-norm quaternion (w, x, y, z) to rotation matrix.

    Normalizes defensively; callers holding raw optimization state may pass
    slightly off-unit values.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = _as_unit(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random rotation via a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    return quat_to_rotmat(q / np.linalg.norm(q))


def rotmat_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion (w, x, y, z), w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0:
        q = -q
    return _as_unit(q)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie strictly inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def intrinsics_from_fov(fov_deg: float, width: int, height: int) -> Intrinsics:
    """Pinhole intrinsics from a horizontal FOV; fy = fx, centered principal point."""
    if not (0.0 < fov_deg < 180.0):
        raise ValueError(f"horizontal fov must be in (0, 180), got {fov_deg}")
    fx = (width / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
    return Intrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world pose plus intrinsics."""

    rotation: np.ndarray  # (3, 3) camera-to-world
    center: np.ndarray  # (3,) camera center in world units
    intrinsics: Intrinsics

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        c = np.asarray(self.center, dtype=np.float64)
        if r.shape != (3, 3) or c.shape != (3,):
            raise ValueError("rotation must be (3,3) and center (3,)")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-8):
            raise ValueError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-8):
            raise ValueError("rotation must be right-handed (det +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "center", c)

    @property
    def forward(self) -> np.ndarray:
        """World-space viewing direction (camera +z)."""
        return self.rotation[:, 2].copy()

    @property
    def matrix(self) -> np.ndarray:
        """4x4 camera-to-world transform."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.center
        return m

    def compose(self, other: "CameraPose") -> "CameraPose":
        """Rigid composition self . other (apply other first). Keeps self's intrinsics."""
        return CameraPose(
            rotation=self.rotation @ other.rotation,
            center=self.rotation @ other.center + self.center,
            intrinsics=self.intrinsics,
        )

    def inverse(self) -> "CameraPose":
        rt = self.rotation.T
        return CameraPose(rotation=rt, center=-rt @ self.center, intrinsics=self.intrinsics)

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return (pts - self.center) @ self.rotation

    def cam_to_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return pts @ self.rotation.T + self.center


def yaw_pose(yaw_deg: float, intrinsics: Intrinsics, center=(0.0, 0.0, 0.0)) -> CameraPose:
    return CameraPose(rotation=rot_y(yaw_deg), center=np.asarray(center, dtype=np.float64), intrinsics=intrinsics)


def project_points(pose: CameraPose, pts: np.ndarray, z_near: float = Z_NEAR):
    """World points -> (pixel (N,2), depth (N,), valid (N,)).

    valid is False for points at or behind z_near; their pixel values are
    unspecified (depth is still the camera z).
    """
    k = pose.intrinsics
    pc = pose.world_to_cam(pts)
    z = pc[:, 2]
    valid = z > z_near
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pc[:, 0] / z + k.cx
        v = k.fy * pc[:, 1] / z + k.cy
    uv = np.stack([u, v], axis=1)
    return uv, z, valid


def project_point(pose: CameraPose, pt: np.ndarray, z_near: float = Z_NEAR):
    uv, z, valid = project_points(pose, np.asarray(pt)[None, :], z_near=z_near)
    return uv[0], float(z[0]), bool(valid[0])


def pixel_center_grid(intr: Intrinsics) -> np.ndarray:
    """(H, W, 2) continuous image coordinates of every pixel center."""
    u = np.arange(intr.width, dtype=np.float64) + 0.5
    v = np.arange(intr.height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def camera_rays(pose: CameraPose):
    """Per-pixel rays through pixel centers.

    Returns (origins (3,), dirs (H, W, 3)) with dirs NOT normalized: the dir
    is R @ K^-1 [u, v, 1], so the point at parameter t along the ray has
    camera depth exactly t.
    """
    k = pose.intrinsics
    grid = pixel_center_grid(k)
    x = (grid[..., 0] - k.cx) / k.fx
    y = (grid[..., 1] - k.cy) / k.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    dirs = dirs_cam @ pose.rotation.T
    return pose.center.copy(), dirs


@dataclass
class DepthMap:
    """Per-pixel depth; metric scene units unless normalized is set."""

    values: np.ndarray  # (H, W) float32
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("depth map contains non-finite values")
        if self.normalized and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("normalized depth must lie in [0, 1]")
        self.values = v

    @property
    def shape(self):
        return self.values.shape


def unproject_depth(pose: CameraPose, depth: DepthMap, image: np.ndarray | None = None,
                    mask: np.ndarray | None = None):
    """Lift a depth map to a world-space point cloud, one point per pixel.

    Points come out in row-major pixel order. When a validity mask is given
    only masked-true pixels produce points. Returns (points (M,3) float64,
    colors (M,3) uint8 or None).
    """
    if depth.normalized:
        raise ValueError("unprojection needs metric depth, got a normalized map")
    h, w = depth.shape
    k = pose.intrinsics
    if (k.height, k.width) != (h, w):
        raise ValueError("depth map shape does not match pose intrinsics")
    origin, dirs = camera_rays(pose)
    pts = origin + dirs * depth.values.astype(np.float64)[..., None]
    pts = pts.reshape(-1, 3)
    colors = None
    if image is not None:
        if image.shape[:2] != (h, w):
            raise ValueError("image shape does not match depth map")
        colors = image.reshape(-1, image.shape[-1])
    if mask is not None:
        flat = np.asarray(mask, dtype=bool).reshape(-1)
        pts = pts[flat]
        if colors is not None:
            colors = colors[flat]
    return pts, colors


def plucker_image(pose: CameraPose) -> np.ndarray:
    """(H, W, 6) ray embedding: moment (origin x dir) first, unit dir last."""
    origin, dirs = camera_rays(pose)
    d = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    m = np.cross(np.broadcast_to(origin, d.shape), d)
    return np.concatenate([m, d], axis=-1)


def rotation_geodesic_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, degrees in [0, 180]."""
    t = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return float(np.rad2deg(np.arccos(np.clip(t, -1.0, 1.0))))


def forward_angle_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Angle between the world forward (+z) axes of two rotations, degrees."""
    d = float(np.clip(np.dot(ra[:, 2], rb[:, 2]), -1.0, 1.0))
    return float(np.rad2deg(np.arccos(d)))


@dataclass
class ColoredPointCloud:
    points: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        c = np.asarray(self.colors)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if c.shape != p.shape:
            raise ValueError("colors must match points shape")
        if c.dtype != np.uint8:
            raise ValueError("colors must be uint8")
        self.points = p
        self.colors = c

    def __len__(self):
        return self.points.shape[0]


# A Plucker embedding is an (H, W, 6) float array; kept as a plain ndarray.
PluckerImage = np.ndarray
