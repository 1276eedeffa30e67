"""Gaussian scene container, cloud alignment, and initialization.

Stage 3 starts from the geometry backend's point cloud, which lives in an
arbitrary similarity frame. We align it to the known cameras by anchoring on
camera 1 (rigid part) and matching camera-center hulls (scale), then seed one
Gaussian per surviving point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import CameraPose, ColoredPointCloud

# Activation value for freshly initialized Gaussians.
INIT_OPACITY = 0.1
# Guard for coincident points; mirrors the floor classic 3DGS applies to
# nearest-neighbor distances so log-scales stay finite.
MIN_NN_DISTANCE = 1e-7


class AlignmentError(ValueError):
    """Degenerate camera configuration: the hull has no extent."""


def _as_f64(a, shape_tail, name):
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != len(shape_tail) + 1 or out.shape[1:] != shape_tail:
        raise ValueError(f"{name} must have shape (N,{','.join(map(str, shape_tail))})")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must be finite")
    return out


@dataclass
class GaussianScene:
    """Optimizable splat parameters, one row per Gaussian.

    All fields are float64 (N, k) arrays. Opacities live in logit space and
    scales in log space; ``rotations`` are w-first quaternions kept unit-norm
    by the optimizer.
    """

    means: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.means = _as_f64(self.means, (3,), "means")
        n = len(self.means)
        self.rotations = _as_f64(self.rotations, (4,), "rotations")
        self.log_scales = _as_f64(self.log_scales, (3,), "log_scales")
        self.colors = _as_f64(self.colors, (3,), "colors")
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64)
        if self.opacity_logits.shape != (n,):
            raise ValueError("opacity_logits must have shape (N,)")
        if not np.all(np.isfinite(self.opacity_logits)):
            raise ValueError("opacity_logits must be finite")
        for name in ("rotations", "log_scales", "colors"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match means")
        if n:
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.any(norms < 1e-12):
                raise ValueError("zero-norm quaternion")
        if self.colors.size and (self.colors.min() < 0 or self.colors.max() > 1):
            raise ValueError("colors must lie in [0,1]")

    def __len__(self) -> int:
        return len(self.means)

    def activated_opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def activated_scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def copy(self) -> "GaussianScene":
        return GaussianScene(self.means.copy(), self.rotations.copy(),
                             self.log_scales.copy(), self.opacity_logits.copy(),
                             self.colors.copy())

    def select(self, mask: np.ndarray) -> "GaussianScene":
        return GaussianScene(self.means[mask], self.rotations[mask],
                             self.log_scales[mask], self.opacity_logits[mask],
                             self.colors[mask])


@dataclass(frozen=True)
class Alignment:
    """Similarity mapping predicted space to known space: p -> s*(R p + t)."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be (3,3), translation (3,)")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-8) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Alignment":
        return Alignment(np.eye(3), np.zeros(3), 1.0)


def hull_diagonal(centers) -> float:
    """Euclidean length of the diagonal of the AABB around the centers."""
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty center list")
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def estimate_alignment(known_cam_1: CameraPose, pred_cam_1: CameraPose,
                       known_centers, pred_centers) -> Alignment:
    """Rigid part from the first camera pair, scale from the hull ratio.

    The scale divides out exactly only when the center set's AABB diagonal is
    rotation invariant (collinear sets, as zoom trajectories anchored at the
    scaffold are); otherwise it is a close estimate the optimizer absorbs.
    """
    known = np.asarray(known_centers, dtype=np.float64).reshape(-1, 3)
    pred = np.asarray(pred_centers, dtype=np.float64).reshape(-1, 3)
    if len(known) == 0 or len(known) != len(pred):
        raise ValueError("center lists must be non-empty and equal length")
    hull_pred = hull_diagonal(pred)
    if hull_pred == 0.0:
        raise AlignmentError("all predicted camera centers coincide")
    hull_known = hull_diagonal(known)
    if hull_known == 0.0:
        raise AlignmentError("all known camera centers coincide")
    rotation = known_cam_1.rotation @ pred_cam_1.rotation.T
    translation = known_cam_1.center - rotation @ pred_cam_1.center
    return Alignment(rotation, translation, hull_known / hull_pred)


def apply_alignment_points(alignment: Alignment, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return alignment.scale * (pts @ alignment.rotation.T + alignment.translation)


def apply_alignment(alignment: Alignment, cloud: ColoredPointCloud) -> ColoredPointCloud:
    return ColoredPointCloud(points=apply_alignment_points(alignment, cloud.points),
                             colors=cloud.colors.copy())


def downsample_points(cloud: ColoredPointCloud, target: int, seed: int) -> ColoredPointCloud:
    if target < 1:
        raise ValueError("target must be >= 1")
    n = len(cloud.points)
    if n <= target:
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=target, replace=False))
    return ColoredPointCloud(points=cloud.points[idx], colors=cloud.colors[idx])


def init_gaussians(cloud: ColoredPointCloud) -> GaussianScene:
    """One isotropic Gaussian per point, sized by local point spacing."""
    pts = np.asarray(cloud.points, dtype=np.float64)
    if len(pts) < 4:
        raise ValueError("need at least 4 points to size Gaussians")
    # k=4 returns each point itself plus its 3 nearest neighbors
    dist, _ = cKDTree(pts).query(pts, k=4)
    nn_mean = np.maximum(dist[:, 1:].mean(axis=1), MIN_NN_DISTANCE)
    log_scales = np.repeat(np.log(nn_mean)[:, None], 3, axis=1)
    n = len(pts)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    logit = float(np.log(INIT_OPACITY / (1.0 - INIT_OPACITY)))
    return GaussianScene(
        means=pts.copy(),
        rotations=rotations,
        log_scales=log_scales,
        opacity_logits=np.full(n, logit),
        colors=cloud.colors.astype(np.float64) / 255.0,
    )
