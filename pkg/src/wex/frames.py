"""Posed frames flowing between pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraPose, DepthMap

PROVENANCE_SCAFFOLD = "scaffold"
PROVENANCE_ANCHOR = "anchor"
PROVENANCE_INTERPOLATED = "interpolated"
_PROVENANCES = (PROVENANCE_SCAFFOLD, PROVENANCE_ANCHOR, PROVENANCE_INTERPOLATED)


@dataclass
class Frame:
    """One generated image with its camera and optional depth."""

    image: np.ndarray  # (H, W, 3) uint8
    pose: CameraPose
    provenance: str
    depth: DepthMap | None = None
    trajectory: str | None = None  # owning trajectory id, None for scaffold
    index: int = 0  # position within its trajectory / scaffold ring

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise ValueError("frame image must be (H, W, 3) uint8")
        k = self.pose.intrinsics
        if img.shape[:2] != (k.height, k.width):
            raise ValueError("frame image shape does not match pose intrinsics")
        if self.provenance not in _PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.depth is not None and self.depth.shape != img.shape[:2]:
            raise ValueError("frame depth shape does not match image")
        self.image = img
