"""Run configuration and the per-scene JSON manifest.

The manifest is the single source of truth for resume: a stage (and, within
stage 2, each trajectory) appears here only once its artifacts are fully on
disk, so a rerun can trust every record it finds. Serialization is canonical —
sorted keys, fixed separators, no timestamps — making identical runs produce
byte-identical manifests.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .fileio import atomic_write_bytes
from .optimize import OptimizeConfig
from .scaffold import DEFAULT_VIEW_PREFIXES, ScaffoldConfig
from .seeding import derive_seed
from .trajectory import (
    KIND_ELEVATE_UP,
    KIND_ROTATE_LEFT,
    KIND_ROTATE_RIGHT,
    KIND_ZOOM_IN,
)

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"

STAGE1 = "stage1"
STAGE2 = "stage2"
STAGE3 = "stage3"
STAGES = (STAGE1, STAGE2, STAGE3)

STATUS_RUNNING = "running"
STATUS_COMPLETE = "complete"


class ManifestError(RuntimeError):
    """The manifest file is missing, unreadable, or from an unknown schema."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; the untouched defaults are the published
    operating point (576 px, 44/134-frame trajectories, 21-frame batches,
    8+5 conditions, 0.4/0.2 collision test, 200K Gaussians)."""

    prompt_base: str = "a cozy living room"
    view_prefixes: tuple = DEFAULT_VIEW_PREFIXES
    inpaint_prompt: str | None = None
    resolution: int = 576
    fov_deg: float = 60.0
    seed: int = 0
    zoom_frames: int = 44
    rotate_frames: int = 134
    elevate_frames: int = 44
    batch_size: int = 21
    anchor_stride: int = 7
    max_dynamic: int = 5
    opposite_deg: float = 120.0
    collision_threshold: float = 0.4
    crop_fraction: float = 0.2
    gaussian_count: int = 200_000
    optimize_steps: int = 30_000
    lambda_l1: float = 0.8
    lambda_ssim: float = 0.2
    endpoint: str | None = None  # None -> built-in oracle backends

    def __post_init__(self):
        object.__setattr__(self, "view_prefixes", tuple(self.view_prefixes))
        if self.batch_size < 2:
            raise ValueError("batch_size must fit an anchor pair")
        if self.gaussian_count < 1 or self.optimize_steps < 0:
            raise ValueError("gaussian_count must be >= 1 and optimize_steps >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["view_prefixes"] = list(self.view_prefixes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ManifestError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)

    def scaffold_config(self) -> ScaffoldConfig:
        return ScaffoldConfig(
            prompt_base=self.prompt_base,
            view_prefixes=self.view_prefixes,
            inpaint_prompt=self.inpaint_prompt,
            fov_deg=self.fov_deg,
            resolution=self.resolution,
            seed=self.seed,
        )

    def frame_counts(self) -> dict:
        return {
            KIND_ZOOM_IN: self.zoom_frames,
            KIND_ROTATE_LEFT: self.rotate_frames,
            KIND_ROTATE_RIGHT: self.rotate_frames,
            KIND_ELEVATE_UP: self.elevate_frames,
        }

    def optimize_config(self) -> OptimizeConfig:
        return OptimizeConfig(
            lambda_l1=self.lambda_l1,
            lambda_ssim=self.lambda_ssim,
            seed=derive_seed(self.seed, "optimize"),
        )


def new_manifest(scene: str, config: RunConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "scene": scene,
        "seed": config.seed,
        "config": config.to_dict(),
        "failed_stage": None,
        "stages": {},
    }


def manifest_bytes(manifest: dict) -> bytes:
    """Canonical serialization: sorted keys, fixed separators, no timestamps,
    so identical runs produce byte-identical manifests."""
    return (json.dumps(manifest, sort_keys=True, indent=1, separators=(",", ": "))
            + "\n").encode("utf-8")


def write_manifest(scene_dir: str | Path, manifest: dict) -> None:
    atomic_write_bytes(Path(scene_dir) / MANIFEST_NAME, manifest_bytes(manifest))


def read_manifest(scene_dir: str | Path) -> dict:
    path = Path(scene_dir) / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no manifest at {path}")
    try:
        manifest = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"unparseable manifest at {path}: {exc}") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ManifestError(f"manifest schema {version!r} unsupported "
                            f"(expected {SCHEMA_VERSION})")
    return manifest


def stage_complete(manifest: dict, stage: str) -> bool:
    return manifest["stages"].get(stage, {}).get("status") == STATUS_COMPLETE


def manifest_config(manifest: dict) -> RunConfig:
    return RunConfig.from_dict(manifest["config"])
