"""Stage orchestration over a scene directory.

Layout under ``scenes/<name>/``::

    manifest.json            canonical record of everything below
    .lock                    present while a process owns the scene
    stage1/cache/            raw backend artifacts (mid-stage resume)
    stage1/                  the eight ring frames, seed depths, hole masks
    stage2/<trajectory_id>/  retained frames + the full normalized depth stack
    stage3/                  loss trace CSV and the exported splat PLY

Every path stored in the manifest is scene-relative with ``/`` separators, so
manifests from identical runs are byte-identical wherever they were produced.
"""

from __future__ import annotations

import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .backends import BackendSuite, pose_to_wire, wire_to_pose
from .fileio import atomic_write_bytes, load_depth, load_png, save_depth, save_png
from .frames import Frame
from .gaussians import (
    apply_alignment,
    downsample_points,
    estimate_alignment,
    init_gaussians,
)
from .manifest import (
    STAGE1,
    STAGE2,
    STAGE3,
    STAGES,
    STATUS_COMPLETE,
    STATUS_RUNNING,
    ManifestError,
    RunConfig,
    manifest_config,
    new_manifest,
    read_manifest,
    stage_complete,
    write_manifest,
)
from .metrics import psnr, ssim
from .optimize import optimize_scene, save_loss_trace
from .ply import export_splat, load_splat, load_splat_arrays
from .rasterizer import rasterize
from .scaffold import Scaffold, build_scaffold
from .seeding import derive_seed
from .trajectory import (
    KINDS,
    CollisionReport,
    SceneMemory,
    TrajectoryError,
    TrajectorySpec,
    run_trajectory,
)

logger = logging.getLogger(__name__)

LOCK_NAME = ".lock"
CACHE_DIR = "stage1/cache"


class LockError(RuntimeError):
    """Another process holds this scene (or a stale lock file remains)."""


class StageError(RuntimeError):
    """A stage failed; the manifest has been marked accordingly."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class SceneLayout:
    """Path arithmetic for one scene directory; keeps manifest paths relative."""

    def __init__(self, scene_dir: str | Path):
        self.root = Path(scene_dir)

    @property
    def name(self) -> str:
        return self.root.name

    def path(self, rel: str) -> Path:
        return self.root / rel

    def ensure(self, rel: str) -> Path:
        p = self.root / rel
        p.mkdir(parents=True, exist_ok=True)
        return p

    @staticmethod
    def stage1_frame(index: int) -> str:
        return f"stage1/frame_{index}.png"

    @staticmethod
    def stage1_depth(index: int) -> str:
        return f"stage1/depth_{index}.wedp"

    @staticmethod
    def stage1_mask(index: int) -> str:
        return f"stage1/mask_{index}.png"

    @staticmethod
    def stage2_frame(trajectory_id: str, index: int) -> str:
        return f"stage2/{trajectory_id}/frame_{index:03d}.png"

    @staticmethod
    def stage2_depth(trajectory_id: str, index: int) -> str:
        return f"stage2/{trajectory_id}/depth_{index:03d}.wedp"

    LOSS_TRACE = "stage3/loss_trace.csv"
    EXPORT = "stage3/scene.ply"


@contextmanager
def scene_lock(layout: SceneLayout):
    """Exclusive per-scene lock; refuses to run when the lock file exists."""
    layout.root.mkdir(parents=True, exist_ok=True)
    path = layout.path(LOCK_NAME)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(
            f"scene {layout.name!r} is locked by {path}; "
            "remove the file if no other run is active") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


# --- stage 1 ------------------------------------------------------------------

def _persist_cache_artifact(layout: SceneLayout, key: str, value) -> None:
    cache = layout.ensure(CACHE_DIR)
    if key.startswith("seed_image_"):
        save_png(cache / f"{key}.png", value)
    elif key.startswith("seed_depth_"):
        save_depth(cache / f"{key}.wedp", value)
    elif key.startswith("inter_"):
        image, mask = value
        save_png(cache / f"{key}.png", image)
        save_png(cache / f"{key}_mask.png",
                 (np.asarray(mask, bool) * np.uint8(255)))
    else:  # keep resume working even if the scaffold grows new artifact kinds
        raise ValueError(f"unknown scaffold artifact {key!r}")


def _load_stage1_cache(layout: SceneLayout) -> dict:
    cache: dict = {}
    root = layout.path(CACHE_DIR)
    if not root.is_dir():
        return cache
    for i in range(4):
        img = root / f"seed_image_{i}.png"
        if img.exists():
            cache[f"seed_image_{i}"] = load_png(img)
        dep = root / f"seed_depth_{i}.wedp"
        if dep.exists():
            cache[f"seed_depth_{i}"] = load_depth(dep)
        inter = root / f"inter_{i}.png"
        mask = root / f"inter_{i}_mask.png"
        if inter.exists() and mask.exists():
            cache[f"inter_{i}"] = (load_png(inter), load_png(mask) > 127)
    return cache


def run_stage1(layout: SceneLayout, config: RunConfig, suite: BackendSuite,
               manifest: dict) -> Scaffold:
    logger.info("stage1: building the eight-view scaffold")
    scaffold = build_scaffold(
        config.scaffold_config(), suite,
        cache=_load_stage1_cache(layout),
        on_artifact=lambda key, value: _persist_cache_artifact(layout, key, value))

    layout.ensure("stage1")
    records = []
    for f in scaffold.frames:
        rel = layout.stage1_frame(f.index)
        save_png(layout.path(rel), f.image)
        depth_rel = None
        if f.depth is not None:
            depth_rel = layout.stage1_depth(f.index)
            save_depth(layout.path(depth_rel), f.depth)
        records.append({
            "index": f.index,
            "path": rel,
            "pose": pose_to_wire(f.pose),
            "provenance": f.provenance,
            "depth_path": depth_rel,
        })
    masks = {}
    for ring_idx, mask in scaffold.masks.items():
        rel = layout.stage1_mask(ring_idx)
        save_png(layout.path(rel), np.asarray(mask, bool) * np.uint8(255))
        masks[str(ring_idx)] = rel

    manifest["stages"][STAGE1] = {
        "status": STATUS_COMPLETE,
        "depth_scale": scaffold.depth_scale,
        "median_depth": scaffold.median_depth(),
        "frames": records,
        "masks": masks,
    }
    write_manifest(layout.root, manifest)
    return scaffold


def load_scaffold(layout: SceneLayout, config: RunConfig, manifest: dict) -> Scaffold:
    record = manifest["stages"][STAGE1]
    frames = []
    for rec in record["frames"]:
        depth = None
        if rec["depth_path"] is not None:
            depth = load_depth(layout.path(rec["depth_path"]))
        frames.append(Frame(image=load_png(layout.path(rec["path"])),
                            pose=wire_to_pose(rec["pose"]),
                            provenance=rec["provenance"],
                            depth=depth,
                            index=rec["index"]))
    masks = {int(k): load_png(layout.path(rel)) > 127
             for k, rel in record["masks"].items()}
    return Scaffold(frames=frames, masks=masks,
                    depth_scale=record["depth_scale"],
                    config=config.scaffold_config())


# --- stage 2 ------------------------------------------------------------------

def _persist_trajectory(layout: SceneLayout, result) -> dict:
    tid = result.spec.trajectory_id
    layout.ensure(f"stage2/{tid}")
    frame_records = []
    for f in result.frames:
        rel = layout.stage2_frame(tid, f.index)
        save_png(layout.path(rel), f.image)
        frame_records.append({
            "index": f.index,
            "path": rel,
            "pose": pose_to_wire(f.pose),
            "provenance": f.provenance,
        })
    depth_paths = []
    for i, depth in enumerate(result.depth_stack):
        rel = layout.stage2_depth(tid, i)
        save_depth(layout.path(rel), depth)
        depth_paths.append(rel)
    report = result.report
    return {
        "trajectory_id": tid,
        "kind": result.spec.kind,
        "start_index": result.spec.start_index,
        "frame_count": result.spec.frames,
        "poses": [pose_to_wire(p) for p in result.poses],
        "batches": [{"indices": list(b.indices), "phase": b.phase,
                     "extra_condition_indices": list(b.extra_condition_indices)}
                    for b in result.batches],
        "condition_log": result.condition_log,
        "collision": {
            "crop": list(report.crop),
            "means": report.means,
            "threshold": report.threshold,
            "truncate_index": report.truncate_index,
        },
        "memory_added": result.memory_added,
        "frames": frame_records,
    }


def _load_trajectory_frames(layout: SceneLayout, record: dict) -> list:
    tid = record["trajectory_id"]
    return [Frame(image=load_png(layout.path(rec["path"])),
                  pose=wire_to_pose(rec["pose"]),
                  provenance=rec["provenance"],
                  trajectory=tid,
                  index=rec["index"])
            for rec in record["frames"]]


def run_stage2(layout: SceneLayout, config: RunConfig, suite: BackendSuite,
               scaffold: Scaffold, manifest: dict) -> None:
    """All 32 trajectories in canonical order (ring start, then kind).

    Completed trajectories found in the manifest are replayed from disk to
    rebuild the scene memory without backend calls; trajectories recorded as
    failed stay failed (rerunning them would silently change what later
    trajectories were conditioned on). Everything else runs.
    """
    record = manifest["stages"].setdefault(
        STAGE2, {"status": STATUS_RUNNING, "trajectories": [], "failures": []})
    record["status"] = STATUS_RUNNING
    done = {r["trajectory_id"]: r for r in record["trajectories"]}
    failed = {r["trajectory_id"] for r in record["failures"]}
    counts = config.frame_counts()
    median = manifest["stages"][STAGE1]["median_depth"]

    memory = SceneMemory(scaffold.frames)
    for start in range(8):
        for kind in KINDS:
            spec = TrajectorySpec(kind=kind, start_index=start,
                                  frame_count=counts[kind])
            tid = spec.trajectory_id
            if tid in done:
                memory.extend_from_trajectory(
                    _load_trajectory_frames(layout, done[tid]))
                continue
            if tid in failed:
                continue
            try:
                result = run_trajectory(
                    spec, scaffold, memory, suite, config.prompt_base,
                    config.seed,
                    median_depth=median,
                    window=config.batch_size,
                    anchor_stride=config.anchor_stride,
                    max_dynamic=config.max_dynamic,
                    opposite_deg=config.opposite_deg,
                    collision_threshold=config.collision_threshold,
                    crop_fraction=config.crop_fraction)
            except TrajectoryError as err:
                logger.warning("stage2: %s failed at batch %d: %s",
                               tid, err.batch_index, err.cause)
                record["failures"].append({
                    "trajectory_id": tid,
                    "kind": kind,
                    "start_index": start,
                    "batch_index": err.batch_index,
                    "message": str(err.cause),
                })
                write_manifest(layout.root, manifest)
                continue
            logger.info("stage2: %s kept %d/%d frames", tid,
                        len(result.frames), spec.frames)
            record["trajectories"].append(_persist_trajectory(layout, result))
            write_manifest(layout.root, manifest)

    record["status"] = STATUS_COMPLETE
    write_manifest(layout.root, manifest)


def load_all_frames(layout: SceneLayout, config: RunConfig, manifest: dict) -> list:
    """Scaffold ring plus every retained trajectory frame, generation order."""
    frames = list(load_scaffold(layout, config, manifest).frames)
    for record in manifest["stages"][STAGE2]["trajectories"]:
        frames.extend(_load_trajectory_frames(layout, record))
    return frames


# --- stage 3 ------------------------------------------------------------------

def run_stage3(layout: SceneLayout, config: RunConfig, suite: BackendSuite,
               frames: list, manifest: dict) -> None:
    logger.info("stage3: reconstructing from %d frames", len(frames))
    cloud_pred, cams_pred = suite.point_cloud.point_cloud(frames)
    known = [f.pose.center for f in frames]
    predicted = [c.center for c in cams_pred]
    alignment = estimate_alignment(frames[0].pose, cams_pred[0], known, predicted)
    cloud = apply_alignment(alignment, cloud_pred)
    cloud = downsample_points(cloud, config.gaussian_count,
                              derive_seed(config.seed, "downsample"))
    scene = init_gaussians(cloud)

    def report_progress(step: int, total: int) -> None:
        if step % 500 == 0 or step == total:
            logger.info("stage3: step %d/%d", step, total)

    opt_config = config.optimize_config()
    result = optimize_scene(scene, frames, config.optimize_steps, opt_config,
                            on_step=report_progress)

    layout.ensure("stage3")
    save_loss_trace(layout.path(layout.LOSS_TRACE), result.trace)
    export_splat(result.scene, layout.path(layout.EXPORT))
    manifest["stages"][STAGE3] = {
        "status": STATUS_COMPLETE,
        "alignment": {
            "rotation": [float(x) for x in alignment.rotation.reshape(-1)],
            "translation": [float(x) for x in alignment.translation],
            "scale": alignment.scale,
        },
        "optimizer": asdict(opt_config),
        "steps": config.optimize_steps,
        "point_count": len(cloud.points),
        "gaussian_count": len(result.scene),
        "loss_trace_path": layout.LOSS_TRACE,
        "export_path": layout.EXPORT,
    }
    write_manifest(layout.root, manifest)


# --- orchestration --------------------------------------------------------------

def _load_or_init_manifest(layout: SceneLayout, config: RunConfig | None) -> dict:
    if (layout.root / "manifest.json").exists():
        manifest = read_manifest(layout.root)
        if config is not None:
            # the endpoint is an operational knob, not a scene parameter
            stored = {k: v for k, v in manifest["config"].items() if k != "endpoint"}
            given = {k: v for k, v in config.to_dict().items() if k != "endpoint"}
            if stored != given:
                raise ManifestError(
                    f"scene {layout.name!r} was started with a different "
                    "configuration; use a fresh scene name to change it")
        return manifest
    if config is None:
        raise ManifestError(f"scene {layout.name!r} has no manifest; run stage1 first")
    layout.root.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest(layout.name, config)
    write_manifest(layout.root, manifest)
    return manifest


def run_stages(layout: SceneLayout, stages: tuple, suite_factory,
               config: RunConfig | None = None) -> dict:
    """Run the requested stages with resume; returns the final manifest.

    ``suite_factory`` maps the effective RunConfig to a BackendSuite — the
    stored config wins on resume, so backends see the original parameters.
    Completed stages are skipped. A failing stage marks ``failed_stage`` in
    the manifest, keeps every artifact already written, and raises StageError.
    """
    with scene_lock(layout):
        manifest = _load_or_init_manifest(layout, config)
        config = manifest_config(manifest)
        suite = suite_factory(config)
        scaffold = None
        for stage in stages:
            if stage_complete(manifest, stage):
                logger.info("%s: already complete, skipping", stage)
                continue
            try:
                if stage == STAGE1:
                    scaffold = run_stage1(layout, config, suite, manifest)
                elif stage == STAGE2:
                    if not stage_complete(manifest, STAGE1):
                        raise ManifestError("stage2 requires a completed stage1")
                    if scaffold is None:
                        scaffold = load_scaffold(layout, config, manifest)
                    run_stage2(layout, config, suite, scaffold, manifest)
                elif stage == STAGE3:
                    if not stage_complete(manifest, STAGE2):
                        raise ManifestError("stage3 requires a completed stage2")
                    frames = load_all_frames(layout, config, manifest)
                    run_stage3(layout, config, suite, frames, manifest)
                else:
                    raise ValueError(f"unknown stage {stage!r}")
            except Exception as exc:
                manifest["failed_stage"] = stage
                write_manifest(layout.root, manifest)
                raise StageError(stage, exc) from exc
            if manifest.get("failed_stage") == stage:
                manifest["failed_stage"] = None
                write_manifest(layout.root, manifest)
        return manifest


def run_scene(layout: SceneLayout, config: RunConfig, suite: BackendSuite) -> dict:
    return run_stages(layout, STAGES, lambda _cfg: suite, config=config)


# --- render -------------------------------------------------------------------

def load_camera_path(path: str | Path) -> list:
    data = json.loads(Path(path).read_text("utf-8"))
    if not isinstance(data, list):
        raise ValueError("camera path file must be a JSON array of pose records")
    return [wire_to_pose(entry) for entry in data]


def render_path(layout: SceneLayout, camera_path: list, out_dir: str | Path,
                gt_dir: str | Path | None = None) -> dict:
    """Render the exported splat along a camera path; returns the report.

    With ``gt_dir`` set, each render is scored against the same-named PNG in
    that directory. Infinite PSNR (bit-identical images) is stored as null —
    the report stays strict JSON.
    """
    manifest = read_manifest(layout.root)
    if not stage_complete(manifest, STAGE3):
        raise ManifestError(f"scene {layout.name!r} has no exported splat")
    scene = load_splat(layout.path(manifest["stages"][STAGE3]["export_path"]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    entries = []
    for i, pose in enumerate(camera_path):
        target = rasterize(scene, pose)
        image = (np.clip(target.image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        name = f"render_{i:03d}.png"
        save_png(out / name, image)
        entry = {"image": name}
        if gt_dir is not None:
            gt = load_png(Path(gt_dir) / name).astype(np.float64) / 255.0
            rendered = image.astype(np.float64) / 255.0
            p = psnr(rendered, gt)
            entry["psnr"] = None if np.isinf(p) else float(p)
            entry["ssim"] = float(ssim(rendered, gt))
        entries.append(entry)

    report = {"scene": layout.name, "count": len(entries), "frames": entries}
    if gt_dir is not None:
        scored = [e["psnr"] for e in entries if e.get("psnr") is not None]
        report["mean_psnr"] = float(np.mean(scored)) if scored else None
        ssims = [e["ssim"] for e in entries if "ssim" in e]
        report["mean_ssim"] = float(np.mean(ssims)) if ssims else None
    atomic_write_bytes(out / "report.json",
                       (json.dumps(report, sort_keys=True, indent=1) + "\n").encode())
    return report


# --- validate -----------------------------------------------------------------

def _check_rotation(matrix: np.ndarray) -> bool:
    if not np.all(np.isfinite(matrix)):
        return False
    return (np.abs(matrix @ matrix.T - np.eye(3)).max() < 1e-6
            and np.linalg.det(matrix) > 0.0)


def validate_scene(layout: SceneLayout) -> list:
    """Check manifest invariants; returns a list of violation dicts."""
    violations = []

    def missing(rel: str, where: str):
        if not layout.path(rel).exists():
            violations.append({"check": "missing-file", "where": where,
                               "message": f"{rel} does not exist"})
            return True
        return False

    def check_pose(wire: dict, where: str):
        rotation = np.asarray(wire["r"], dtype=np.float64).reshape(3, 3)
        if not _check_rotation(rotation):
            violations.append({"check": "pose-orthonormality", "where": where,
                               "message": "rotation is not orthonormal"})

    try:
        manifest = read_manifest(layout.root)
    except ManifestError as exc:
        return [{"check": "manifest", "where": str(layout.root), "message": str(exc)}]

    stage1 = manifest["stages"].get(STAGE1)
    if stage1 is not None:
        for rec in stage1["frames"]:
            where = f"stage1 frame {rec['index']}"
            missing(rec["path"], where)
            if rec["depth_path"] is not None:
                missing(rec["depth_path"], where)
            check_pose(rec["pose"], where)
        for ring, rel in stage1["masks"].items():
            missing(rel, f"stage1 mask {ring}")

    stage2 = manifest["stages"].get(STAGE2)
    if stage2 is not None:
        for record in stage2["trajectories"]:
            tid = record["trajectory_id"]
            for rec in record["frames"]:
                missing(rec["path"], f"{tid} frame {rec['index']}")
                check_pose(rec["pose"], f"{tid} frame {rec['index']}")
            for wire in record["poses"]:
                check_pose(wire, f"{tid} planned pose")
            _check_collision_record(layout, record, violations)

    stage3 = manifest["stages"].get(STAGE3)
    if stage3 is not None:
        missing(stage3["loss_trace_path"], "stage3 loss trace")
        missing(stage3["export_path"], "stage3 export")
        rotation = np.asarray(stage3["alignment"]["rotation"]).reshape(3, 3)
        if not _check_rotation(rotation):
            violations.append({"check": "pose-orthonormality", "where": "stage3 alignment",
                               "message": "alignment rotation is not orthonormal"})
    return violations


def _check_collision_record(layout: SceneLayout, record: dict, violations: list) -> None:
    """Recompute crop means from the stored depth stack; exact match required."""
    tid = record["trajectory_id"]
    collision = record["collision"]
    depths = []
    for i in range(record["frame_count"]):
        rel = layout.stage2_depth(tid, i)
        if not layout.path(rel).exists():
            violations.append({"check": "missing-file", "where": f"{tid} depth {i}",
                               "message": f"{rel} does not exist"})
            return
        depths.append(load_depth(layout.path(rel), normalized=True))
    r0, r1, c0, c1 = collision["crop"]
    means = [float(np.mean(d.values[r0:r1, c0:c1], dtype=np.float64)) for d in depths]
    if means != collision["means"]:
        violations.append({
            "check": "collision-consistency", "where": tid,
            "message": "stored crop means do not match the stored depth stack"})
        return
    report = CollisionReport(crop=tuple(collision["crop"]), means=means,
                             threshold=collision["threshold"],
                             truncate_index=collision["truncate_index"])
    expected = next((i for i, m in enumerate(means) if m < collision["threshold"]), None)
    if expected != collision["truncate_index"] or report.retained != len(record["frames"]):
        violations.append({
            "check": "collision-consistency", "where": tid,
            "message": "truncation index disagrees with the stored means"})


# --- export -------------------------------------------------------------------

def export_scene(layout: SceneLayout, dest: str | Path) -> int:
    """Copy the exported splat to ``dest`` after verifying it parses; returns
    the Gaussian count."""
    manifest = read_manifest(layout.root)
    if not stage_complete(manifest, STAGE3):
        raise ManifestError(f"scene {layout.name!r} has no exported splat")
    src = layout.path(manifest["stages"][STAGE3]["export_path"])
    arrays = load_splat_arrays(src)
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(dest, src.read_bytes())
    return len(arrays)
