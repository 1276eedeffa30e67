"""Stage 2: iterative video trajectories expanding coverage away from the scaffold.

Four path kinds per scaffold start frame, generated in two phases per
trajectory: anchor frames first (every ``anchor_stride``-th pose plus the
last), then the in-between frames in windows that also re-condition on the
bracketing anchors. A growing scene memory supplies the dynamic condition
frames; collision truncation drops everything from the first frame whose
center-crop mean normalized depth falls under the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import BackendSuite, ConditionFrame, TargetView
from .frames import PROVENANCE_ANCHOR, PROVENANCE_INTERPOLATED, Frame
from .geometry import (
    CameraPose,
    DepthMap,
    forward_angle_deg,
    plucker_image,
    rot_x,
    rot_y,
    rotation_geodesic_deg,
)
from .scaffold import Scaffold
from .seeding import derive_seed

KIND_ZOOM_IN = "zoom_in"
KIND_ROTATE_LEFT = "rotate_left"
KIND_ROTATE_RIGHT = "rotate_right"
KIND_ELEVATE_UP = "elevate_up"
KINDS = (KIND_ZOOM_IN, KIND_ROTATE_LEFT, KIND_ROTATE_RIGHT, KIND_ELEVATE_UP)

DEFAULT_FRAME_COUNTS = {
    KIND_ZOOM_IN: 44,
    KIND_ROTATE_LEFT: 134,
    KIND_ROTATE_RIGHT: 134,
    KIND_ELEVATE_UP: 44,
}

PHASE_ANCHOR = "anchor"
PHASE_INTERP = "interp"


class TrajectoryError(RuntimeError):
    """A trajectory aborted mid-generation; partial frames are attached."""

    def __init__(self, trajectory_id: str, batch_index: int, cause: Exception,
                 partial_frames: list):
        super().__init__(f"{trajectory_id} failed at batch {batch_index}: {cause}")
        self.trajectory_id = trajectory_id
        self.batch_index = batch_index
        self.cause = cause
        self.partial_frames = partial_frames


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str
    start_index: int  # scaffold ring index, 0..7
    frame_count: int | None = None  # None -> kind default
    zoom_fraction: float = 0.45
    pivot_fraction: float = 0.8
    arc_sweep_deg: float = 90.0
    elevate_height: float = 0.5
    pitch_down_deg: float = 30.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if not (0 <= self.start_index < 8):
            raise ValueError("start_index must be a scaffold ring index (0..7)")
        if self.frames < 2:
            raise ValueError("a trajectory needs at least 2 frames")

    @property
    def frames(self) -> int:
        return self.frame_count if self.frame_count is not None else DEFAULT_FRAME_COUNTS[self.kind]

    @property
    def trajectory_id(self) -> str:
        return f"s{self.start_index}_{self.kind}"


def trajectory_poses(spec: TrajectorySpec, start_pose: CameraPose,
                     median_depth: float) -> list[CameraPose]:
    """Camera path for one trajectory; pose 0 is exactly the start pose."""
    n = spec.frames
    c0 = start_pose.center
    r0 = start_pose.rotation
    f0 = start_pose.forward
    intr = start_pose.intrinsics
    ts = np.arange(n, dtype=np.float64) / (n - 1)

    poses = []
    if spec.kind == KIND_ZOOM_IN:
        extent = spec.zoom_fraction * median_depth
        for t in ts:
            poses.append(CameraPose(rotation=r0, center=c0 + f0 * (extent * t),
                                    intrinsics=intr))
    elif spec.kind in (KIND_ROTATE_LEFT, KIND_ROTATE_RIGHT):
        sign = 1.0 if spec.kind == KIND_ROTATE_RIGHT else -1.0
        pivot = c0 + f0 * (spec.pivot_fraction * median_depth)
        v0 = c0 - pivot
        for t in ts:
            ry = rot_y(sign * spec.arc_sweep_deg * t)
            poses.append(CameraPose(rotation=ry @ r0, center=pivot + ry @ v0,
                                    intrinsics=intr))
    else:  # elevate up, look down
        up = np.array([0.0, 1.0, 0.0])
        for t in ts:
            poses.append(CameraPose(rotation=r0 @ rot_x(spec.pitch_down_deg * t),
                                    center=c0 + up * (spec.elevate_height * t),
                                    intrinsics=intr))
    return poses


@dataclass(frozen=True)
class Batch:
    indices: tuple  # target frame indices, ascending
    phase: str  # anchor | interp
    extra_condition_indices: tuple = ()  # bracketing anchors, interp only

    def __post_init__(self):
        if self.phase not in (PHASE_ANCHOR, PHASE_INTERP):
            raise ValueError(f"unknown phase {self.phase!r}")


def schedule_batches(n_frames: int, window: int = 21, anchor_stride: int = 7) -> list[Batch]:
    """Two-phase batching: anchor indices (every stride-th plus the last) in
    windows first, then the remaining indices in consecutive windows, each
    listing its bracketing anchors as mandatory extra conditions.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if window < 2:
        raise ValueError("window must fit an anchor pair")
    anchors = sorted(set(range(0, n_frames, anchor_stride)) | {n_frames - 1})
    batches = [Batch(indices=tuple(anchors[i:i + window]), phase=PHASE_ANCHOR)
               for i in range(0, len(anchors), window)]
    anchor_set = set(anchors)
    rest = [i for i in range(n_frames) if i not in anchor_set]
    for i in range(0, len(rest), window):
        chunk = rest[i:i + window]
        lo, hi = chunk[0], chunk[-1]
        prev = max(a for a in anchors if a <= lo)
        nxt = min(a for a in anchors if a >= hi)
        extras = tuple(a for a in anchors if prev <= a <= nxt)
        batches.append(Batch(indices=tuple(chunk), phase=PHASE_INTERP,
                             extra_condition_indices=extras))
    return batches


class SceneMemory:
    """Conditioning pool: the fixed scaffold ring plus frames kept from
    completed trajectories (minus each trajectory's first two)."""

    def __init__(self, scaffold_frames: list):
        if len(scaffold_frames) != 8:
            raise ValueError("scene memory is seeded with the eight scaffold frames")
        self.scaffold = tuple(scaffold_frames)
        self.dynamic: list = []

    def extend_from_trajectory(self, retained_frames: list) -> int:
        """Insert a finished trajectory's retained frames, skipping its first
        two. Called once per trajectory so insertion is atomic."""
        added = retained_frames[2:]
        self.dynamic.extend(added)
        return len(added)

    def __len__(self):
        return len(self.scaffold) + len(self.dynamic)


@dataclass
class ConditionSet:
    frames: list  # scaffold prefix then chosen dynamic frames
    n_scaffold: int
    dynamic_indices: tuple  # insertion indices into memory.dynamic

    def __post_init__(self):
        if self.n_scaffold != 8:
            raise ValueError("condition sets start with the eight scaffold frames")
        if len(self.frames) != self.n_scaffold + len(self.dynamic_indices):
            raise ValueError("condition set size mismatch")


def select_conditions(memory: SceneMemory, start_pose: CameraPose,
                      batch_poses: list, max_dynamic: int = 5,
                      opposite_deg: float = 120.0) -> ConditionSet:
    """Scaffold prefix plus the top-scoring dynamic frames.

    Candidates facing more than ``opposite_deg`` away from the start pose are
    discarded; the rest are scored by their minimum rotation distance to any
    batch target and the lowest five win, insertion order breaking ties.
    """
    candidates = [
        (i, f) for i, f in enumerate(memory.dynamic)
        if forward_angle_deg(f.pose.rotation, start_pose.rotation) <= opposite_deg
    ]
    scored = []
    for i, f in candidates:
        score = min(rotation_geodesic_deg(f.pose.rotation, p.rotation) for p in batch_poses)
        scored.append((score, i, f))
    scored.sort(key=lambda s: (s[0], s[1]))
    chosen = scored[:max_dynamic]
    return ConditionSet(
        frames=list(memory.scaffold) + [f for _, _, f in chosen],
        n_scaffold=len(memory.scaffold),
        dynamic_indices=tuple(i for _, i, _ in chosen),
    )


@dataclass
class CollisionReport:
    crop: tuple  # (row0, row1, col0, col1), half-open
    means: list  # per-frame center-crop mean of normalized depth
    threshold: float
    truncate_index: int | None  # first frame below threshold, None if clean

    @property
    def retained(self) -> int:
        return self.truncate_index if self.truncate_index is not None else len(self.means)


def collision_crop(height: int, width: int, crop_fraction: float = 0.2) -> tuple:
    ch = int(round(crop_fraction * height))
    cw = int(round(crop_fraction * width))
    r0 = (height - ch) // 2
    c0 = (width - cw) // 2
    return (r0, r0 + ch, c0, c0 + cw)


def collision_truncate(depths: list, threshold: float = 0.4,
                       crop_fraction: float = 0.2) -> CollisionReport:
    """Find the first frame whose center-crop mean normalized depth dips
    below the threshold; everything from it onward is dropped."""
    if not depths:
        raise ValueError("empty depth stack")
    for d in depths:
        if not d.normalized:
            raise ValueError("collision detection expects normalized video depth")
    h, w = depths[0].shape
    r0, r1, c0, c1 = collision_crop(h, w, crop_fraction)
    means = [float(np.mean(d.values[r0:r1, c0:c1], dtype=np.float64)) for d in depths]
    truncate_index = next((i for i, m in enumerate(means) if m < threshold), None)
    return CollisionReport(crop=(r0, r1, c0, c1), means=means, threshold=threshold,
                           truncate_index=truncate_index)


@dataclass
class TrajectoryResult:
    spec: TrajectorySpec
    poses: list  # all planned poses
    batches: list  # list[Batch]
    frames: list  # retained Frames only
    report: CollisionReport
    depth_stack: list  # normalized DepthMap per generated frame (full length)
    condition_log: list  # per batch: dict with condition bookkeeping
    memory_added: int


def run_trajectory(spec: TrajectorySpec, scaffold: Scaffold, memory: SceneMemory,
                   suite: BackendSuite, prompt: str, seed: int, *,
                   median_depth: float | None = None, window: int = 21,
                   anchor_stride: int = 7, max_dynamic: int = 5,
                   opposite_deg: float = 120.0, collision_threshold: float = 0.4,
                   crop_fraction: float = 0.2) -> TrajectoryResult:
    """Generate one trajectory end to end.

    Memory insertion happens only after the whole trajectory (including
    collision truncation) succeeds; on backend failure the partial frames ride
    along in TrajectoryError and memory is untouched.
    """
    start_frame = scaffold.frames[spec.start_index]
    med = scaffold.median_depth() if median_depth is None else median_depth
    poses = trajectory_poses(spec, start_frame.pose, med)
    batches = schedule_batches(spec.frames, window=window, anchor_stride=anchor_stride)
    tid = spec.trajectory_id

    slots: dict[int, Frame] = {}
    condition_log = []
    for b_idx, batch in enumerate(batches):
        batch_poses = [poses[i] for i in batch.indices]
        cset = select_conditions(memory, start_frame.pose, batch_poses,
                                 max_dynamic=max_dynamic, opposite_deg=opposite_deg)
        cond_frames = list(cset.frames)
        for a in batch.extra_condition_indices:
            cond_frames.append(slots[a])  # anchors generated in phase one
        conditions = [ConditionFrame(image=f.image, pose=f.pose,
                                     plucker=plucker_image(f.pose)) for f in cond_frames]
        targets = [TargetView(pose=p, plucker=plucker_image(p)) for p in batch_poses]
        try:
            images = suite.video.generate_video(conditions, targets, prompt,
                                                derive_seed(seed, "video", tid, b_idx))
        except Exception as exc:  # noqa: BLE001
            partial = [slots[i] for i in sorted(slots)]
            raise TrajectoryError(tid, b_idx, exc, partial) from exc
        provenance = PROVENANCE_ANCHOR if batch.phase == PHASE_ANCHOR else PROVENANCE_INTERPOLATED
        for idx, img in zip(batch.indices, images):
            slots[idx] = Frame(image=img, pose=poses[idx], provenance=provenance,
                               trajectory=tid, index=idx)
        condition_log.append({
            "batch": b_idx,
            "phase": batch.phase,
            "targets": list(batch.indices),
            "dynamic_conditions": list(cset.dynamic_indices),
            "anchor_conditions": list(batch.extra_condition_indices),
        })

    generated = [slots[i] for i in range(spec.frames)]
    depth_stack = suite.video_depth.video_depth([f.image for f in generated],
                                                poses=[f.pose for f in generated])
    report = collision_truncate(depth_stack, threshold=collision_threshold,
                                crop_fraction=crop_fraction)
    retained = generated[: report.retained]
    added = memory.extend_from_trajectory(retained)
    return TrajectoryResult(spec=spec, poses=poses, batches=batches, frames=retained,
                            report=report, depth_stack=depth_stack,
                            condition_log=condition_log, memory_added=added)


@dataclass
class Stage2Result:
    results: list  # TrajectoryResult in generation order
    failures: list  # (TrajectorySpec, TrajectoryError)
    memory: SceneMemory

    @property
    def frames(self) -> list:
        """Scaffold ring plus every retained trajectory frame, generation order."""
        out = list(self.memory.scaffold)
        for r in self.results:
            out.extend(r.frames)
        return out


def run_stage2(scaffold: Scaffold, suite: BackendSuite, prompt: str, seed: int, *,
               frame_counts: dict | None = None, window: int = 21,
               anchor_stride: int = 7, max_dynamic: int = 5,
               opposite_deg: float = 120.0, collision_threshold: float = 0.4,
               crop_fraction: float = 0.2, spec_overrides: dict | None = None,
               on_result=None) -> Stage2Result:
    """All 32 trajectories: scaffold starts in clockwise (yaw-ascending) ring
    order, kinds in fixed order per start. A failed trajectory is recorded and
    skipped; the rest continue.
    """
    counts = dict(DEFAULT_FRAME_COUNTS)
    if frame_counts:
        counts.update(frame_counts)
    overrides = spec_overrides or {}
    memory = SceneMemory(scaffold.frames)
    median = scaffold.median_depth()
    results, failures = [], []
    for start in range(8):
        for kind in KINDS:
            spec = TrajectorySpec(kind=kind, start_index=start,
                                  frame_count=counts[kind], **overrides)
            try:
                res = run_trajectory(spec, scaffold, memory, suite, prompt, seed,
                                     median_depth=median, window=window,
                                     anchor_stride=anchor_stride, max_dynamic=max_dynamic,
                                     opposite_deg=opposite_deg,
                                     collision_threshold=collision_threshold,
                                     crop_fraction=crop_fraction)
            except TrajectoryError as err:
                failures.append((spec, err))
                continue
            results.append(res)
            if on_result is not None:
                on_result(res)
    return Stage2Result(results=results, failures=failures, memory=memory)
