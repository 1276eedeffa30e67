"""Regenerates the committed viewer fixtures from the exporter.

Everything the browser tests compare against is produced here by the Python
package: golden PLY files, 256x256 CPU-rasterizer reference renders, and a
scripted navigation trace with reference poses from an independent
integrator that mirrors the viewer's documented semantics (1/120 s steps,
0.005 rad/px look sensitivity, +/-89 deg pitch clamp, wheel speed factor
2^(-delta/500) clamped to [0.01, 100]).

Run from the repository root after installing the package:

    python frontend/fixtures/generate.py
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from wex.fileio import save_png
from wex.gaussians import GaussianScene
from wex.geometry import CameraPose, intrinsics_from_fov, rot_x, rot_y
from wex.ply import export_splat, load_splat, load_splat_arrays
from wex.rasterizer import rasterize

HERE = Path(__file__).resolve().parent

RENDER_SIZE = 256
RENDER_FOV = 60.0


# --- golden assets ----------------------------------------------------------

def golden_one() -> GaussianScene:
    # hand-picked values, mostly exactly representable in float32
    return GaussianScene(
        means=np.array([[0.5, -0.25, 2.0]]),
        rotations=np.array([[0.8, 0.1, -0.3, 0.5]]),
        log_scales=np.array([[-1.5, -1.0, -0.5]]),
        opacity_logits=np.array([0.75]),
        colors=np.array([[0.9, 0.3, 0.125]]),
    )


def golden_ten() -> GaussianScene:
    rng = np.random.default_rng(7)
    n = 10
    quats = rng.normal(size=(n, 4)) + np.array([2.0, 0, 0, 0])
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianScene(
        means=np.stack([
            rng.uniform(-2.0, 2.0, n),
            rng.uniform(-1.5, 1.5, n),
            rng.uniform(2.0, 6.0, n),
        ], axis=1),
        rotations=quats,
        log_scales=rng.uniform(math.log(0.15), math.log(0.7), (n, 3)),
        opacity_logits=rng.uniform(0.0, 2.5, n),
        colors=rng.uniform(0.05, 0.95, (n, 3)),
    )


def write_golden(scene: GaussianScene, stem: str, with_json: bool) -> Path:
    path = HERE / f"{stem}.ply"
    export_splat(scene, path)
    if with_json:
        # expected values come from reading the file back, so the JSON is a
        # second decode route rather than a copy of the inputs
        table = load_splat_arrays(path).astype(np.float64)
        back = load_splat(path)
        expected = {
            "count": len(back),
            "means": back.means.tolist(),
            "quaternions": back.rotations.tolist(),
            "log_scales": back.log_scales.tolist(),
            "opacity_logits": back.opacity_logits.tolist(),
            "sh_dc": table[:, 3:6].tolist(),
            "colors": back.colors.tolist(),
        }
        (HERE / f"{stem}.json").write_text(json.dumps(expected, indent=1))
    return path


# --- reference renders -------------------------------------------------------

RENDER_POSES = [
    ("front", rot_y(0.0), (0.0, 0.0, 0.0)),
    ("orbit", rot_y(25.0) @ rot_x(-10.0), (0.3, -0.2, -0.5)),
    ("behind", rot_y(160.0) @ rot_x(5.0), (0.5, 0.1, 7.5)),
]


def write_renders(scene_path: Path) -> None:
    scene = load_splat(scene_path)
    intr = intrinsics_from_fov(RENDER_FOV, RENDER_SIZE, RENDER_SIZE)
    meta = []
    for name, rotation, center in RENDER_POSES:
        pose = CameraPose(rotation=rotation, center=np.asarray(center), intrinsics=intr)
        target = rasterize(scene, pose)
        image = (np.clip(target.image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        png = f"render_{name}.png"
        save_png(HERE / png, image)
        meta.append({
            "name": name,
            "png": png,
            "asset": scene_path.name,
            "rotation": np.asarray(pose.rotation).reshape(-1).tolist(),
            "center": list(map(float, center)),
            "fov_deg": RENDER_FOV,
            "width": RENDER_SIZE,
            "height": RENDER_SIZE,
        })
    (HERE / "renders.json").write_text(json.dumps(meta, indent=1))


# --- navigation reference -----------------------------------------------------

STEP_DT = 1.0 / 120.0
PITCH_LIMIT = math.radians(89.0)
SPEED_MIN, SPEED_MAX = 0.01, 100.0
LOOK_SENSITIVITY = 0.005


def _rot_y_rad(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x_rad(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _reorthonormalize(r: np.ndarray) -> np.ndarray:
    f = r[:, 2] / np.linalg.norm(r[:, 2])
    u = r[:, 1] - (r[:, 1] @ f) * f
    u /= np.linalg.norm(u)
    return np.stack([np.cross(u, f), u, f], axis=1)


class _Nav:
    def __init__(self):
        self.yaw = 0.0
        self.pitch = 0.0
        self.center = np.zeros(3)
        self.speed = 1.0
        self.keys: set[str] = set()

    def rotation(self) -> np.ndarray:
        return _reorthonormalize(_rot_y_rad(self.yaw) @ _rot_x_rad(self.pitch))

    def apply(self, event: dict) -> None:
        if event["type"] == "key":
            key = event["key"].lower()
            if event["down"]:
                self.keys.add(key)
            else:
                self.keys.discard(key)
        elif event["type"] == "mouse":
            self.yaw += event["dx"] * LOOK_SENSITIVITY
            self.pitch += event["dy"] * LOOK_SENSITIVITY
            self.pitch = min(PITCH_LIMIT, max(-PITCH_LIMIT, self.pitch))
        else:
            self.speed *= 2.0 ** (-event["delta"] / 500.0)
            self.speed = min(SPEED_MAX, max(SPEED_MIN, self.speed))

    def step(self) -> None:
        forward = ("w" in self.keys) - ("s" in self.keys)
        strafe = ("d" in self.keys) - ("a" in self.keys)
        if not forward and not strafe:
            return
        r = self.rotation()
        move = forward * r[:, 2] + strafe * r[:, 0]
        self.center = self.center + move * (self.speed * STEP_DT)

    def snapshot(self) -> dict:
        return {
            "yaw": self.yaw,
            "pitch": self.pitch,
            "center": self.center.tolist(),
            "move_speed": self.speed,
            "rotation": self.rotation().reshape(-1).tolist(),
        }


NAV_TRACE = [
    {"event": {"type": "key", "key": "w", "down": True}},
    {"steps": 120},  # exactly one second at the default speed
    {"event": {"type": "key", "key": "w", "down": False}},
    {"event": {"type": "mouse", "dx": 150.0, "dy": -60.0}},
    {"event": {"type": "wheel", "delta": -500.0}},  # speed doubles
    {"event": {"type": "key", "key": "W", "down": True}},  # case-insensitive
    {"event": {"type": "key", "key": "d", "down": True}},
    {"steps": 60},
    {"event": {"type": "key", "key": "W", "down": False}},
    {"event": {"type": "key", "key": "d", "down": False}},
    {"event": {"type": "mouse", "dx": -40.0, "dy": 5000.0}},  # pitch clamps
    {"event": {"type": "key", "key": "s", "down": True}},
    {"steps": 30},
    {"event": {"type": "key", "key": "s", "down": False}},
    {"event": {"type": "wheel", "delta": 20000.0}},  # speed clamps to floor
]

NAV_CHECKPOINTS = [3, 10, 15]


def write_nav_trace() -> None:
    nav = _Nav()
    checkpoints = []
    boundaries = set(NAV_CHECKPOINTS)
    for i, entry in enumerate(NAV_TRACE):
        if "event" in entry:
            nav.apply(entry["event"])
        else:
            for _ in range(entry["steps"]):
                nav.step()
        if i + 1 in boundaries:
            checkpoints.append({"after": i + 1, **nav.snapshot()})
    payload = {"trace": NAV_TRACE, "checkpoints": checkpoints}
    (HERE / "nav_trace.json").write_text(json.dumps(payload, indent=1))


def main() -> None:
    write_golden(golden_one(), "golden_1", with_json=True)
    ten = write_golden(golden_ten(), "golden_10", with_json=False)
    write_renders(ten)
    write_nav_trace()
    print(f"fixtures written to {HERE}")


if __name__ == "__main__":
    main()
