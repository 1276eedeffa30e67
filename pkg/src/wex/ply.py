"""Binary PLY export in the de-facto splat layout.

One little-endian float32 vertex per Gaussian: position, color as the
zeroth-order spherical-harmonic coefficient, opacity logit, log scales, and a
w-first quaternion — 14 properties, 56 bytes. Third-party splat viewers load
the same layout.
"""

from __future__ import annotations

import numpy as np

from .fileio import atomic_write_bytes
from .gaussians import GaussianScene

SH_C0 = 0.2820948

PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)


class ExportError(RuntimeError):
    pass


def _header(count: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    lines += [f"property float {name}" for name in PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def splat_arrays(scene: GaussianScene) -> np.ndarray:
    """Vertex table (N, 14) float32 in property order."""
    n = len(scene)
    table = np.empty((n, len(PROPERTIES)), dtype="<f4")
    table[:, 0:3] = scene.means
    table[:, 3:6] = (scene.colors - 0.5) / SH_C0
    table[:, 6] = scene.opacity_logits
    table[:, 7:10] = scene.log_scales
    table[:, 10:14] = scene.rotations
    return table


def export_splat(scene: GaussianScene, path) -> None:
    if len(scene) == 0:
        raise ValueError("refusing to export an empty scene")
    payload = _header(len(scene)) + splat_arrays(scene).tobytes()
    try:
        atomic_write_bytes(path, payload)
    except OSError as exc:
        raise ExportError(f"failed to write {path}: {exc}") from exc


def load_splat_arrays(path) -> np.ndarray:
    """Raw (N, 14) float32 vertex table, exactly as stored."""
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise ValueError("not a PLY file")
    header = blob[:end].decode("ascii").splitlines()
    if header[1] != "format binary_little_endian 1.0":
        raise ValueError("unsupported PLY format")
    if not header[2].startswith("element vertex "):
        raise ValueError("missing vertex element")
    count = int(header[2].split()[-1])
    props = [ln.split()[-1] for ln in header[3:] if ln.startswith("property")]
    if tuple(props) != PROPERTIES:
        raise ValueError("unexpected property layout")
    body = blob[end + len(b"end_header\n"):]
    expected = count * len(PROPERTIES) * 4
    if len(body) != expected:
        raise ValueError(f"vertex payload is {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype="<f4").reshape(count, len(PROPERTIES))


def load_splat(path) -> GaussianScene:
    """Decode a splat PLY back into a scene.

    Colors run through the inverse SH-DC map and are clipped to [0,1]; the
    affine round trip can overshoot by a float32 ulp.
    """
    table = load_splat_arrays(path).astype(np.float64)
    colors = np.clip(table[:, 3:6] * SH_C0 + 0.5, 0.0, 1.0)
    return GaussianScene(
        means=table[:, 0:3],
        rotations=table[:, 10:14],
        log_scales=table[:, 7:10],
        opacity_logits=table[:, 6],
        colors=colors,
    )
