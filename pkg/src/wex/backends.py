"""Generative-model backend contracts, the HTTP wire protocol, and the client.

Every stage talks to models only through these interfaces so the synthetic
oracle and real servers are interchangeable. Wire payloads are JSON with
base64 little-endian binary; poses travel as
``{r: 9 row-major, t: 3, fx, fy, cx, cy, w, h}``.
"""

from __future__ import annotations

import abc
import base64
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field

import httpx
import numpy as np

from .frames import Frame
from .geometry import CameraPose, ColoredPointCloud, DepthMap, Intrinsics


class BackendError(Exception):
    """Typed backend failure; code follows the wire error schema."""

    def __init__(self, code: str, message: str, attempts: int | None = None,
                 retryable: bool = False):
        super().__init__(f"[{code}] {message}" + (f" (after {attempts} attempts)" if attempts else ""))
        self.code = code
        self.message = message
        self.attempts = attempts
        self.retryable = retryable


@dataclass
class ConditionFrame:
    """A conditioning view handed to the video backend."""

    image: np.ndarray  # (H, W, 3) uint8
    pose: CameraPose
    plucker: np.ndarray  # (H, W, 6)


@dataclass
class TargetView:
    pose: CameraPose
    plucker: np.ndarray  # (H, W, 6)


class TextToImageBackend(abc.ABC):
    @abc.abstractmethod
    def t2i(self, prompt: str, width: int, height: int, seed: int) -> np.ndarray:
        """Synthesize an image; pure function of the request."""


class InpaintBackend(abc.ABC):
    @abc.abstractmethod
    def inpaint(self, image: np.ndarray, mask: np.ndarray, prompt: str, seed: int) -> np.ndarray:
        """Fill mask-true pixels; mask-false pixels come back byte-identical."""


class VideoBackend(abc.ABC):
    MAX_TARGETS = 21

    @abc.abstractmethod
    def generate_video(self, conditions: list[ConditionFrame], targets: list[TargetView],
                       prompt: str, seed: int) -> list[np.ndarray]:
        """One image per target view, conditioned on the given frames."""

    def check_window(self, conditions, targets):
        if not conditions:
            raise BackendError("invalid-argument", "need at least one condition frame")
        if not (1 <= len(targets) <= self.MAX_TARGETS):
            raise BackendError(
                "invalid-argument",
                f"targets per call must be in [1, {self.MAX_TARGETS}], got {len(targets)}",
            )


class DepthBackend(abc.ABC):
    @abc.abstractmethod
    def mono_depth(self, image: np.ndarray, pose: CameraPose | None = None) -> DepthMap:
        """Metric depth for one image; pose is a hint only the oracle uses."""


class VideoDepthBackend(abc.ABC):
    @abc.abstractmethod
    def video_depth(self, images: list[np.ndarray],
                    poses: list[CameraPose] | None = None) -> list[DepthMap]:
        """Per-frame depth, min-max normalized jointly over the whole video."""


class PointCloudBackend(abc.ABC):
    @abc.abstractmethod
    def point_cloud(self, frames: list[Frame]) -> tuple[ColoredPointCloud, list[CameraPose]]:
        """Colored cloud plus per-frame cameras, in the estimator's own frame."""


@dataclass
class BackendSuite:
    t2i: TextToImageBackend
    inpaint: InpaintBackend
    video: VideoBackend
    depth: DepthBackend
    video_depth: VideoDepthBackend
    point_cloud: PointCloudBackend


def normalize_video_depth(raw: list[np.ndarray]) -> list[DepthMap]:
    """Joint min-max normalization across a whole clip; flat clip -> all 0.5."""
    if not raw:
        return []
    stack = [np.asarray(d, dtype=np.float64) for d in raw]
    lo = min(float(d.min()) for d in stack)
    hi = max(float(d.max()) for d in stack)
    if hi - lo <= 0.0:
        return [DepthMap(np.full(d.shape, 0.5, dtype=np.float32), normalized=True) for d in stack]
    return [DepthMap(((d - lo) / (hi - lo)).astype(np.float32), normalized=True) for d in stack]


# --- wire encoding -----------------------------------------------------------

def pose_to_wire(pose: CameraPose) -> dict:
    k = pose.intrinsics
    return {
        "r": [float(x) for x in pose.rotation.reshape(-1)],
        "t": [float(x) for x in pose.center],
        "fx": k.fx,
        "fy": k.fy,
        "cx": k.cx,
        "cy": k.cy,
        "w": k.width,
        "h": k.height,
    }


def wire_to_pose(d: dict) -> CameraPose:
    intr = Intrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"], width=d["w"], height=d["h"])
    return CameraPose(
        rotation=np.array(d["r"], dtype=np.float64).reshape(3, 3),
        center=np.array(d["t"], dtype=np.float64),
        intrinsics=intr,
    )


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(s: str) -> bytes:
    return base64.b64decode(s.encode("ascii"))


def f32_b64(arr: np.ndarray) -> str:
    return b64(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def b64_f32(s: str, shape) -> np.ndarray:
    return np.frombuffer(unb64(s), dtype="<f4").reshape(shape).copy()


def u8_b64(arr: np.ndarray) -> str:
    return b64(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def canonical_body(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def idempotency_key(path: str, body: dict) -> str:
    return hashlib.sha256((path + "\n" + canonical_body(body)).encode()).hexdigest()


# --- remote client -----------------------------------------------------------

class RemoteBackend(TextToImageBackend, InpaintBackend, VideoBackend, DepthBackend,
                    VideoDepthBackend, PointCloudBackend):
    """HTTP client for all six operations against one base URL.

    Retries transport failures and 5xx responses (exponential backoff starting
    at ``backoff`` seconds); 4xx responses surface immediately as typed errors.
    Concurrent in-flight requests are bounded by ``max_inflight``.
    """

    RETRIES = 3

    def __init__(self, base_url: str, client: httpx.Client | None = None,
                 max_inflight: int = 2, backoff: float = 1.0, sleep=time.sleep,
                 timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self._gate = threading.BoundedSemaphore(max_inflight)
        self._backoff = backoff
        self._sleep = sleep

    def _post(self, path: str, body: dict) -> dict:
        headers = {"Idempotency-Key": idempotency_key(path, body)}
        last_exc: Exception | None = None
        for attempt in range(self.RETRIES):
            if attempt:
                self._sleep(self._backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = self._client.post(self.base_url + path, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_exc = exc
                continue
            if resp.status_code == 200:
                return resp.json()
            if 400 <= resp.status_code < 500:
                err = self._error_body(resp)
                raise BackendError(err.get("code", "invalid-argument"),
                                   err.get("message", resp.text), retryable=False)
            last_exc = BackendError("unavailable", f"HTTP {resp.status_code}: {resp.text[:200]}",
                                    retryable=True)
        raise BackendError("unavailable", f"{path} failed: {last_exc}", attempts=self.RETRIES,
                           retryable=True)

    @staticmethod
    def _error_body(resp) -> dict:
        try:
            return resp.json()
        except Exception:
            return {}

    # -- operations ----------------------------------------------------------

    def t2i(self, prompt, width, height, seed):
        from .fileio import decode_png

        out = self._post("/v1/t2i", {"prompt": prompt, "width": width, "height": height,
                                     "seed": seed})
        return decode_png(unb64(out["image_png_b64"]))

    def inpaint(self, image, mask, prompt, seed):
        from .fileio import decode_png, encode_png

        mask8 = (np.asarray(mask, dtype=bool) * np.uint8(255))
        out = self._post("/v1/inpaint", {
            "image_png_b64": b64(encode_png(image)),
            "mask_png_b64": b64(encode_png(mask8)),
            "prompt": prompt,
            "seed": seed,
        })
        return decode_png(unb64(out["image_png_b64"]))

    def generate_video(self, conditions, targets, prompt, seed):
        from .fileio import decode_png, encode_png

        self.check_window(conditions, targets)
        body = {
            "cond": [{
                "image_png_b64": b64(encode_png(c.image)),
                "pose": pose_to_wire(c.pose),
                "plucker_f32_b64": f32_b64(c.plucker),
            } for c in conditions],
            "targets": [{
                "pose": pose_to_wire(t.pose),
                "plucker_f32_b64": f32_b64(t.plucker),
            } for t in targets],
            "prompt": prompt,
            "seed": seed,
        }
        out = self._post("/v1/video", body)
        frames = [decode_png(unb64(s)) for s in out["frames"]]
        if len(frames) != len(targets):
            raise BackendError("internal", f"server returned {len(frames)} frames for "
                                           f"{len(targets)} targets")
        return frames

    def mono_depth(self, image, pose=None):
        from .fileio import encode_png

        out = self._post("/v1/depth", {"image_png_b64": b64(encode_png(image))})
        vals = b64_f32(out["depth_f32_b64"], (out["height"], out["width"]))
        return DepthMap(vals)

    def video_depth(self, images, poses=None):
        from .fileio import encode_png

        out = self._post("/v1/video_depth",
                         {"frames": [b64(encode_png(im)) for im in images]})
        h, w = out["height"], out["width"]
        raw = [b64_f32(s, (h, w)) for s in out["depths"]]
        return normalize_video_depth(raw)

    def point_cloud(self, frames):
        from .fileio import encode_png

        out = self._post("/v1/pointcloud", {
            "frames": [{"image_png_b64": b64(encode_png(f.image)),
                        "pose": pose_to_wire(f.pose)} for f in frames],
        })
        pts = b64_f32(out["points_f32_b64"], (-1, 3)).astype(np.float64)
        cols = np.frombuffer(unb64(out["colors_u8_b64"]), dtype=np.uint8).reshape(-1, 3).copy()
        cams = [wire_to_pose(p) for p in out["cameras"]]
        return ColoredPointCloud(pts, cols), cams


def remote_suite(base_url: str, **kwargs) -> BackendSuite:
    """One HTTP client serving every backend role."""
    backend = RemoteBackend(base_url, **kwargs)
    return BackendSuite(t2i=backend, inpaint=backend, video=backend,
                        depth=backend, video_depth=backend, point_cloud=backend)
