"""Adam optimization of a Gaussian scene against rendered frames.

Each step samples one training frame uniformly (seeded), renders it, and
applies the weighted L1 + SSIM photometric loss. Learning rates follow the
classic splatting recipe: the position rate is expressed as a fraction of the
scene extent (AABB diagonal of the initial means) so the same config works at
any metric scale. Low-opacity Gaussians are pruned on a fixed cadence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .frames import Frame
from .gaussians import GaussianScene
from .metrics import LAMBDA_L1, LAMBDA_SSIM, photometric_loss_with_grad
from .rasterizer import rasterize_backward, rasterize_with_context


@dataclass(frozen=True)
class OptimizeConfig:
    lambda_l1: float = LAMBDA_L1
    lambda_ssim: float = LAMBDA_SSIM
    lr_means_factor: float = 1.6e-4  # multiplied by the scene extent
    lr_colors: float = 2.5e-3
    lr_opacity: float = 0.05
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    prune_interval: int = 500
    prune_opacity: float = 0.005
    seed: int = 0


@dataclass
class OptimizeResult:
    scene: GaussianScene
    trace: np.ndarray  # rows (step, l1, ssim, total)


class OptimizeError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def scene_extent(means: np.ndarray) -> float:
    pts = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return 0.0
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


class _Adam:
    def __init__(self, shape, lr, beta1, beta2, eps):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, param, grad, t):
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** t)
        v_hat = self.v / (1 - self.beta2 ** t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def prune(self, keep):
        self.m = self.m[keep]
        self.v = self.v[keep]


def optimize_scene(scene: GaussianScene, frames: list[Frame], steps: int,
                   config: OptimizeConfig = OptimizeConfig(),
                   on_step=None) -> OptimizeResult:
    if not frames:
        raise ValueError("need at least one training frame")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    work = scene.copy()
    if steps == 0:
        return OptimizeResult(scene=work, trace=np.empty((0, 4)))

    extent = scene_extent(work.means)
    rng = np.random.default_rng(config.seed)
    targets = [f.image.astype(np.float64) / 255.0 for f in frames]
    opts = {
        "means": _Adam(work.means.shape, config.lr_means_factor * extent,
                       config.beta1, config.beta2, config.eps),
        "rotations": _Adam(work.rotations.shape, config.lr_rotations,
                           config.beta1, config.beta2, config.eps),
        "log_scales": _Adam(work.log_scales.shape, config.lr_log_scales,
                            config.beta1, config.beta2, config.eps),
        "opacity_logits": _Adam(work.opacity_logits.shape, config.lr_opacity,
                                config.beta1, config.beta2, config.eps),
        "colors": _Adam(work.colors.shape, config.lr_colors,
                        config.beta1, config.beta2, config.eps),
    }
    prune_logit = float(np.log(config.prune_opacity / (1.0 - config.prune_opacity)))

    trace = np.empty((steps, 4))
    for step in range(1, steps + 1):
        pick = int(rng.integers(len(frames)))
        cam = frames[pick].pose
        target, ctx = rasterize_with_context(work, cam)
        total, l1, ssim_val, grad_img = photometric_loss_with_grad(
            target.image, targets[pick], config.lambda_l1, config.lambda_ssim)
        if not np.isfinite(total):
            raise OptimizeError(step, "non-finite loss")
        grads = rasterize_backward(work, cam, grad_img, context=ctx)
        for name, opt in opts.items():
            opt.step(getattr(work, name), getattr(grads, name), step)
        # keep rotations on the unit sphere and colors renderable
        norms = np.linalg.norm(work.rotations, axis=1, keepdims=True)
        np.divide(work.rotations, norms, out=work.rotations,
                  where=norms > 1e-12)
        np.clip(work.colors, 0.0, 1.0, out=work.colors)
        trace[step - 1] = (step, l1, ssim_val, total)

        if config.prune_interval > 0 and step % config.prune_interval == 0:
            keep = work.opacity_logits >= prune_logit
            if not keep.all():
                work = work.select(keep)
                for opt in opts.values():
                    opt.prune(keep)
        if on_step is not None:
            on_step(step, total)
    return OptimizeResult(scene=work, trace=trace)


def save_loss_trace(path, trace: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l1", "ssim", "total"])
        for row in np.asarray(trace):
            writer.writerow([int(row[0]), repr(float(row[1])),
                             repr(float(row[2])), repr(float(row[3]))])
