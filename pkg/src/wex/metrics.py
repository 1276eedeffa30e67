"""Photometric loss pieces: SSIM, L1, PSNR, and their analytic gradients.

SSIM follows the classic windowed form: 11x11 Gaussian window with sigma 1.5,
stability constants C1 = 0.01^2 and C2 = 0.03^2 for unit dynamic range,
averaged over valid window positions and channels. The gradient is derived
through the weighted raw moments (mean, second moment, cross moment), which
turns the per-pixel scatter into three full-mode convolutions.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2

LAMBDA_L1 = 0.8
LAMBDA_SSIM = 0.2


def _gaussian_window() -> np.ndarray:
    half = (WINDOW_SIZE - 1) / 2.0
    ax = np.arange(WINDOW_SIZE, dtype=np.float64) - half
    g = np.exp(-0.5 * (ax / WINDOW_SIGMA) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _gaussian_window()


def _channels(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError("image must be (H,W) or (H,W,C)")
    if a.shape[0] < WINDOW_SIZE or a.shape[1] < WINDOW_SIZE:
        raise ValueError(f"image smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    return a


def _moments(x, y):
    w = _WINDOW
    mx = convolve2d(x, w, mode="valid")
    my = convolve2d(y, w, mode="valid")
    mxx = convolve2d(x * x, w, mode="valid")
    myy = convolve2d(y * y, w, mode="valid")
    mxy = convolve2d(x * y, w, mode="valid")
    return mx, my, mxx, myy, mxy


def _ssim_channel(x, y):
    mx, my, mxx, myy, mxy = _moments(x, y)
    sx2 = mxx - mx * mx
    sy2 = myy - my * my
    sxy = mxy - mx * my
    lum = (2 * mx * my + C1) / (mx * mx + my * my + C1)
    cs = (2 * sxy + C2) / (sx2 + sy2 + C2)
    return lum * cs


def ssim(a, b) -> float:
    x = _channels(a)
    y = _channels(b)
    if x.shape != y.shape:
        raise ValueError("image dimensions must match")
    vals = [_ssim_channel(x[:, :, c], y[:, :, c]).mean() for c in range(x.shape[2])]
    return float(np.mean(vals))


def ssim_with_grad(a, b):
    """SSIM value and its gradient with respect to the first image.

    Per channel, S depends on pixel p only through the three weighted moments
    of every window containing p, so dTotal/da is a sum of three scattered
    fields; scattering a valid-mode map with a symmetric window is a
    full-mode convolution.
    """
    x = _channels(a)
    y = _channels(b)
    if x.shape != y.shape:
        raise ValueError("image dimensions must match")
    w = _WINDOW
    n_ch = x.shape[2]
    grad = np.zeros_like(x)
    total = 0.0
    for c in range(n_ch):
        xc, yc = x[:, :, c], y[:, :, c]
        mx, my, mxx, myy, mxy = _moments(xc, yc)
        sx2 = mxx - mx * mx
        sy2 = myy - my * my
        sxy = mxy - mx * my
        num_l, den_l = 2 * mx * my + C1, mx * mx + my * my + C1
        num_c, den_c = 2 * sxy + C2, sx2 + sy2 + C2
        lum = num_l / den_l
        cs = num_c / den_c
        total += float((lum * cs).mean())

        n_pos = mx.size
        dl_dmx = (2 * my * den_l - num_l * 2 * mx) / (den_l * den_l)
        dcs_dsx2 = -num_c / (den_c * den_c)
        dcs_dsxy = 2 / den_c
        # raw-moment partials: sx2 and sxy shift with mx at fixed mxx, mxy
        dS_dmx = cs * dl_dmx + lum * (dcs_dsx2 * (-2 * mx) + dcs_dsxy * (-my))
        dS_dmxx = lum * dcs_dsx2
        dS_dmxy = lum * dcs_dsxy
        scatter = (convolve2d(dS_dmx, w, mode="full")
                   + 2 * xc * convolve2d(dS_dmxx, w, mode="full")
                   + yc * convolve2d(dS_dmxy, w, mode="full"))
        grad[:, :, c] = scatter / n_pos
    value = total / n_ch
    grad /= n_ch
    if np.asarray(a).ndim == 2:
        return value, grad[:, :, 0]
    return value, grad


def psnr(a, b) -> float:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("image dimensions must match")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def photometric_loss(rendered, target, lambda_l1: float = LAMBDA_L1,
                     lambda_ssim: float = LAMBDA_SSIM) -> float:
    x = np.asarray(rendered, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("image dimensions must match")
    l1 = float(np.abs(x - y).mean())
    return lambda_l1 * l1 + lambda_ssim * (1.0 - ssim(x, y))


def photometric_loss_with_grad(rendered, target, lambda_l1: float = LAMBDA_L1,
                               lambda_ssim: float = LAMBDA_SSIM):
    """Returns (total, l1, ssim_value, grad wrt rendered)."""
    x = np.asarray(rendered, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("image dimensions must match")
    diff = x - y
    l1 = float(np.abs(diff).mean())
    s, s_grad = ssim_with_grad(x, y)
    grad = lambda_l1 * np.sign(diff) / diff.size - lambda_ssim * s_grad
    total = lambda_l1 * l1 + lambda_ssim * (1.0 - s)
    return total, l1, s, grad
