"""Differentiable CPU rasterizer for Gaussian scenes.

Forward model (EWA-style):
  - world covariance  Sigma_w = R(q) diag(s^2) R(q)^T
  - camera space      t = W (m - c),  W = camera rotation transposed
  - screen covariance Sigma' = J W Sigma_w W^T J^T + 0.3 I   (perspective
    Jacobian J at the mean; the isotropic blur floor keeps Sigma' invertible)
  - per pixel         alpha = sigmoid(opacity) * exp(-1/2 d^T Sigma'^-1 d)
  - front-to-back compositing over Gaussians sorted by camera depth
    (ties by storage index), skipping alpha < 1/255 and stopping once
    transmittance falls below 1e-4.

Gaussians closer than the near plane or with means outside 1.3x the view
cone are culled before projection: the Jacobian linearization breaks down
there and would smear the image.

Rendering is tiled: each Gaussian is binned to the 16x16-pixel tiles its
guaranteed-influence radius touches. The radius covers every pixel whose
alpha could reach the skip threshold, so tiling is exactly equivalent to the
brute-force double loop. Tiles are walked sequentially in a fixed order;
renders are bit-deterministic.

The backward pass re-walks each pixel's contributor list in reverse using the
stored final transmittance, accumulating gradients for the 2D quantities, and
then chains through projection, covariance assembly, and quaternion
normalization in vectorized numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .gaussians import GaussianScene
from .geometry import CameraPose

TILE_SIZE = 16
BLUR_FLOOR = 0.3
ALPHA_SKIP = 1.0 / 255.0
ALPHA_CEIL = 1.0 - 1e-7
T_STOP = 1e-4
Z_CULL = 0.2
# The perspective Jacobian is linearized at the mean; for means far outside
# the view cone (or nearly in the camera plane) that linearization explodes
# and a single Gaussian can smear the whole screen. Means beyond 1.3x the
# half-frustum are culled, as in standard splatting implementations.
FRUSTUM_MARGIN = 1.3
# ||d|| beyond sqrt(2 ln 255 * lambda_max) guarantees alpha < 1/255 even at
# opacity 1; +1px absorbs pixel-center rounding.
RADIUS_FACTOR = math.sqrt(2.0 * math.log(255.0))


@dataclass(frozen=True)
class RenderTarget:
    image: np.ndarray  # (H,W,3) float64 in [0,1]
    alpha: np.ndarray  # (H,W) float64 accumulated opacity

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass
class GaussianGradients:
    means: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray


@dataclass
class RenderContext:
    """Forward intermediates the backward pass reuses."""

    order: np.ndarray        # original indices, depth-sorted
    t_cam: np.ndarray        # (M,3) camera-space means
    quat_unit: np.ndarray    # (M,4) normalized quaternions
    quat_norm: np.ndarray    # (M,)
    rot: np.ndarray          # (M,3,3)
    scales: np.ndarray       # (M,3) activated
    m_mat: np.ndarray        # (M,3,3) R diag(s)
    cov_world: np.ndarray    # (M,3,3)
    jac: np.ndarray          # (M,2,3)
    v_mat: np.ndarray        # (M,2,3) J W
    cov2d: np.ndarray        # (M,2,2)
    conic: np.ndarray        # (M,3) packed inverse [a, b, c]
    means2d: np.ndarray      # (M,2)
    sig_opac: np.ndarray     # (M,)
    colors: np.ndarray       # (M,3)
    tile_starts: np.ndarray  # CSR offsets per tile
    tile_ids: np.ndarray     # positions into the sorted arrays
    n_tiles_x: int
    final_t: np.ndarray      # (H,W)
    n_contrib: np.ndarray    # (H,W) walk length per pixel


def _batch_quat_to_rot(q: np.ndarray):
    norm = np.linalg.norm(q, axis=1)
    u = q / norm[:, None]
    w, x, y, z = u[:, 0], u[:, 1], u[:, 2], u[:, 3]
    rot = np.empty((len(q), 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return u, norm, rot


def _prepare(scene: GaussianScene, cam: CameraPose) -> RenderContext | None:
    k = cam.intrinsics
    h, w = k.height, k.width
    n_tiles_x = (w + TILE_SIZE - 1) // TILE_SIZE
    n_tiles_y = (h + TILE_SIZE - 1) // TILE_SIZE
    empty = RenderContext(
        order=np.empty(0, dtype=np.int64), t_cam=np.empty((0, 3)),
        quat_unit=np.empty((0, 4)), quat_norm=np.empty(0),
        rot=np.empty((0, 3, 3)), scales=np.empty((0, 3)),
        m_mat=np.empty((0, 3, 3)), cov_world=np.empty((0, 3, 3)),
        jac=np.empty((0, 2, 3)), v_mat=np.empty((0, 2, 3)),
        cov2d=np.empty((0, 2, 2)), conic=np.empty((0, 3)),
        means2d=np.empty((0, 2)), sig_opac=np.empty(0), colors=np.empty((0, 3)),
        tile_starts=np.zeros(n_tiles_x * n_tiles_y + 1, dtype=np.int64),
        tile_ids=np.empty(0, dtype=np.int64), n_tiles_x=n_tiles_x,
        final_t=np.ones((h, w)), n_contrib=np.zeros((h, w), dtype=np.int32))
    if len(scene) == 0:
        return empty

    t_all = (scene.means - cam.center) @ cam.rotation
    idx = np.nonzero(t_all[:, 2] > Z_CULL)[0]
    t = t_all[idx]
    lim_x = FRUSTUM_MARGIN * (0.5 * w) / k.fx
    lim_y = FRUSTUM_MARGIN * (0.5 * h) / k.fy
    inside = ((np.abs(t[:, 0]) <= lim_x * t[:, 2])
              & (np.abs(t[:, 1]) <= lim_y * t[:, 2]))
    idx = idx[inside]
    t = t[inside]
    if len(idx) == 0:
        return empty
    order_key = np.lexsort((idx, t[:, 2]))
    idx = idx[order_key]
    t = t[order_key]

    quat_unit, quat_norm, rot = _batch_quat_to_rot(scene.rotations[idx])
    scales = np.exp(scene.log_scales[idx])
    m_mat = rot * scales[:, None, :]
    cov_world = np.einsum("mij,mkj->mik", m_mat, m_mat)

    fx, fy = k.fx, k.fy
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    jac = np.zeros((len(idx), 2, 3))
    jac[:, 0, 0] = fx / tz
    jac[:, 0, 2] = -fx * tx / tz ** 2
    jac[:, 1, 1] = fy / tz
    jac[:, 1, 2] = -fy * ty / tz ** 2
    w_mat = cam.rotation.T
    v_mat = np.einsum("mij,jk->mik", jac, w_mat)
    cov2d = np.einsum("mij,mjk,mlk->mil", v_mat, cov_world, v_mat)
    cov2d[:, 0, 0] += BLUR_FLOOR
    cov2d[:, 1, 1] += BLUR_FLOOR

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    lam_max = 0.5 * ((a + c) + np.sqrt((a - c) ** 2 + 4 * b * b))
    radius = RADIUS_FACTOR * np.sqrt(lam_max) + 1.0
    means2d = np.stack([fx * tx / tz + k.cx, fy * ty / tz + k.cy], axis=1)
    sig_opac = 1.0 / (1.0 + np.exp(-scene.opacity_logits[idx]))
    colors = scene.colors[idx]

    # tile binning on the guaranteed-influence bounding box
    px_min = np.floor(means2d[:, 0] - radius - 0.5)
    px_max = np.ceil(means2d[:, 0] + radius - 0.5)
    py_min = np.floor(means2d[:, 1] - radius - 0.5)
    py_max = np.ceil(means2d[:, 1] + radius - 0.5)
    tx0 = np.clip(px_min, 0, w - 1).astype(np.int64) // TILE_SIZE
    tx1 = np.clip(px_max, 0, w - 1).astype(np.int64) // TILE_SIZE + 1
    ty0 = np.clip(py_min, 0, h - 1).astype(np.int64) // TILE_SIZE
    ty1 = np.clip(py_max, 0, h - 1).astype(np.int64) // TILE_SIZE + 1
    onscreen = (px_max >= 0) & (px_min <= w - 1) & (py_max >= 0) & (py_min <= h - 1)

    pos_on = np.nonzero(onscreen)[0].astype(np.int64)
    bx0, bx1 = tx0[pos_on], tx1[pos_on]
    by0, by1 = ty0[pos_on], ty1[pos_on]
    spans_x = bx1 - bx0
    counts = spans_x * (by1 - by0)
    total = int(counts.sum())
    if total:
        pos_flat = np.repeat(pos_on, counts)
        # enumerate each gaussian's rectangle row-major
        local = np.arange(total, dtype=np.int64) - np.repeat(
            np.cumsum(counts) - counts, counts)
        wx_rep = np.repeat(spans_x, counts)
        tiles_flat = ((np.repeat(by0, counts) + local // wx_rep) * n_tiles_x
                      + np.repeat(bx0, counts) + local % wx_rep)
        sort = np.lexsort((pos_flat, tiles_flat))
        tiles_flat = tiles_flat[sort]
        tile_ids = pos_flat[sort]
        bins = np.bincount(tiles_flat, minlength=n_tiles_x * n_tiles_y)
        tile_starts = np.zeros(n_tiles_x * n_tiles_y + 1, dtype=np.int64)
        np.cumsum(bins, out=tile_starts[1:])
    else:
        tile_ids = np.empty(0, dtype=np.int64)
        tile_starts = np.zeros(n_tiles_x * n_tiles_y + 1, dtype=np.int64)

    return RenderContext(
        order=idx, t_cam=t, quat_unit=quat_unit, quat_norm=quat_norm, rot=rot,
        scales=scales, m_mat=m_mat, cov_world=cov_world, jac=jac, v_mat=v_mat,
        cov2d=cov2d, conic=conic, means2d=means2d, sig_opac=sig_opac,
        colors=colors, tile_starts=tile_starts, tile_ids=tile_ids,
        n_tiles_x=n_tiles_x, final_t=np.ones((h, w)),
        n_contrib=np.zeros((h, w), dtype=np.int32))


@njit(cache=True)
def _forward_kernel(h, w, n_tiles_x, tile_starts, tile_ids, means2d, conic,
                    sig_opac, colors, out_img, out_alpha, final_t, n_contrib):
    n_tiles = tile_starts.shape[0] - 1
    for tile in range(n_tiles):
        lo = tile_starts[tile]
        hi = tile_starts[tile + 1]
        if lo == hi:
            continue
        ty = tile // n_tiles_x
        tx = tile % n_tiles_x
        y1 = min((ty + 1) * TILE_SIZE, h)
        x1 = min((tx + 1) * TILE_SIZE, w)
        for py in range(ty * TILE_SIZE, y1):
            cy = py + 0.5
            for px in range(tx * TILE_SIZE, x1):
                cx = px + 0.5
                trans = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                acc_a = 0.0
                last = 0
                for kk in range(lo, hi):
                    gid = tile_ids[kk]
                    dx = cx - means2d[gid, 0]
                    dy = cy - means2d[gid, 1]
                    power = (-0.5 * (conic[gid, 0] * dx * dx
                                     + conic[gid, 2] * dy * dy)
                             - conic[gid, 1] * dx * dy)
                    if power > 0.0:
                        continue
                    alpha = sig_opac[gid] * math.exp(power)
                    if alpha > ALPHA_CEIL:
                        alpha = ALPHA_CEIL
                    if alpha < ALPHA_SKIP:
                        continue
                    contrib = alpha * trans
                    r += colors[gid, 0] * contrib
                    g += colors[gid, 1] * contrib
                    b += colors[gid, 2] * contrib
                    acc_a += contrib
                    trans *= 1.0 - alpha
                    last = kk - lo + 1
                    if trans < T_STOP:
                        break
                out_img[py, px, 0] = r
                out_img[py, px, 1] = g
                out_img[py, px, 2] = b
                out_alpha[py, px] = acc_a
                final_t[py, px] = trans
                n_contrib[py, px] = last


@njit(cache=True)
def _backward_kernel(h, w, n_tiles_x, tile_starts, tile_ids, means2d, conic,
                     sig_opac, colors, final_t, n_contrib, g_img, g_alpha,
                     g_colors, g_sopac, g_mean2d, g_conic):
    n_tiles = tile_starts.shape[0] - 1
    for tile in range(n_tiles):
        lo = tile_starts[tile]
        hi = tile_starts[tile + 1]
        if lo == hi:
            continue
        ty = tile // n_tiles_x
        tx = tile % n_tiles_x
        y1 = min((ty + 1) * TILE_SIZE, h)
        x1 = min((tx + 1) * TILE_SIZE, w)
        for py in range(ty * TILE_SIZE, y1):
            cy = py + 0.5
            for px in range(tx * TILE_SIZE, x1):
                nc = n_contrib[py, px]
                if nc == 0:
                    continue
                cx = px + 0.5
                gr = g_img[py, px, 0]
                gg = g_img[py, px, 1]
                gb = g_img[py, px, 2]
                ga = g_alpha[py, px]
                if gr == 0.0 and gg == 0.0 and gb == 0.0 and ga == 0.0:
                    continue
                trans = final_t[py, px]
                sr = 0.0
                sg = 0.0
                sb = 0.0
                sa = 0.0
                for kk in range(lo + nc - 1, lo - 1, -1):
                    gid = tile_ids[kk]
                    dx = cx - means2d[gid, 0]
                    dy = cy - means2d[gid, 1]
                    ca = conic[gid, 0]
                    cb = conic[gid, 1]
                    cc = conic[gid, 2]
                    power = (-0.5 * (ca * dx * dx + cc * dy * dy)
                             - cb * dx * dy)
                    if power > 0.0:
                        continue
                    gauss = math.exp(power)
                    alpha = sig_opac[gid] * gauss
                    clamped = alpha > ALPHA_CEIL
                    if clamped:
                        alpha = ALPHA_CEIL
                    if alpha < ALPHA_SKIP:
                        continue
                    one_m = 1.0 - alpha
                    trans = trans / one_m  # transmittance in front of gid
                    contrib = alpha * trans
                    g_colors[gid, 0] += gr * contrib
                    g_colors[gid, 1] += gg * contrib
                    g_colors[gid, 2] += gb * contrib
                    d_alpha = (gr * (colors[gid, 0] * trans - sr / one_m)
                               + gg * (colors[gid, 1] * trans - sg / one_m)
                               + gb * (colors[gid, 2] * trans - sb / one_m)
                               + ga * (trans - sa / one_m))
                    sr += colors[gid, 0] * contrib
                    sg += colors[gid, 1] * contrib
                    sb += colors[gid, 2] * contrib
                    sa += contrib
                    if clamped:
                        continue
                    g_sopac[gid] += d_alpha * gauss
                    d_gauss = d_alpha * sig_opac[gid]
                    gw = d_gauss * gauss
                    g_mean2d[gid, 0] += gw * (ca * dx + cb * dy)
                    g_mean2d[gid, 1] += gw * (cb * dx + cc * dy)
                    g_conic[gid, 0] += gw * (-0.5 * dx * dx)
                    g_conic[gid, 1] += gw * (-dx * dy)
                    g_conic[gid, 2] += gw * (-0.5 * dy * dy)


def _run_forward(scene: GaussianScene, cam: CameraPose):
    k = cam.intrinsics
    h, w = k.height, k.width
    ctx = _prepare(scene, cam)
    out_img = np.zeros((h, w, 3))
    out_alpha = np.zeros((h, w))
    _forward_kernel(h, w, ctx.n_tiles_x, ctx.tile_starts, ctx.tile_ids,
                    ctx.means2d, ctx.conic, ctx.sig_opac, ctx.colors,
                    out_img, out_alpha, ctx.final_t, ctx.n_contrib)
    return RenderTarget(image=out_img, alpha=out_alpha), ctx


def rasterize(scene: GaussianScene, cam: CameraPose) -> RenderTarget:
    target, _ = _run_forward(scene, cam)
    return target


def rasterize_with_context(scene: GaussianScene, cam: CameraPose):
    return _run_forward(scene, cam)


def rasterize_backward(scene: GaussianScene, cam: CameraPose,
                       grad_image: np.ndarray, grad_alpha: np.ndarray | None = None,
                       context: RenderContext | None = None) -> GaussianGradients:
    k = cam.intrinsics
    h, w = k.height, k.width
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    if grad_image.shape != (h, w, 3):
        raise ValueError("grad_image shape must match the camera image size")
    if grad_alpha is None:
        grad_alpha = np.zeros((h, w))
    else:
        grad_alpha = np.ascontiguousarray(grad_alpha, dtype=np.float64)
        if grad_alpha.shape != (h, w):
            raise ValueError("grad_alpha shape must match the camera image size")

    ctx = context
    if ctx is None:
        _, ctx = _run_forward(scene, cam)

    n = len(scene)
    out = GaussianGradients(
        means=np.zeros((n, 3)), rotations=np.zeros((n, 4)),
        log_scales=np.zeros((n, 3)), opacity_logits=np.zeros(n),
        colors=np.zeros((n, 3)))
    m = len(ctx.order)
    if m == 0:
        return out

    g_colors = np.zeros((m, 3))
    g_sopac = np.zeros(m)
    g_mean2d = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    _backward_kernel(h, w, ctx.n_tiles_x, ctx.tile_starts, ctx.tile_ids,
                     ctx.means2d, ctx.conic, ctx.sig_opac, ctx.colors,
                     ctx.final_t, ctx.n_contrib, grad_image, grad_alpha,
                     g_colors, g_sopac, g_mean2d, g_conic)

    # chain 2D gradients back to the 3D parameters (vectorized)
    fx, fy = k.fx, k.fy
    tx, ty, tz = ctx.t_cam[:, 0], ctx.t_cam[:, 1], ctx.t_cam[:, 2]

    # conic -> screen covariance: P = Sigma'^-1 so dL/dSigma' = -P G P with
    # G the full symmetric gradient (packed b entry carries both slots)
    gamma = np.empty((m, 2, 2))
    gamma[:, 0, 0] = g_conic[:, 0]
    gamma[:, 0, 1] = gamma[:, 1, 0] = 0.5 * g_conic[:, 1]
    gamma[:, 1, 1] = g_conic[:, 2]
    p_mat = np.empty((m, 2, 2))
    p_mat[:, 0, 0] = ctx.conic[:, 0]
    p_mat[:, 0, 1] = p_mat[:, 1, 0] = ctx.conic[:, 1]
    p_mat[:, 1, 1] = ctx.conic[:, 2]
    d_cov2d = -np.einsum("mij,mjk,mkl->mil", p_mat, gamma, p_mat)

    d_cov_world = np.einsum("mji,mjk,mkl->mil", ctx.v_mat, d_cov2d, ctx.v_mat)
    d_v = 2.0 * np.einsum("mij,mjk,mkl->mil", d_cov2d, ctx.v_mat, ctx.cov_world)
    w_mat = cam.rotation.T
    d_jac = np.einsum("mij,kj->mik", d_v, w_mat)

    inv_z = 1.0 / tz
    inv_z2 = inv_z * inv_z
    d_t = np.zeros((m, 3))
    d_t[:, 0] = d_jac[:, 0, 2] * (-fx * inv_z2)
    d_t[:, 1] = d_jac[:, 1, 2] * (-fy * inv_z2)
    d_t[:, 2] = (d_jac[:, 0, 0] * (-fx * inv_z2)
                 + d_jac[:, 1, 1] * (-fy * inv_z2)
                 + d_jac[:, 0, 2] * (2.0 * fx * tx * inv_z2 * inv_z)
                 + d_jac[:, 1, 2] * (2.0 * fy * ty * inv_z2 * inv_z))
    # screen-space mean
    d_t[:, 0] += g_mean2d[:, 0] * fx * inv_z
    d_t[:, 1] += g_mean2d[:, 1] * fy * inv_z
    d_t[:, 2] += (-g_mean2d[:, 0] * fx * tx - g_mean2d[:, 1] * fy * ty) * inv_z2
    d_means = d_t @ cam.rotation.T

    d_m = 2.0 * np.einsum("mij,mjk->mik", d_cov_world, ctx.m_mat)
    d_rot = d_m * ctx.scales[:, None, :]
    d_scales = np.einsum("mij,mij->mj", ctx.rot, d_m)
    d_log_scales = d_scales * ctx.scales

    qw, qx, qy, qz = (ctx.quat_unit[:, 0], ctx.quat_unit[:, 1],
                      ctx.quat_unit[:, 2], ctx.quat_unit[:, 3])
    zero = np.zeros(m)
    drdw = 2.0 * np.stack([
        np.stack([zero, -qz, qy], axis=1),
        np.stack([qz, zero, -qx], axis=1),
        np.stack([-qy, qx, zero], axis=1)], axis=1)
    drdx = 2.0 * np.stack([
        np.stack([zero, qy, qz], axis=1),
        np.stack([qy, -2 * qx, -qw], axis=1),
        np.stack([qz, qw, -2 * qx], axis=1)], axis=1)
    drdy = 2.0 * np.stack([
        np.stack([-2 * qy, qx, qw], axis=1),
        np.stack([qx, zero, qz], axis=1),
        np.stack([-qw, qz, -2 * qy], axis=1)], axis=1)
    drdz = 2.0 * np.stack([
        np.stack([-2 * qz, -qw, qx], axis=1),
        np.stack([qw, -2 * qz, qy], axis=1),
        np.stack([qx, qy, zero], axis=1)], axis=1)
    d_unit = np.stack([np.einsum("mij,mij->m", d_rot, tbl)
                       for tbl in (drdw, drdx, drdy, drdz)], axis=1)
    # through normalization q_hat = q / |q|
    proj = np.einsum("mk,mk->m", d_unit, ctx.quat_unit)
    d_quat = (d_unit - proj[:, None] * ctx.quat_unit) / ctx.quat_norm[:, None]

    sig = ctx.sig_opac
    d_logit = g_sopac * sig * (1.0 - sig)

    out.means[ctx.order] = d_means
    out.rotations[ctx.order] = d_quat
    out.log_scales[ctx.order] = d_log_scales
    out.opacity_logits[ctx.order] = d_logit
    out.colors[ctx.order] = g_colors
    return out
