/** Per-splat projection shared by the software and WebGL paths.
 *
 * Mirrors the exporter side's EWA math: world covariance from quaternion
 * and log scales, perspective Jacobian at the mean, screen-space conic with
 * a 0.3 px isotropic blur floor. Near-plane and view-cone culling use the
 * same constants so both renderers see the same splat set in the same
 * depth order.
 */

import { Camera } from "./camera";
import { SplatAsset } from "./ply";
import { Mat3, rotationAngleDeg, Vec3 } from "./math";

export const Z_CULL = 0.2;
export const FRUSTUM_MARGIN = 1.3;
export const BLUR_FLOOR = 0.3;
export const ALPHA_SKIP = 1 / 255;
export const ALPHA_CEIL = 1 - 1e-7;
export const T_STOP = 1e-4;
export const RADIUS_FACTOR = Math.sqrt(2 * Math.log(255));

/** Splats visible from a camera, depth-sorted, with screen-space conics. */
export interface ProjectedSplats {
  count: number;
  /** (M,2) screen-space means. */
  means2d: Float64Array;
  /** (M,3) packed inverse 2D covariance [a, b, c]. */
  conic: Float64Array;
  /** (M,) camera-space depth, ascending. */
  depth: Float64Array;
  /** (M,) activated opacity. */
  opacity: Float64Array;
  /** (M,3) colors. */
  color: Float64Array;
  /** (M,) influence radius in pixels. */
  radius: Float64Array;
}

export function projectSplats(
  asset: SplatAsset,
  cam: Camera,
  pointBudget = Infinity,
): ProjectedSplats {
  const n = Math.min(asset.count, pointBudget);
  const r = cam.rotation;
  const limX = (FRUSTUM_MARGIN * (0.5 * cam.width)) / cam.fx;
  const limY = (FRUSTUM_MARGIN * (0.5 * cam.height)) / cam.fy;

  // pass 1: cull and collect (index, depth) for the canonical sort
  const kept: number[] = [];
  const tcam = new Float64Array(n * 3);
  for (let i = 0; i < n; i++) {
    const px = asset.means[3 * i] - cam.center[0];
    const py = asset.means[3 * i + 1] - cam.center[1];
    const pz = asset.means[3 * i + 2] - cam.center[2];
    const tx = r[0] * px + r[3] * py + r[6] * pz;
    const ty = r[1] * px + r[4] * py + r[7] * pz;
    const tz = r[2] * px + r[5] * py + r[8] * pz;
    if (tz <= Z_CULL) continue;
    if (Math.abs(tx) > limX * tz || Math.abs(ty) > limY * tz) continue;
    tcam[3 * i] = tx;
    tcam[3 * i + 1] = ty;
    tcam[3 * i + 2] = tz;
    kept.push(i);
  }
  kept.sort((a, b) => tcam[3 * a + 2] - tcam[3 * b + 2] || a - b);

  const m = kept.length;
  const out: ProjectedSplats = {
    count: m,
    means2d: new Float64Array(m * 2),
    conic: new Float64Array(m * 3),
    depth: new Float64Array(m),
    opacity: new Float64Array(m),
    color: new Float64Array(m * 3),
    radius: new Float64Array(m),
  };

  for (let k = 0; k < m; k++) {
    const i = kept[k];
    const tx = tcam[3 * i];
    const ty = tcam[3 * i + 1];
    const tz = tcam[3 * i + 2];

    // normalized quaternion -> rotation, then M = R diag(s)
    let qw = asset.quaternions[4 * i];
    let qx = asset.quaternions[4 * i + 1];
    let qy = asset.quaternions[4 * i + 2];
    let qz = asset.quaternions[4 * i + 3];
    const qn = Math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    qw /= qn; qx /= qn; qy /= qn; qz /= qn;
    const rq = [
      1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy),
      2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
      2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy),
    ];
    const s0 = Math.exp(asset.logScales[3 * i]);
    const s1 = Math.exp(asset.logScales[3 * i + 1]);
    const s2 = Math.exp(asset.logScales[3 * i + 2]);
    // cov_world = M M^T with M = R diag(s)
    const m00 = rq[0] * s0, m01 = rq[1] * s1, m02 = rq[2] * s2;
    const m10 = rq[3] * s0, m11 = rq[4] * s1, m12 = rq[5] * s2;
    const m20 = rq[6] * s0, m21 = rq[7] * s1, m22 = rq[8] * s2;
    const c00 = m00 * m00 + m01 * m01 + m02 * m02;
    const c01 = m00 * m10 + m01 * m11 + m02 * m12;
    const c02 = m00 * m20 + m01 * m21 + m02 * m22;
    const c11 = m10 * m10 + m11 * m11 + m12 * m12;
    const c12 = m10 * m20 + m11 * m21 + m12 * m22;
    const c22 = m20 * m20 + m21 * m21 + m22 * m22;

    // V = J W, with W = R^T; row-major W[r][c] = rotation[c*3+r]
    const j00 = cam.fx / tz;
    const j02 = (-cam.fx * tx) / (tz * tz);
    const j11 = cam.fy / tz;
    const j12 = (-cam.fy * ty) / (tz * tz);
    const v00 = j00 * r[0] + j02 * r[2];
    const v01 = j00 * r[3] + j02 * r[5];
    const v02 = j00 * r[6] + j02 * r[8];
    const v10 = j11 * r[1] + j12 * r[2];
    const v11 = j11 * r[4] + j12 * r[5];
    const v12 = j11 * r[7] + j12 * r[8];

    // cov2d = V cov_world V^T + blur floor
    const w00 = v00 * c00 + v01 * c01 + v02 * c02;
    const w01 = v00 * c01 + v01 * c11 + v02 * c12;
    const w02 = v00 * c02 + v01 * c12 + v02 * c22;
    const w10 = v10 * c00 + v11 * c01 + v12 * c02;
    const w11 = v10 * c01 + v11 * c11 + v12 * c12;
    const w12 = v10 * c02 + v11 * c12 + v12 * c22;
    const a = w00 * v00 + w01 * v01 + w02 * v02 + BLUR_FLOOR;
    const b = w10 * v00 + w11 * v01 + w12 * v02;
    const c = w10 * v10 + w11 * v11 + w12 * v12 + BLUR_FLOOR;

    const det = a * c - b * b;
    out.conic[3 * k] = c / det;
    out.conic[3 * k + 1] = -b / det;
    out.conic[3 * k + 2] = a / det;
    const lamMax = 0.5 * (a + c + Math.sqrt((a - c) * (a - c) + 4 * b * b));
    out.radius[k] = RADIUS_FACTOR * Math.sqrt(lamMax) + 1;
    out.means2d[2 * k] = (cam.fx * tx) / tz + cam.cx;
    out.means2d[2 * k + 1] = (cam.fy * ty) / tz + cam.cy;
    out.depth[k] = tz;
    out.opacity[k] = 1 / (1 + Math.exp(-asset.opacityLogits[i]));
    out.color[3 * k] = asset.colors[3 * i];
    out.color[3 * k + 1] = asset.colors[3 * i + 1];
    out.color[3 * k + 2] = asset.colors[3 * i + 2];
  }
  return out;
}

/** Resort policy: the draw order is reused until the camera moves 0.05
 * units or turns 1 degree, which keeps frame times stable. */
export function needsResort(
  lastRotation: Mat3 | null,
  lastCenter: Vec3 | null,
  rotation: Mat3,
  center: Vec3,
): boolean {
  if (lastRotation === null || lastCenter === null) return true;
  const dx = center[0] - lastCenter[0];
  const dy = center[1] - lastCenter[1];
  const dz = center[2] - lastCenter[2];
  if (Math.hypot(dx, dy, dz) > 0.05) return true;
  return rotationAngleDeg(lastRotation, rotation) > 1;
}
