/** Small linear-algebra helpers shared by every render path.
 *
 * Conventions match the exporter: camera space is x-right / y-down /
 * z-forward, world y is up, rotation matrices are camera-to-world and
 * stored row-major as 9 numbers.
 */

export type Vec3 = [number, number, number];
export type Mat3 = number[]; // row-major, length 9

export function mat3Identity(): Mat3 {
  return [1, 0, 0, 0, 1, 0, 0, 0, 1];
}

export function mat3Mul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array<number>(9);
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[3 * i + j] =
        a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
    }
  }
  return out;
}

/** R^T (p - c): world point into camera space. */
export function toCamera(r: Mat3, c: Vec3, p: Vec3): Vec3 {
  const x = p[0] - c[0];
  const y = p[1] - c[1];
  const z = p[2] - c[2];
  return [
    r[0] * x + r[3] * y + r[6] * z,
    r[1] * x + r[4] * y + r[7] * z,
    r[2] * x + r[5] * y + r[8] * z,
  ];
}

export function rotY(theta: number): Mat3 {
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  return [c, 0, s, 0, 1, 0, -s, 0, c];
}

export function rotX(phi: number): Mat3 {
  const c = Math.cos(phi);
  const s = Math.sin(phi);
  return [1, 0, 0, 0, c, -s, 0, s, c];
}

/** Column k of a row-major 3x3 — camera axis k expressed in world coords. */
export function column(r: Mat3, k: number): Vec3 {
  return [r[k], r[3 + k], r[6 + k]];
}

/** Gram-Schmidt renormalization keeping the forward (z) column primary. */
export function reorthonormalize(r: Mat3): Mat3 {
  let fx = r[2], fy = r[5], fz = r[8];
  const fn = Math.hypot(fx, fy, fz);
  fx /= fn; fy /= fn; fz /= fn;
  let ux = r[1], uy = r[4], uz = r[7];
  const d = ux * fx + uy * fy + uz * fz;
  ux -= d * fx; uy -= d * fy; uz -= d * fz;
  const un = Math.hypot(ux, uy, uz);
  ux /= un; uy /= un; uz /= un;
  // x = y cross z (right-handed with y down, z forward)
  const sx = uy * fz - uz * fy;
  const sy = uz * fx - ux * fz;
  const sz = ux * fy - uy * fx;
  return [sx, ux, fx, sy, uy, fy, sz, uz, fz];
}

export function deg(rad: number): number {
  return (rad * 180) / Math.PI;
}

export function rad(degrees: number): number {
  return (degrees * Math.PI) / 180;
}

/** Geodesic angle between two rotations in degrees (trace formula). */
export function rotationAngleDeg(a: Mat3, b: Mat3): number {
  // trace(A^T B) sums column dot products
  let tr = 0;
  for (let i = 0; i < 3; i++) {
    for (let k = 0; k < 3; k++) {
      tr += a[3 * k + i] * b[3 * k + i];
    }
  }
  const c = Math.min(1, Math.max(-1, (tr - 1) / 2));
  return deg(Math.acos(c));
}
