import { Mat3, Vec3 } from "./math";

export interface Camera {
  rotation: Mat3; // camera-to-world, row-major
  center: Vec3;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

/** Pinhole intrinsics from a horizontal FOV, fy = fx, centered principal
 * point — the same convention the exporter's cameras use. */
export function cameraFromFov(
  rotation: Mat3,
  center: Vec3,
  fovDeg: number,
  width: number,
  height: number,
): Camera {
  const fx = width / 2 / Math.tan(((fovDeg * Math.PI) / 180) / 2);
  return {
    rotation,
    center,
    fx,
    fy: fx,
    cx: width / 2,
    cy: height / 2,
    width,
    height,
  };
}
