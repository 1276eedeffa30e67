/** CPU splat rasterizer used for parity tests and as a no-WebGL fallback.
 *
 * Walks the depth-sorted splats front to back per pixel with the same
 * skip/termination constants as the exporter's rasterizer, so on fixture
 * scenes the two agree to float rounding.
 */

import { Camera } from "./camera";
import { SplatAsset } from "./ply";
import {
  ALPHA_CEIL,
  ALPHA_SKIP,
  ProjectedSplats,
  projectSplats,
  T_STOP,
} from "./project";

export interface FrameBuffer {
  width: number;
  height: number;
  /** (H*W*3) linear RGB in [0,1]. */
  image: Float64Array;
  /** (H*W) accumulated alpha. */
  alpha: Float64Array;
}

export function renderProjected(
  splats: ProjectedSplats,
  width: number,
  height: number,
  alphaCutoff = ALPHA_SKIP,
): FrameBuffer {
  const image = new Float64Array(width * height * 3);
  const alpha = new Float64Array(width * height);
  const m = splats.count;
  for (let py = 0; py < height; py++) {
    const cy = py + 0.5;
    for (let px = 0; px < width; px++) {
      const cx = px + 0.5;
      let trans = 1;
      let r = 0;
      let g = 0;
      let b = 0;
      let accA = 0;
      for (let k = 0; k < m; k++) {
        const dx = cx - splats.means2d[2 * k];
        if (Math.abs(dx) > splats.radius[k]) continue;
        const dy = cy - splats.means2d[2 * k + 1];
        if (Math.abs(dy) > splats.radius[k]) continue;
        const power =
          -0.5 * (splats.conic[3 * k] * dx * dx + splats.conic[3 * k + 2] * dy * dy) -
          splats.conic[3 * k + 1] * dx * dy;
        if (power > 0) continue;
        let a = splats.opacity[k] * Math.exp(power);
        if (a > ALPHA_CEIL) a = ALPHA_CEIL;
        if (a < alphaCutoff) continue;
        const contrib = a * trans;
        r += splats.color[3 * k] * contrib;
        g += splats.color[3 * k + 1] * contrib;
        b += splats.color[3 * k + 2] * contrib;
        accA += contrib;
        trans *= 1 - a;
        if (trans < T_STOP) break;
      }
      const pix = py * width + px;
      image[3 * pix] = r;
      image[3 * pix + 1] = g;
      image[3 * pix + 2] = b;
      alpha[pix] = accA;
    }
  }
  return { width, height, image, alpha };
}

export function renderFrame(
  asset: SplatAsset,
  cam: Camera,
  options: { pointBudget?: number; alphaCutoff?: number } = {},
): FrameBuffer {
  const splats = projectSplats(asset, cam, options.pointBudget ?? Infinity);
  return renderProjected(
    splats,
    cam.width,
    cam.height,
    options.alphaCutoff ?? ALPHA_SKIP,
  );
}

/** Quantize to 8-bit like the reference PNGs: clip to [0,1], scale, round. */
export function toBytes(frame: FrameBuffer): Uint8Array {
  const out = new Uint8Array(frame.width * frame.height * 3);
  for (let i = 0; i < out.length; i++) {
    const v = Math.min(1, Math.max(0, frame.image[i]));
    out[i] = Math.round(v * 255);
  }
  return out;
}

/** RGBA bytes for canvas display, opaque. */
export function toRGBA(frame: FrameBuffer) {
  const n = frame.width * frame.height;
  const out = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    out[4 * i] = Math.round(Math.min(1, Math.max(0, frame.image[3 * i])) * 255);
    out[4 * i + 1] = Math.round(Math.min(1, Math.max(0, frame.image[3 * i + 1])) * 255);
    out[4 * i + 2] = Math.round(Math.min(1, Math.max(0, frame.image[3 * i + 2])) * 255);
    out[4 * i + 3] = 255;
  }
  return out;
}
