import { readFileSync } from "node:fs";
import { PNG } from "pngjs";
import { describe, expect, it } from "vitest";
import { cameraFromFov } from "../src/camera";
import { parseSplat, SplatAsset } from "../src/ply";
import { renderFrame, toBytes } from "../src/software";
import { buildPly, fixtureBytes, fixtureJson } from "./util";

interface RenderCase {
  name: string;
  png: string;
  asset: string;
  rotation: number[];
  center: number[];
  fov_deg: number;
  width: number;
  height: number;
}

const MAE_BUDGET = 4 / 255;

function referencePng(name: string): { width: number; height: number; data: Buffer } {
  const buf = readFileSync(new URL(`../fixtures/${name}`, import.meta.url));
  return PNG.sync.read(buf);
}

describe("parity with the reference renderer", () => {
  const cases = fixtureJson<RenderCase[]>("renders.json");

  for (const rc of cases) {
    it(`matches ${rc.png} within ${MAE_BUDGET.toFixed(5)} MAE`, () => {
      const asset = parseSplat(fixtureBytes(rc.asset));
      const cam = cameraFromFov(
        rc.rotation,
        [rc.center[0], rc.center[1], rc.center[2]],
        rc.fov_deg,
        rc.width,
        rc.height,
      );
      const bytes = toBytes(renderFrame(asset, cam));
      const ref = referencePng(rc.png);
      expect(ref.width).toBe(rc.width);
      expect(ref.height).toBe(rc.height);
      let sum = 0;
      let worst = 0;
      const n = rc.width * rc.height;
      for (let i = 0; i < n; i++) {
        for (let c = 0; c < 3; c++) {
          const diff = Math.abs(bytes[3 * i + c] - ref.data[4 * i + c]);
          sum += diff;
          if (diff > worst) worst = diff;
        }
      }
      const mae = sum / (n * 3 * 255);
      // eslint-disable-next-line no-console
      console.log(`${rc.png}: MAE ${mae.toExponential(3)}, worst ${worst}/255`);
      expect(mae).toBeLessThanOrEqual(MAE_BUDGET);
    });
  }
});

describe("degenerate inputs", () => {
  it("renders an empty asset as the clear color", () => {
    const asset = parseSplat(buildPly([]));
    expect(asset.count).toBe(0);
    const cam = cameraFromFov([1, 0, 0, 0, 1, 0, 0, 0, 1], [0, 0, 0], 60, 32, 32);
    const frame = renderFrame(asset, cam);
    expect(frame.image.every((v) => v === 0)).toBe(true);
    expect(frame.alpha.every((v) => v === 0)).toBe(true);
  });
});

describe("storage order invariance", () => {
  function permute(asset: SplatAsset, perm: number[]): SplatAsset {
    const pick = (src: Float64Array, width: number) => {
      const out = new Float64Array(src.length);
      perm.forEach((from, to) => {
        for (let k = 0; k < width; k++) out[width * to + k] = src[width * from + k];
      });
      return out;
    };
    return {
      count: asset.count,
      means: pick(asset.means, 3),
      quaternions: pick(asset.quaternions, 4),
      logScales: pick(asset.logScales, 3),
      opacityLogits: pick(asset.opacityLogits, 1),
      colors: pick(asset.colors, 3),
      shDC: pick(asset.shDC, 3),
    };
  }

  it("renders identically after shuffling the Gaussians", () => {
    const asset = parseSplat(fixtureBytes("golden_10.ply"));
    const rc = fixtureJson<RenderCase[]>("renders.json")[1];
    const cam = cameraFromFov(
      rc.rotation,
      [rc.center[0], rc.center[1], rc.center[2]],
      rc.fov_deg,
      rc.width,
      rc.height,
    );
    const shuffled = permute(asset, [7, 2, 9, 0, 4, 1, 8, 3, 6, 5]);
    const a = renderFrame(asset, cam).image;
    const b = renderFrame(shuffled, cam).image;
    let mismatches = 0;
    for (let i = 0; i < a.length; i++) if (a[i] !== b[i]) mismatches++;
    expect(mismatches).toBe(0);
  });
});
