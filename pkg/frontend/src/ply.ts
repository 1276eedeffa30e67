/** Parser for the exported splat PLY.
 *
 * The file is binary little-endian with exactly one vertex element of 14
 * float properties per Gaussian: position, SH-DC color coefficients,
 * opacity logit, log scales, and a w-first quaternion. Anything else is
 * rejected with the offending header line so a wrong file fails loudly
 * instead of rendering garbage.
 */

export const SH_C0 = 0.2820948;

export const PROPERTIES = [
  "x", "y", "z",
  "f_dc_0", "f_dc_1", "f_dc_2",
  "opacity",
  "scale_0", "scale_1", "scale_2",
  "rot_0", "rot_1", "rot_2", "rot_3",
] as const;

const STRIDE = PROPERTIES.length * 4;

export interface SplatAsset {
  count: number;
  /** (N,3) packed xyz, float32 values widened to f64 untouched. */
  means: Float64Array;
  /** (N,4) w-first unit quaternions. */
  quaternions: Float64Array;
  /** (N,3) log scales. */
  logScales: Float64Array;
  /** (N,) opacity logits. */
  opacityLogits: Float64Array;
  /** (N,3) display colors, 0.2820948 * f_dc + 0.5, clamped to [0,1]. */
  colors: Float64Array;
  /** (N,3) raw SH-DC coefficients as stored, for bit-exact round trips. */
  shDC: Float64Array;
}

export class PlyError extends Error {}

function headerError(line: string): never {
  throw new PlyError(`unsupported PLY header line: "${line}"`);
}

export function parseSplat(buffer: ArrayBuffer): SplatAsset {
  const bytes = new Uint8Array(buffer);
  // header is ASCII terminated by an "end_header" line
  const marker = "end_header\n";
  const probe = new TextDecoder("ascii").decode(
    bytes.subarray(0, Math.min(bytes.length, 4096)),
  );
  const end = probe.indexOf(marker);
  if (!probe.startsWith("ply\n") || end < 0) {
    throw new PlyError("not a PLY file");
  }
  const lines = probe.slice(0, end).split("\n");
  if (lines[lines.length - 1] === "") lines.pop(); // header text ends in \n
  if (lines[1] !== "format binary_little_endian 1.0") {
    headerError(lines[1] ?? "(missing format line)");
  }
  if (!lines[2]?.startsWith("element vertex ")) headerError(lines[2] ?? "");
  const count = Number(lines[2].split(" ")[2]);
  if (!Number.isInteger(count) || count < 0) headerError(lines[2]);
  const props = lines.slice(3);
  if (props.length !== PROPERTIES.length) {
    headerError(props[PROPERTIES.length] ?? "(missing property)");
  }
  for (let i = 0; i < PROPERTIES.length; i++) {
    if (props[i] !== `property float ${PROPERTIES[i]}`) headerError(props[i]);
  }

  const bodyStart = end + marker.length;
  const body = bytes.length - bodyStart;
  if (body !== count * STRIDE) {
    throw new PlyError(
      `vertex payload is ${body} bytes, expected ${count * STRIDE}`,
    );
  }

  const view = new DataView(buffer, bodyStart);
  const means = new Float64Array(count * 3);
  const quaternions = new Float64Array(count * 4);
  const logScales = new Float64Array(count * 3);
  const opacityLogits = new Float64Array(count);
  const colors = new Float64Array(count * 3);
  const shDC = new Float64Array(count * 3);
  for (let i = 0; i < count; i++) {
    const base = i * STRIDE;
    for (let k = 0; k < 3; k++) {
      means[3 * i + k] = view.getFloat32(base + 4 * k, true);
    }
    for (let k = 0; k < 3; k++) {
      const dc = view.getFloat32(base + 4 * (3 + k), true);
      shDC[3 * i + k] = dc;
      colors[3 * i + k] = Math.min(1, Math.max(0, SH_C0 * dc + 0.5));
    }
    opacityLogits[i] = view.getFloat32(base + 4 * 6, true);
    for (let k = 0; k < 3; k++) {
      logScales[3 * i + k] = view.getFloat32(base + 4 * (7 + k), true);
    }
    for (let k = 0; k < 4; k++) {
      quaternions[4 * i + k] = view.getFloat32(base + 4 * (10 + k), true);
    }
  }
  return { count, means, quaternions, logScales, opacityLogits, colors, shDC };
}

/** Re-encode the parsed arrays in file order — used to prove the parse is
 * lossless against the original vertex payload. */
export function encodeVertices(asset: SplatAsset): Uint8Array {
  const out = new Uint8Array(asset.count * STRIDE);
  const view = new DataView(out.buffer);
  for (let i = 0; i < asset.count; i++) {
    const base = i * STRIDE;
    for (let k = 0; k < 3; k++) {
      view.setFloat32(base + 4 * k, asset.means[3 * i + k], true);
    }
    for (let k = 0; k < 3; k++) {
      view.setFloat32(base + 4 * (3 + k), asset.shDC[3 * i + k], true);
    }
    view.setFloat32(base + 4 * 6, asset.opacityLogits[i], true);
    for (let k = 0; k < 3; k++) {
      view.setFloat32(base + 4 * (7 + k), asset.logScales[3 * i + k], true);
    }
    for (let k = 0; k < 4; k++) {
      view.setFloat32(base + 4 * (10 + k), asset.quaternions[4 * i + k], true);
    }
  }
  return out;
}

/** Byte offset of the vertex payload, for slicing originals in tests. */
export function payloadOffset(buffer: ArrayBuffer): number {
  const probe = new TextDecoder("ascii").decode(
    new Uint8Array(buffer, 0, Math.min(buffer.byteLength, 4096)),
  );
  return probe.indexOf("end_header\n") + "end_header\n".length;
}
