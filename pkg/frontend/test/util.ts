import { readFileSync } from "node:fs";
import { PROPERTIES } from "../src/ply";

export function fixtureBytes(name: string): ArrayBuffer {
  const buf = readFileSync(new URL(`../fixtures/${name}`, import.meta.url));
  // copy into a standalone ArrayBuffer so offsets start at 0
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

export function fixtureJson<T>(name: string): T {
  return JSON.parse(
    readFileSync(new URL(`../fixtures/${name}`, import.meta.url), "utf8"),
  ) as T;
}

/** Assemble a splat PLY in memory; one row of 14 floats per Gaussian. */
export function buildPly(rows: number[][], propertyLines?: string[]): ArrayBuffer {
  const props = propertyLines ?? PROPERTIES.map((p) => `property float ${p}`);
  const header =
    `ply\nformat binary_little_endian 1.0\nelement vertex ${rows.length}\n` +
    props.join("\n") +
    (props.length ? "\n" : "") +
    "end_header\n";
  const head = new TextEncoder().encode(header);
  const out = new ArrayBuffer(head.length + rows.length * 14 * 4);
  new Uint8Array(out).set(head);
  const view = new DataView(out, head.length);
  rows.forEach((row, i) => {
    if (row.length !== 14) throw new Error("rows must have 14 floats");
    row.forEach((v, k) => view.setFloat32(4 * (14 * i + k), v, true));
  });
  return out;
}
