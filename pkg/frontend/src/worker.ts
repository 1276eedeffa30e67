/** Parses PLY buffers off the UI thread. */

import { parseSplat } from "./ply";

self.onmessage = (msg: MessageEvent<ArrayBuffer>) => {
  try {
    const asset = parseSplat(msg.data);
    const transfer = [
      asset.means.buffer,
      asset.quaternions.buffer,
      asset.logScales.buffer,
      asset.opacityLogits.buffer,
      asset.colors.buffer,
      asset.shDC.buffer,
    ];
    (self as unknown as Worker).postMessage({ ok: true, asset }, transfer);
  } catch (err) {
    (self as unknown as Worker).postMessage({
      ok: false,
      message: err instanceof Error ? err.message : String(err),
    });
  }
};
