/** Browser entry point: canvas, input wiring, file loading, help overlay. */

import { cameraFromFov } from "./camera";
import { applyEvent, initialNav, navRotation, NavState, STEP_DT, stepNav } from "./nav";
import { SplatAsset } from "./ply";
import { needsResort, projectSplats } from "./project";
import { renderProjected, toRGBA } from "./software";
import { WebGLRenderer } from "./webgl";
import { Mat3, Vec3 } from "./math";

const FOV_DEG = 60;
const SOFTWARE_SCALE = 4; // software fallback renders at 1/4 resolution

const canvas = document.getElementById("view") as HTMLCanvasElement;
const status = document.getElementById("status")!;
const help = document.getElementById("help")!;
const drop = document.getElementById("drop")!;

let asset: SplatAsset | null = null;
let nav: NavState = initialNav({ center: [0, 0, 0] });
let gpu: WebGLRenderer | null = null;
let gpuError = "";
try {
  gpu = new WebGLRenderer(canvas);
} catch (err) {
  gpuError = err instanceof Error ? err.message : String(err);
}
const ctx2d = gpu ? null : canvas.getContext("2d");

const parser = new Worker(new URL("./worker.ts", import.meta.url), {
  type: "module",
});
parser.onmessage = (msg: MessageEvent<{ ok: boolean; asset?: SplatAsset; message?: string }>) => {
  if (msg.data.ok && msg.data.asset) {
    asset = msg.data.asset;
    lastRotation = null; // force a resort
    setStatus(`${asset.count.toLocaleString()} splats loaded`);
  } else {
    setStatus(`load failed: ${msg.data.message}`);
  }
};

function setStatus(text: string): void {
  status.textContent = gpu ? text : `${text} — software fallback (${gpuError})`;
}

function resize(): void {
  canvas.width = window.innerWidth;
  canvas.height = window.innerHeight;
}
window.addEventListener("resize", resize);
resize();

// --- input ----------------------------------------------------------------

let dragging = false;
canvas.addEventListener("mousedown", () => {
  dragging = true;
});
window.addEventListener("mouseup", () => {
  dragging = false;
});
window.addEventListener("mousemove", (e) => {
  if (dragging) applyEvent(nav, { type: "mouse", dx: e.movementX, dy: e.movementY });
});
window.addEventListener(
  "wheel",
  (e) => {
    applyEvent(nav, { type: "wheel", delta: e.deltaY });
    e.preventDefault();
  },
  { passive: false },
);
window.addEventListener("keydown", (e) => {
  if (e.key === "h" || e.key === "H") {
    help.classList.toggle("hidden");
    return;
  }
  applyEvent(nav, { type: "key", key: e.key, down: true });
});
window.addEventListener("keyup", (e) => {
  applyEvent(nav, { type: "key", key: e.key, down: false });
});

// --- file loading ----------------------------------------------------------

window.addEventListener("dragover", (e) => {
  e.preventDefault();
  drop.classList.remove("hidden");
});
window.addEventListener("dragleave", () => drop.classList.add("hidden"));
window.addEventListener("drop", async (e) => {
  e.preventDefault();
  drop.classList.add("hidden");
  const file = e.dataTransfer?.files?.[0];
  if (!file) return;
  setStatus(`parsing ${file.name}…`);
  parser.postMessage(await file.arrayBuffer());
});

async function loadFromUrl(url: string): Promise<void> {
  setStatus(`fetching ${url}…`);
  const resp = await fetch(url);
  if (!resp.ok) {
    setStatus(`fetch failed: ${resp.status} ${resp.statusText}`);
    return;
  }
  parser.postMessage(await resp.arrayBuffer());
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const sceneUrl = params.get("scene");
  const manifestUrl = params.get("manifest");
  if (sceneUrl) {
    await loadFromUrl(sceneUrl);
  } else if (manifestUrl) {
    // scene manifests index their exported splat under stages.stage3
    setStatus(`fetching ${manifestUrl}…`);
    const resp = await fetch(manifestUrl);
    if (!resp.ok) {
      setStatus(`manifest fetch failed: ${resp.status}`);
      return;
    }
    const manifest = await resp.json();
    const rel = manifest?.stages?.stage3?.export_path;
    if (typeof rel !== "string") {
      setStatus("manifest has no stage3 export (run the pipeline first)");
      return;
    }
    await loadFromUrl(new URL(rel, manifestUrl).toString());
  } else {
    setStatus("drop a .ply splat file, or pass ?scene=<url> / ?manifest=<url>");
  }
}
void boot();

// --- render loop -------------------------------------------------------------

let lastRotation: Mat3 | null = null;
let lastCenter: Vec3 | null = null;
const scratch = document.createElement("canvas");
let accumulator = 0;
let lastTime = performance.now();

function drawSoftware(rotation: Mat3): void {
  if (!asset || !ctx2d) return;
  const w = Math.max(1, Math.floor(canvas.width / SOFTWARE_SCALE));
  const h = Math.max(1, Math.floor(canvas.height / SOFTWARE_SCALE));
  const cam = cameraFromFov(rotation, nav.center, FOV_DEG, w, h);
  const small = renderProjected(projectSplats(asset, cam, nav.pointBudget), w, h, nav.alphaCutoff);
  scratch.width = w;
  scratch.height = h;
  scratch.getContext("2d")!.putImageData(new ImageData(toRGBA(small), w, h), 0, 0);
  ctx2d.imageSmoothingEnabled = false;
  ctx2d.drawImage(scratch, 0, 0, canvas.width, canvas.height);
}

function frame(now: number): void {
  accumulator += Math.min(0.25, (now - lastTime) / 1000);
  lastTime = now;
  while (accumulator >= STEP_DT) {
    stepNav(nav);
    accumulator -= STEP_DT;
  }

  if (asset) {
    const rotation = navRotation(nav);
    if (gpu) {
      // projection + depth sort are reused until the camera moves enough
      if (needsResort(lastRotation, lastCenter, rotation, nav.center)) {
        const cam = cameraFromFov(rotation, nav.center, FOV_DEG, canvas.width, canvas.height);
        gpu.setSplats(projectSplats(asset, cam, nav.pointBudget));
        lastRotation = rotation;
        lastCenter = [...nav.center];
      }
      gpu.draw(nav.alphaCutoff);
    } else {
      drawSoftware(rotation);
    }
  }
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
