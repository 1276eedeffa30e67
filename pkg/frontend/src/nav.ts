/** First-person navigation with deterministic fixed-timestep integration.
 *
 * WASD translates in the camera frame, mouse drag turns (pitch clamped to
 * +/-89 degrees), the wheel scales move speed. Input events mutate key and
 * look state immediately; position only advances in fixed steps, so an
 * identical event/step script always lands on the identical pose.
 */

import { column, Mat3, mat3Mul, reorthonormalize, rotX, rotY, Vec3 } from "./math";

export const STEP_DT = 1 / 120;
export const PITCH_LIMIT = (89 * Math.PI) / 180;
export const SPEED_MIN = 0.01;
export const SPEED_MAX = 100;

export interface NavState {
  yaw: number; // radians, about world y
  pitch: number; // radians, clamped
  center: Vec3;
  moveSpeed: number; // scene units per second
  lookSensitivity: number; // radians per pixel
  keys: Set<string>;
  pointBudget: number;
  alphaCutoff: number;
}

export function initialNav(overrides: Partial<NavState> = {}): NavState {
  return {
    yaw: 0,
    pitch: 0,
    center: [0, 0, 0],
    moveSpeed: 1,
    lookSensitivity: 0.005,
    keys: new Set(),
    pointBudget: Infinity,
    alphaCutoff: 1 / 255,
    ...overrides,
  };
}

/** Camera-to-world rotation: yaw about world y, then pitch about camera x.
 * Renormalized every call so long sessions cannot drift off SO(3). */
export function navRotation(nav: NavState): Mat3 {
  return reorthonormalize(mat3Mul(rotY(nav.yaw), rotX(nav.pitch)));
}

export type NavEvent =
  | { type: "key"; key: string; down: boolean }
  | { type: "mouse"; dx: number; dy: number }
  | { type: "wheel"; delta: number };

export function applyEvent(nav: NavState, event: NavEvent): void {
  if (event.type === "key") {
    const key = event.key.toLowerCase();
    if (event.down) nav.keys.add(key);
    else nav.keys.delete(key);
  } else if (event.type === "mouse") {
    nav.yaw += event.dx * nav.lookSensitivity;
    nav.pitch += event.dy * nav.lookSensitivity;
    if (nav.pitch > PITCH_LIMIT) nav.pitch = PITCH_LIMIT;
    if (nav.pitch < -PITCH_LIMIT) nav.pitch = -PITCH_LIMIT;
  } else {
    nav.moveSpeed *= Math.pow(2, -event.delta / 500);
    if (nav.moveSpeed > SPEED_MAX) nav.moveSpeed = SPEED_MAX;
    if (nav.moveSpeed < SPEED_MIN) nav.moveSpeed = SPEED_MIN;
  }
}

/** One fixed timestep of WASD movement in the current camera frame. */
export function stepNav(nav: NavState, dt = STEP_DT): void {
  let forward = 0;
  let strafe = 0;
  if (nav.keys.has("w")) forward += 1;
  if (nav.keys.has("s")) forward -= 1;
  if (nav.keys.has("d")) strafe += 1;
  if (nav.keys.has("a")) strafe -= 1;
  if (forward === 0 && strafe === 0) return;
  const r = navRotation(nav);
  const fwd = column(r, 2);
  const right = column(r, 0);
  const step = nav.moveSpeed * dt;
  nav.center = [
    nav.center[0] + (forward * fwd[0] + strafe * right[0]) * step,
    nav.center[1] + (forward * fwd[1] + strafe * right[1]) * step,
    nav.center[2] + (forward * fwd[2] + strafe * right[2]) * step,
  ];
}

export type TraceEntry =
  | { event: NavEvent }
  | { steps: number };

/** Run a scripted trace: events apply instantly, steps integrate. */
export function runTrace(nav: NavState, trace: TraceEntry[]): NavState {
  for (const entry of trace) {
    if ("event" in entry) {
      applyEvent(nav, entry.event);
    } else {
      for (let i = 0; i < entry.steps; i++) stepNav(nav);
    }
  }
  return nav;
}
