/**
 * Wire-protocol mirror for the planarbfm steering service.
 *
 * Message shapes follow schema/protocol.schema.json (the file the service
 * itself is tested against); the builders below are the only way the UI
 * constructs outgoing frames, so every emitted message is schema-valid by
 * construction and the test suite validates each builder against that same
 * schema file.
 */

export const PROTOCOL_VERSION = 1;
export const MASK_DIM = 17;
export const GOAL_DIM = 26;

/** Index of the forward-velocity scalar inside the 26-entry goal vector. */
export const GOAL_VX_INDEX = 3;

export const MASK_BIT_NAMES: readonly string[] = [
  "root_translation", "root_pitch", "root_linvel", "root_angvel",
  "kp_torso_top", "kp_hip", "kp_knee_l", "kp_ankle_l", "kp_toe_l",
  "kp_knee_r", "kp_ankle_r",
  "joint_hip_l", "joint_knee_l", "joint_ankle_l",
  "joint_hip_r", "joint_knee_r", "joint_ankle_r",
];

export type Mode = "TRACK" | "TELEOP" | "LOCO";
export const MODES: readonly Mode[] = ["TRACK", "TELEOP", "LOCO"];

// -- client -> server -------------------------------------------------------
export interface GoalSpec {
  goal: number[];
  mask: number[];
}

export interface Hello { type: "hello"; }
export interface Reset { type: "reset"; clip?: string | null; }
export interface SetMask { type: "set_mask"; mask: number[]; }
export interface SetGoal { type: "set_goal"; goal: number[]; }
export interface SetMode { type: "set_mode"; mode: Mode; }
export interface SetModulation { type: "set_modulation"; lambda: number; }
export interface SetComposition {
  type: "set_composition";
  enabled: boolean;
  alpha: number;
  a?: GoalSpec | null;
  b?: GoalSpec | null;
}
export interface Pause { type: "pause"; }
export interface Resume { type: "resume"; }

export type ClientMsg =
  | Hello | Reset | SetMask | SetGoal | SetMode
  | SetModulation | SetComposition | Pause | Resume;

// -- server -> client -------------------------------------------------------
export interface HelloReply {
  type: "hello";
  protocol_version: number;
  clips: string[];
  control_hz: number;
  state_hz: number;
  mask_dim: number;
  goal_dim: number;
}

export interface RefGhost {
  base: number[];          // [x, z, phi]
  keypoints: number[][];   // 7 x [x, z]
}

export interface StateMsg {
  type: "state";
  t: number;
  base: number[];          // [x, z, phi]
  q: number[];
  dq: number[];
  keypoints: number[][];   // 7 x [x, z]
  mask: number[];
  z_norm: number;
  paused: boolean;
  ref?: RefGhost | null;
}

export interface ErrorMsg { type: "error"; code: string; message: string; }

export type ServerMsg = HelloReply | StateMsg | ErrorMsg;

// -- validation helpers -----------------------------------------------------
function requireBits(v: number[], what: string, dim: number): number[] {
  if (v.length !== dim) {
    throw new Error(`${what} must have ${dim} entries, got ${v.length}`);
  }
  for (const x of v) {
    if (x !== 0 && x !== 1) {
      throw new Error(`${what} entries must be 0 or 1, got ${x}`);
    }
  }
  return v.map((x) => x);
}

function requireFinite(v: number[], what: string, dim: number): number[] {
  if (v.length !== dim) {
    throw new Error(`${what} must have ${dim} entries, got ${v.length}`);
  }
  for (const x of v) {
    if (!Number.isFinite(x)) throw new Error(`${what} entries must be finite`);
  }
  return v.map((x) => x);
}

// -- builders ---------------------------------------------------------------
export function hello(): Hello {
  return { type: "hello" };
}

export function reset(clip?: string | null): Reset {
  return clip == null ? { type: "reset" } : { type: "reset", clip };
}

export function setMask(mask: number[]): SetMask {
  return { type: "set_mask", mask: requireBits(mask, "mask", MASK_DIM) };
}

export function setGoal(goal: number[]): SetGoal {
  return { type: "set_goal", goal: requireFinite(goal, "goal", GOAL_DIM) };
}

/** A zero goal with only the forward-velocity scalar set; pairs with LOCO. */
export function velocityGoal(vx: number): SetGoal {
  if (!Number.isFinite(vx)) throw new Error("vx must be finite");
  const goal = new Array<number>(GOAL_DIM).fill(0);
  goal[GOAL_VX_INDEX] = vx;
  return setGoal(goal);
}

export function setMode(mode: Mode): SetMode {
  if (!MODES.includes(mode)) throw new Error(`unknown mode ${mode}`);
  return { type: "set_mode", mode };
}

export function setModulation(lambda: number): SetModulation {
  if (!Number.isFinite(lambda) || lambda < 0) {
    throw new Error(`lambda must be a finite number >= 0, got ${lambda}`);
  }
  return { type: "set_modulation", lambda };
}

export function goalSpec(goal: number[], mask: number[]): GoalSpec {
  return {
    goal: requireFinite(goal, "goal", GOAL_DIM),
    mask: requireBits(mask, "mask", MASK_DIM),
  };
}

export function setComposition(
  enabled: boolean, alpha: number, a?: GoalSpec | null, b?: GoalSpec | null,
): SetComposition {
  if (!Number.isFinite(alpha) || alpha < 0 || alpha > 1) {
    throw new Error(`alpha must be in [0, 1], got ${alpha}`);
  }
  if (enabled && (a == null || b == null)) {
    throw new Error("enabled composition needs both endpoints a and b");
  }
  const msg: SetComposition = { type: "set_composition", enabled, alpha };
  if (a != null) msg.a = a;
  if (b != null) msg.b = b;
  return msg;
}

export function pause(): Pause {
  return { type: "pause" };
}

export function resume(): Resume {
  return { type: "resume" };
}

export function encode(msg: ClientMsg): string {
  return JSON.stringify(msg);
}

/** Decode one server frame; returns null for frames that do not parse. */
export function decodeServer(text: string): ServerMsg | null {
  let payload: unknown;
  try {
    payload = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof payload !== "object" || payload === null) return null;
  const type = (payload as { type?: unknown }).type;
  if (type === "hello" || type === "state" || type === "error") {
    return payload as ServerMsg;
  }
  return null;
}
