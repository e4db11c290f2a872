/**
 * Every frame the UI can emit must validate against the client half of
 * schema/protocol.schema.json — the same file the service is tested against.
 */

import { beforeAll, describe, expect, it } from "vitest";

import {
  GOAL_DIM, MASK_DIM,
  goalSpec, hello, pause, reset, resume,
  setComposition, setGoal, setMask, setMode, setModulation,
  velocityGoal,
} from "../src/protocol.js";
import { compileValidator, loadSchema, type Validator } from "./helpers.js";

let validateClient: Validator;
let validateServer: Validator;

beforeAll(() => {
  const schema = loadSchema();
  expect(schema.protocol_version).toBe(1);
  validateClient = compileValidator(schema.client);
  validateServer = compileValidator(schema.server);
});

const ZERO_GOAL = new Array<number>(GOAL_DIM).fill(0);
const ONES_MASK = new Array<number>(MASK_DIM).fill(1);

describe("every builder emits a schema-valid client frame", () => {
  const cases: [string, () => object][] = [
    ["hello", () => hello()],
    ["reset (stand)", () => reset()],
    ["reset (clip)", () => reset("walk_forward_0.6")],
    ["set_mask", () => setMask(ONES_MASK)],
    ["set_goal", () => setGoal(ZERO_GOAL)],
    ["velocity goal", () => velocityGoal(0.6)],
    ["set_mode TRACK", () => setMode("TRACK")],
    ["set_mode TELEOP", () => setMode("TELEOP")],
    ["set_mode LOCO", () => setMode("LOCO")],
    ["set_modulation 0", () => setModulation(0)],
    ["set_modulation 1.5", () => setModulation(1.5)],
    ["set_composition off", () => setComposition(false, 0.5)],
    ["set_composition on", () => setComposition(
      true, 0.25,
      goalSpec(ZERO_GOAL, ONES_MASK),
      goalSpec(velocityGoal(0.6).goal, ONES_MASK),
    )],
    ["pause", () => pause()],
    ["resume", () => resume()],
  ];

  it.each(cases)("%s", (_name, build) => {
    const msg = build();
    // Validate the JSON round trip, exactly what goes on the wire.
    expect(validateClient(JSON.parse(JSON.stringify(msg)))).toBe(true);
  });
});

describe("the validator rejects malformed frames", () => {
  const bad: [string, unknown][] = [
    ["unknown type", { type: "warp" }],
    ["missing type", { mask: ONES_MASK }],
    ["short mask", { type: "set_mask", mask: new Array(16).fill(1) }],
    ["long goal", { type: "set_goal", goal: new Array(GOAL_DIM + 1).fill(0) }],
    ["bad mode", { type: "set_mode", mode: "DANCE" }],
    ["negative lambda", { type: "set_modulation", lambda: -0.5 }],
    ["alpha out of range", { type: "set_composition", enabled: false, alpha: 1.5 }],
    ["extra key", { type: "pause", extra: 1 }],
    ["non-numeric goal", { type: "set_goal", goal: new Array(GOAL_DIM).fill("x") }],
  ];

  it.each(bad)("%s", (_name, frame) => {
    expect(validateClient(frame)).toBe(false);
  });
});

describe("builders refuse locally-invalid input before it reaches the wire", () => {
  it("wrong mask length", () => {
    expect(() => setMask(new Array(5).fill(1))).toThrow(/17/);
  });
  it("non-bit mask entries", () => {
    const half = new Array<number>(MASK_DIM).fill(1);
    half[3] = 0.5;
    expect(() => setMask(half)).toThrow(/0 or 1/);
  });
  it("non-finite goal", () => {
    const g = ZERO_GOAL.slice();
    g[0] = Infinity;
    expect(() => setGoal(g)).toThrow(/finite/);
  });
  it("negative lambda", () => {
    expect(() => setModulation(-1)).toThrow(/lambda/);
  });
  it("alpha out of range", () => {
    expect(() => setComposition(false, 2)).toThrow(/alpha/);
  });
  it("enabled composition without endpoints", () => {
    expect(() => setComposition(true, 0.5)).toThrow(/endpoints/);
  });
});

describe("modulation-off wire form", () => {
  it("lambda 0 serializes as the exact integer zero", () => {
    // The service guarantees bit-identical motion at lambda exactly 0; the
    // slider's off position must therefore serialize as 0, not 0.0...1.
    expect(JSON.stringify(setModulation(0)))
      .toBe('{"type":"set_modulation","lambda":0}');
  });
});

describe("server fixtures used by the rendering tests stay schema-valid", () => {
  it("state frame fixture", async () => {
    const { stateFrame, helloReplyFrame } = await import("./helpers.js");
    expect(validateServer(stateFrame())).toBe(true);
    expect(validateServer(helloReplyFrame())).toBe(true);
    expect(validateServer({ type: "error", code: "bad_json", message: "x" }))
      .toBe(true);
  });
});
