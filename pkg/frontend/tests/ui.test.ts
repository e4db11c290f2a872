// @vitest-environment happy-dom
/**
 * Panel wiring: DOM events must produce exactly the protocol frames the
 * schema allows, and the panel must mirror server state, never invent it.
 */

import { beforeEach, describe, expect, it } from "vitest";

import { SteeringClient } from "../src/client.js";
import { MASK_DIM } from "../src/protocol.js";
import { buildUi, maskFromChecks, sliderNumber, type UiHandles } from "../src/ui.js";
import {
  FakeWebSocket, compileValidator, helloReplyFrame, loadSchema, stateFrame,
  type Validator,
} from "./helpers.js";

let validateClient: Validator;
let ws: FakeWebSocket;
let client: SteeringClient;
let ui: UiHandles;

function frames(): Record<string, unknown>[] {
  return ws.sent.map((f) => JSON.parse(f) as Record<string, unknown>);
}

function lastFrame(): Record<string, unknown> {
  expect(ws.sent.length).toBeGreaterThan(0);
  const frame = JSON.parse(ws.sent[ws.sent.length - 1]) as Record<string, unknown>;
  expect(validateClient(frame)).toBe(true);
  return frame;
}

function fire(el: HTMLElement, type: string): void {
  el.dispatchEvent(new Event(type, { bubbles: true }));
}

beforeEach(() => {
  validateClient ??= compileValidator(loadSchema().client);
  document.body.innerHTML = "";
  ws = new FakeWebSocket();
  // Zero interval: the limiter passes everything through synchronously, so
  // each UI action maps 1:1 onto an observable wire frame.
  client = new SteeringClient("ws://test/ws", {
    wsFactory: () => ws,
    sendIntervalMs: 0,
  });
  ui = buildUi(document.body, client);
  client.onHello = (m) => ui.syncFromHello(m);
  client.onState = (m) => ui.syncFromState(m);
  client.connect();
  ws.fire("open", {});
  ws.serverSends(helloReplyFrame(["stand", "hop", "walk_forward_0.6"]));
  ws.sent.length = 0;  // drop handshake frames; tests inspect what follows
});

describe("mask toggles", () => {
  it("renders all seventeen toggles", () => {
    expect(ui.maskBoxes.length).toBe(MASK_DIM);
  });

  it("a toggle click emits a schema-valid set_mask with that bit flipped", () => {
    ws.serverSends(stateFrame({ mask: new Array(MASK_DIM).fill(0) }));
    ui.maskBoxes[2].checked = true;
    fire(ui.maskBoxes[2], "change");
    const msg = lastFrame();
    expect(msg.type).toBe("set_mask");
    const mask = msg.mask as number[];
    expect(mask[2]).toBe(1);
    expect(mask.reduce((a, b) => a + b, 0)).toBe(1);
  });

  it("checkboxes mirror the mask echoed by the server", () => {
    const mask = new Array<number>(MASK_DIM).fill(0);
    mask[0] = 1; mask[5] = 1;
    ws.serverSends(stateFrame({ mask }));
    expect(ui.maskBoxes.map((b) => (b.checked ? 1 : 0))).toEqual(mask);
  });
});

describe("mode presets", () => {
  it.each(["TRACK", "TELEOP", "LOCO"] as const)("%s button sends set_mode", (mode) => {
    ui.presetButtons.get(mode)!.click();
    expect(lastFrame()).toEqual({ type: "set_mode", mode });
  });
});

describe("sliders", () => {
  it("vx slider emits a 26-entry goal with only the vx slot set", () => {
    ui.vxSlider.value = "0.6";
    fire(ui.vxSlider, "input");
    const msg = lastFrame();
    expect(msg.type).toBe("set_goal");
    const goal = msg.goal as number[];
    expect(goal.length).toBe(26);
    expect(goal[3]).toBe(0.6);
    expect(goal.filter((g) => g !== 0).length).toBe(1);
  });

  it("lambda slider at zero emits the exact integer zero", () => {
    ui.lambdaSlider.value = "1.25";
    fire(ui.lambdaSlider, "input");
    ui.lambdaSlider.value = "0";
    fire(ui.lambdaSlider, "input");
    // Wire bytes matter here: the modulation-off guarantee holds at exactly 0.
    expect(ws.sent[ws.sent.length - 1]).toBe('{"type":"set_modulation","lambda":0}');
  });

  it("slider range spans [0, 2] for lambda and [0, 1] for alpha", () => {
    expect([ui.lambdaSlider.min, ui.lambdaSlider.max]).toEqual(["0", "2"]);
    expect([ui.alphaSlider.min, ui.alphaSlider.max]).toEqual(["0", "1"]);
  });

  it("alpha slider is inert while composition is disabled", () => {
    ui.alphaSlider.value = "0.7";
    fire(ui.alphaSlider, "input");
    expect(ws.sent.length).toBe(0);
  });
});

describe("composition", () => {
  it("refuses to enable without captured endpoints", () => {
    ui.composeToggle.checked = true;
    fire(ui.composeToggle, "change");
    expect(ws.sent.length).toBe(0);
    expect(ui.composeToggle.checked).toBe(false);
    expect(ui.statusLine.textContent).toContain("capture");
  });

  it("captured endpoints flow into set_composition and alpha updates", () => {
    ws.serverSends(stateFrame());      // provides the mask the captures copy
    ui.vxSlider.value = "0.3";
    fire(ui.vxSlider, "input");
    ui.captureA.click();
    ui.vxSlider.value = "0.9";
    fire(ui.vxSlider, "input");
    ui.captureB.click();
    ws.sent.length = 0;

    ui.composeToggle.checked = true;
    fire(ui.composeToggle, "change");
    let msg = lastFrame();
    expect(msg.type).toBe("set_composition");
    expect(msg.enabled).toBe(true);
    expect((msg.a as { goal: number[] }).goal[3]).toBe(0.3);
    expect((msg.b as { goal: number[] }).goal[3]).toBe(0.9);

    ui.alphaSlider.value = "0.25";
    fire(ui.alphaSlider, "input");
    msg = lastFrame();
    expect(msg.alpha).toBe(0.25);

    ui.composeToggle.checked = false;
    fire(ui.composeToggle, "change");
    msg = lastFrame();
    expect(msg).toMatchObject({ type: "set_composition", enabled: false });
  });
});

describe("clip tracking", () => {
  it("the hello reply fills the clip picker", () => {
    const labels = Array.from(ui.clipSelect.options).map((o) => o.value);
    expect(labels).toEqual(["", "stand", "hop", "walk_forward_0.6"]);
  });

  it("reset with a clip starts tracking; a manual goal stops it", () => {
    ui.clipSelect.value = "hop";
    ui.resetButton.click();
    expect(lastFrame()).toEqual({ type: "reset", clip: "hop" });
    expect(ui.trackingClip()).toBe("hop");

    ui.vxSlider.value = "0.5";
    fire(ui.vxSlider, "input");
    expect(ui.trackingClip()).toBeNull();
  });

  it("reset with no clip selected omits the clip field", () => {
    ui.clipSelect.value = "";
    ui.resetButton.click();
    expect(lastFrame()).toEqual({ type: "reset" });
  });
});

describe("pause button", () => {
  it("label follows server pause state and sends the right command", () => {
    ws.serverSends(stateFrame({ paused: false }));
    expect(ui.pauseButton.textContent).toBe("Pause");
    ui.pauseButton.click();
    expect(lastFrame()).toEqual({ type: "pause" });

    ws.serverSends(stateFrame({ paused: true }));
    expect(ui.pauseButton.textContent).toBe("Resume");
    ui.pauseButton.click();
    expect(lastFrame()).toEqual({ type: "resume" });
  });
});

describe("every frame the panel emitted in this suite is schema-valid", () => {
  it("sweeps all controls and validates the full transcript", () => {
    ws.serverSends(stateFrame());
    for (const box of ui.maskBoxes) {
      box.checked = !box.checked;
      fire(box, "change");
    }
    for (const mode of ["TRACK", "TELEOP", "LOCO"] as const) {
      ui.presetButtons.get(mode)!.click();
    }
    for (const v of ["-0.6", "0", "1.2"]) {
      ui.vxSlider.value = v;
      fire(ui.vxSlider, "input");
    }
    for (const v of ["0", "1", "2"]) {
      ui.lambdaSlider.value = v;
      fire(ui.lambdaSlider, "input");
    }
    ui.resetButton.click();
    ui.pauseButton.click();
    const transcript = frames();
    expect(transcript.length).toBeGreaterThan(20);
    for (const frame of transcript) {
      expect(validateClient(frame)).toBe(true);
    }
  });
});

describe("helper functions", () => {
  it("sliderNumber maps endpoint strings to exact numbers", () => {
    expect(Object.is(sliderNumber("0"), 0)).toBe(true);
    expect(sliderNumber("2")).toBe(2);
    expect(sliderNumber("0.35")).toBe(0.35);
  });

  it("maskFromChecks maps booleans to bits", () => {
    const checks = new Array<boolean>(MASK_DIM).fill(false);
    checks[4] = true;
    const mask = maskFromChecks(checks);
    expect(mask[4]).toBe(1);
    expect(mask.reduce((a, b) => a + b, 0)).toBe(1);
    expect(() => maskFromChecks([true])).toThrow(/17/);
  });
});
