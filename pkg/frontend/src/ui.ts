/**
 * Control panel: mask toggles, mode presets, sliders, clip picker.
 *
 * Every handler funnels through the protocol builders, so the panel can only
 * emit schema-valid frames.  Checkbox state is driven by the mask echoed in
 * each state frame rather than a local copy of the preset tables — the server
 * owns the control semantics, the panel just reflects them.
 */

import type { SteeringClient } from "./client.js";
import type { GoalSpec, HelloReply, Mode, StateMsg } from "./protocol.js";
import {
  GOAL_DIM, MASK_BIT_NAMES, MASK_DIM, MODES,
  goalSpec, pause, reset, resume, setComposition, setMask, setMode,
  setModulation, velocityGoal,
} from "./protocol.js";

/** Slider string -> number with exact endpoints ("0" must map to +0 exactly,
 *  so modulation-off round-trips as the integer zero on the wire). */
export function sliderNumber(value: string): number {
  return Number(value);
}

/** Checkbox states -> 17-bit mask vector. */
export function maskFromChecks(checks: readonly boolean[]): number[] {
  if (checks.length !== MASK_DIM) {
    throw new Error(`expected ${MASK_DIM} checkboxes, got ${checks.length}`);
  }
  return checks.map((c) => (c ? 1 : 0));
}

export interface UiHandles {
  maskBoxes: HTMLInputElement[];
  presetButtons: Map<Mode, HTMLButtonElement>;
  vxSlider: HTMLInputElement;
  lambdaSlider: HTMLInputElement;
  alphaSlider: HTMLInputElement;
  clipSelect: HTMLSelectElement;
  resetButton: HTMLButtonElement;
  pauseButton: HTMLButtonElement;
  captureA: HTMLButtonElement;
  captureB: HTMLButtonElement;
  composeToggle: HTMLInputElement;
  statusLine: HTMLElement;
  /** Clip currently being tracked, for the HUD. */
  trackingClip(): string | null;
  /** Reflect a state frame into the panel. */
  syncFromState(state: StateMsg): void;
  syncFromHello(msg: HelloReply): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document, tag: K, attrs: Record<string, string> = {}, text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function buildUi(root: HTMLElement, client: SteeringClient): UiHandles {
  const doc = root.ownerDocument;
  let tracking: string | null = null;
  let lastGoal: number[] = new Array<number>(GOAL_DIM).fill(0);
  let endpointA: GoalSpec | null = null;
  let endpointB: GoalSpec | null = null;
  let lastMask: number[] = new Array<number>(MASK_DIM).fill(0);

  const statusLine = el(doc, "div", { class: "status" }, "connecting…");
  root.appendChild(statusLine);

  // -- clip picker + reset --------------------------------------------------
  const clipRow = el(doc, "div", { class: "row" });
  const clipSelect = el(doc, "select");
  clipSelect.appendChild(el(doc, "option", { value: "" }, "stand (no clip)"));
  const resetButton = el(doc, "button", {}, "Reset");
  resetButton.addEventListener("click", () => {
    const clip = clipSelect.value === "" ? null : clipSelect.value;
    tracking = clip;
    client.send(reset(clip));
  });
  const pauseButton = el(doc, "button", {}, "Pause");
  let pausedView = false;
  pauseButton.addEventListener("click", () => {
    client.send(pausedView ? resume() : pause());
  });
  clipRow.append(clipSelect, resetButton, pauseButton);
  root.appendChild(clipRow);

  // -- mode presets ---------------------------------------------------------
  const presetRow = el(doc, "div", { class: "row" });
  const presetButtons = new Map<Mode, HTMLButtonElement>();
  for (const mode of MODES) {
    const b = el(doc, "button", {}, mode);
    b.addEventListener("click", () => client.send(setMode(mode)));
    presetButtons.set(mode, b);
    presetRow.appendChild(b);
  }
  root.appendChild(presetRow);

  // -- mask toggles ---------------------------------------------------------
  const maskGrid = el(doc, "div", { class: "mask-grid" });
  const maskBoxes: HTMLInputElement[] = [];
  const sendMask = () => {
    client.send(setMask(maskFromChecks(maskBoxes.map((b) => b.checked))));
  };
  for (const name of MASK_BIT_NAMES) {
    const label = el(doc, "label", {}, name);
    const box = el(doc, "input", { type: "checkbox" });
    box.addEventListener("change", sendMask);
    label.prepend(box);
    maskBoxes.push(box);
    maskGrid.appendChild(label);
  }
  root.appendChild(maskGrid);

  // -- sliders --------------------------------------------------------------
  const makeSlider = (
    name: string, min: string, max: string, step: string, value: string,
    onInput: (v: number) => void,
  ): HTMLInputElement => {
    const row = el(doc, "div", { class: "row" });
    const input = el(doc, "input", { type: "range", min, max, step, value });
    const readout = el(doc, "span", {}, value);
    input.addEventListener("input", () => {
      const v = sliderNumber(input.value);
      readout.textContent = input.value;
      onInput(v);
    });
    row.append(el(doc, "label", {}, name), input, readout);
    root.appendChild(row);
    return input;
  };

  const vxSlider = makeSlider("vx (m/s)", "-0.6", "1.2", "0.05", "0", (v) => {
    tracking = null;
    const msg = velocityGoal(v);
    lastGoal = msg.goal.slice();
    client.send(msg);
  });
  const lambdaSlider = makeSlider("lambda", "0", "2", "0.01", "0", (v) => {
    client.send(setModulation(v));
  });

  // -- composition ----------------------------------------------------------
  const compRow = el(doc, "div", { class: "row" });
  const composeToggle = el(doc, "input", { type: "checkbox" });
  const composeLabel = el(doc, "label", {}, "compose A↔B");
  composeLabel.prepend(composeToggle);
  const captureA = el(doc, "button", {}, "A = current");
  const captureB = el(doc, "button", {}, "B = current");
  compRow.append(composeLabel, captureA, captureB);
  root.appendChild(compRow);

  const sendComposition = (enabled: boolean, alpha: number) => {
    if (enabled && (endpointA === null || endpointB === null)) {
      composeToggle.checked = false;
      statusLine.textContent = "capture endpoints A and B first";
      return;
    }
    client.send(setComposition(enabled, alpha, endpointA, endpointB));
  };
  const alphaSlider = makeSlider("alpha", "0", "1", "0.01", "0.5", (v) => {
    if (composeToggle.checked) sendComposition(true, v);
  });
  captureA.addEventListener("click", () => {
    endpointA = goalSpec(lastGoal.slice(), lastMask.slice());
    captureA.textContent = "A ✓";
  });
  captureB.addEventListener("click", () => {
    endpointB = goalSpec(lastGoal.slice(), lastMask.slice());
    captureB.textContent = "B ✓";
  });
  composeToggle.addEventListener("change", () => {
    sendComposition(composeToggle.checked, sliderNumber(alphaSlider.value));
  });

  // -- reflection -----------------------------------------------------------
  const syncFromState = (state: StateMsg) => {
    lastMask = state.mask.slice();
    state.mask.forEach((bit, i) => { maskBoxes[i].checked = bit !== 0; });
    pausedView = state.paused;
    pauseButton.textContent = state.paused ? "Resume" : "Pause";
  };
  const syncFromHello = (msg: HelloReply) => {
    while (clipSelect.options.length > 1) clipSelect.remove(1);
    for (const clip of msg.clips) {
      clipSelect.appendChild(el(doc, "option", { value: clip }, clip));
    }
    statusLine.textContent =
      `connected  control ${msg.control_hz} Hz / state ${msg.state_hz} Hz`;
  };

  client.onError = (err) => {
    statusLine.textContent = `error ${err.code}: ${err.message}`;
  };

  return {
    maskBoxes, presetButtons, vxSlider, lambdaSlider, alphaSlider,
    clipSelect, resetButton, pauseButton, captureA, captureB, composeToggle,
    statusLine,
    trackingClip: () => tracking,
    syncFromState, syncFromHello,
  };
}
