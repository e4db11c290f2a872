/** Shared test doubles: fake sockets, a manual clock, and the schema loader. */

import { readFileSync } from "node:fs";
import { resolve } from "node:path";

import Ajv2020 from "ajv/dist/2020.js";

import type { WebSocketLike } from "../src/client.js";

// The one schema file shared with the service: the Python suite pins it to
// the service's live /schema output, and these tests validate every frame
// the UI can emit against it.  Tests run with cwd at frontend/ (vitest root),
// one level below the repository root that holds schema/.
export const SCHEMA_PATH = resolve(process.cwd(), "../schema/protocol.schema.json");

export interface ProtocolSchema {
  protocol_version: number;
  client: Record<string, unknown>;
  server: Record<string, unknown>;
}

export function loadSchema(): ProtocolSchema {
  return JSON.parse(readFileSync(SCHEMA_PATH, "utf-8")) as ProtocolSchema;
}

export type Validator = (value: unknown) => boolean;

export function compileValidator(schema: Record<string, unknown>): Validator {
  // `strict: false` tolerates pydantic's OpenAPI-style discriminator block;
  // validation still goes through the oneOf variants.
  const ajv = new Ajv2020({ strict: false, allErrors: true });
  const validate = ajv.compile(schema);
  return (value: unknown) => validate(value) === true;
}

// -- fake websocket ---------------------------------------------------------
type Listener = (ev: { data?: unknown }) => void;

export class FakeWebSocket implements WebSocketLike {
  sent: string[] = [];
  closed = false;
  private listeners = new Map<string, Listener[]>();

  addEventListener(type: string, listener: Listener): void {
    const arr = this.listeners.get(type) ?? [];
    arr.push(listener);
    this.listeners.set(type, arr);
  }

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.fire("close", {});
  }

  fire(type: string, ev: { data?: unknown }): void {
    for (const cb of this.listeners.get(type) ?? []) cb(ev);
  }

  serverSends(payload: unknown): void {
    this.fire("message", {
      data: typeof payload === "string" ? payload : JSON.stringify(payload),
    });
  }
}

// -- manual clock -----------------------------------------------------------
export class ManualClock {
  t = 0;
  private timers: { at: number; cb: () => void }[] = [];

  now = (): number => this.t;

  schedule = (cb: () => void, delayMs: number): void => {
    this.timers.push({ at: this.t + delayMs, cb });
  };

  /** Advance time, firing due timers in order. */
  advance(toMs: number): void {
    for (;;) {
      const due = this.timers
        .filter((x) => x.at <= toMs)
        .sort((a, b) => a.at - b.at)[0];
      if (due === undefined) break;
      this.timers.splice(this.timers.indexOf(due), 1);
      this.t = due.at;
      due.cb();
    }
    this.t = toMs;
  }
}

// -- fixtures ---------------------------------------------------------------
export function stateFrame(overrides: Record<string, unknown> = {}): Record<string, unknown> {
  return {
    type: "state",
    t: 0.02,
    base: [0.1, 0.62, 0.01],
    q: [0.3, -0.6, 0.2, 0.31, -0.59, 0.21],
    dq: [0, 0, 0, 0, 0, 0],
    keypoints: [
      [0.1, 1.1], [0.1, 0.62], [0.12, 0.35], [0.1, 0.08], [0.22, 0.02],
      [0.08, 0.36], [0.1, 0.08],
    ],
    mask: [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1],
    z_norm: 1.7,
    paused: false,
    ref: null,
    ...overrides,
  };
}

export function helloReplyFrame(clips: string[] = ["stand", "hop"]): Record<string, unknown> {
  return {
    type: "hello",
    protocol_version: 1,
    clips,
    control_hz: 50.0,
    state_hz: 30.0,
    mask_dim: 17,
    goal_dim: 26,
  };
}
