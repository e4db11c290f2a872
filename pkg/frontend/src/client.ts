/**
 * WebSocket steering client.
 *
 * Owns the connection lifecycle and the outgoing send policy: discrete
 * commands (hello/reset/set_mode/pause/resume) go out immediately, while
 * continuous controls (set_goal/set_mask/set_modulation/set_composition) are
 * rate-limited per message type so slider drags cannot exceed 20 Hz on the
 * wire.  The service pauses the session when a client disconnects, so after
 * every successful hello handshake the client sends an explicit resume.
 */

import type { ClientMsg, ErrorMsg, HelloReply, ServerMsg, StateMsg } from "./protocol.js";
import { decodeServer, encode, hello, resume } from "./protocol.js";
import type { Clock, Scheduler } from "./rate.js";
import { RateLimiter } from "./rate.js";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  addEventListener(type: string, listener: (ev: { data?: unknown }) => void): void;
}

export type WsFactory = (url: string) => WebSocketLike;

export interface ClientOptions {
  wsFactory?: WsFactory;
  /** Send resume after each hello handshake (disconnects pause the session). */
  autoResume?: boolean;
  autoReconnect?: boolean;
  reconnectDelayMs?: number;
  /** Minimum interval between frames of one continuous message type. */
  sendIntervalMs?: number;
  clock?: Clock;
  scheduler?: Scheduler;
}

const CONTINUOUS_TYPES = new Set([
  "set_goal", "set_mask", "set_modulation", "set_composition",
]);

export class SteeringClient {
  readonly url: string;

  open = false;
  helloReply: HelloReply | null = null;
  lastState: StateMsg | null = null;
  stateCount = 0;
  droppedSends = 0;

  onOpen: () => void = () => {};
  onClose: () => void = () => {};
  onHello: (msg: HelloReply) => void = () => {};
  onState: (msg: StateMsg) => void = () => {};
  onError: (msg: ErrorMsg) => void = () => {};

  private ws: WebSocketLike | null = null;
  private readonly wsFactory: WsFactory;
  private readonly autoResume: boolean;
  private readonly autoReconnect: boolean;
  private readonly reconnectDelayMs: number;
  private readonly scheduler: Scheduler;
  private readonly limiter: RateLimiter;
  private closedByUser = false;

  constructor(url: string, options: ClientOptions = {}) {
    this.url = url;
    this.wsFactory = options.wsFactory
      ?? ((u) => new WebSocket(u) as unknown as WebSocketLike);
    this.autoResume = options.autoResume ?? true;
    this.autoReconnect = options.autoReconnect ?? false;
    this.reconnectDelayMs = options.reconnectDelayMs ?? 1000;
    this.scheduler = options.scheduler ?? ((cb, ms) => { setTimeout(cb, ms); });
    this.limiter = new RateLimiter(
      (frame) => this.rawSend(frame),
      options.sendIntervalMs ?? 50,
      options.clock ?? (() => Date.now()),
      this.scheduler,
    );
  }

  connect(): void {
    this.closedByUser = false;
    const ws = this.wsFactory(this.url);
    this.ws = ws;
    ws.addEventListener("open", () => {
      this.open = true;
      this.onOpen();
      this.rawSend(encode(hello()));
    });
    ws.addEventListener("message", (ev) => {
      if (typeof ev.data === "string") this.handleFrame(ev.data);
    });
    ws.addEventListener("close", () => {
      this.open = false;
      this.ws = null;
      this.onClose();
      if (this.autoReconnect && !this.closedByUser) {
        this.scheduler(() => this.connect(), this.reconnectDelayMs);
      }
    });
  }

  close(): void {
    this.closedByUser = true;
    this.ws?.close();
  }

  /** Send one protocol message, applying the per-type rate limit. */
  send(msg: ClientMsg): void {
    if (!this.open) {
      this.droppedSends += 1;
      return;
    }
    const frame = encode(msg);
    if (CONTINUOUS_TYPES.has(msg.type)) {
      this.limiter.push(msg.type, frame);
    } else {
      this.rawSend(frame);
    }
  }

  private rawSend(frame: string): void {
    if (!this.open || this.ws === null) {
      this.droppedSends += 1;
      return;
    }
    this.ws.send(frame);
  }

  private handleFrame(text: string): void {
    const msg: ServerMsg | null = decodeServer(text);
    if (msg === null) return;
    switch (msg.type) {
      case "hello":
        this.helloReply = msg;
        this.onHello(msg);
        if (this.autoResume) this.rawSend(encode(resume()));
        break;
      case "state":
        this.lastState = msg;
        this.stateCount += 1;
        this.onState(msg);
        break;
      case "error":
        this.onError(msg);
        break;
    }
  }
}
