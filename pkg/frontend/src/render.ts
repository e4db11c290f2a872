/**
 * Canvas renderer for the planar humanoid.
 *
 * Draws ground, reference ghost, and robot skeleton from the keypoints
 * carried by each state frame; the camera follows the base horizontally.
 * Only a small structural subset of CanvasRenderingContext2D is required,
 * so tests can drive the renderer with a stub context and measure frame
 * cost without a real canvas.
 */

import type { StateMsg } from "./protocol.js";

/** The drawing surface the renderer needs (subset of CanvasRenderingContext2D). */
export interface Ctx2D {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  globalAlpha: number;
  font: string;
  setTransform(a: number, b: number, c: number, d: number, e: number, f: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
}

/** Keypoint index pairs forming the drawable links (see MASK_BIT_NAMES order:
 *  torso_top, hip, knee_l, ankle_l, toe_l, knee_r, ankle_r). */
const LINKS: ReadonlyArray<readonly [number, number]> = [
  [0, 1],           // torso
  [1, 2], [2, 3], [3, 4],  // left leg: hip-knee-ankle-toe
  [1, 5], [5, 6],          // right leg: hip-knee-ankle
];

export interface Hud {
  connected: boolean;
  trackingClip: string | null;
}

const COLORS = {
  background: "#10141a",
  ground: "#3c4756",
  tick: "#2a333f",
  robot: "#6fd3ff",
  joint: "#d9ecff",
  ghost: "#8899aa",
  text: "#c8d4e0",
  paused: "#ffb347",
};

export class Renderer {
  /** Pixels per meter. */
  scale = 130;
  private camX = 0;
  frameCount = 0;

  constructor(
    private ctx: Ctx2D,
    private width: number,
    private height: number,
  ) {}

  resize(width: number, height: number): void {
    this.width = width;
    this.height = height;
  }

  /** World (x up-forward, z up) to screen pixels. */
  private toScreen(x: number, z: number): [number, number] {
    const groundY = this.height * 0.82;
    return [
      this.width / 2 + (x - this.camX) * this.scale,
      groundY - z * this.scale,
    ];
  }

  draw(state: StateMsg | null, hud: Hud): void {
    const ctx = this.ctx;
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.globalAlpha = 1;
    ctx.fillStyle = COLORS.background;
    ctx.fillRect(0, 0, this.width, this.height);

    if (state !== null) {
      // Smooth horizontal follow; snaps on large jumps (resets).
      const dx = state.base[0] - this.camX;
      this.camX += Math.abs(dx) > 3 ? dx : dx * 0.15;
    }

    this.drawGround();
    if (state !== null) {
      if (state.ref != null) {
        this.drawSkeleton(state.ref.keypoints, COLORS.ghost, 0.35);
      }
      this.drawSkeleton(state.keypoints, COLORS.robot, 1.0);
      this.drawHudText(state, hud);
    } else {
      ctx.globalAlpha = 1;
      ctx.fillStyle = COLORS.text;
      ctx.font = "14px monospace";
      ctx.fillText(hud.connected ? "waiting for state…" : "disconnected", 16, 24);
    }
    this.frameCount += 1;
  }

  private drawGround(): void {
    const ctx = this.ctx;
    const [, groundY] = this.toScreen(this.camX, 0);
    ctx.globalAlpha = 1;
    ctx.strokeStyle = COLORS.ground;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(0, groundY);
    ctx.lineTo(this.width, groundY);
    ctx.stroke();

    // Distance ticks every 0.5 m so horizontal motion is visible.
    const span = this.width / this.scale;
    const first = Math.floor((this.camX - span / 2) / 0.5) * 0.5;
    ctx.strokeStyle = COLORS.tick;
    ctx.lineWidth = 1;
    for (let x = first; x < this.camX + span / 2 + 0.5; x += 0.5) {
      const [sx] = this.toScreen(x, 0);
      ctx.beginPath();
      ctx.moveTo(sx, groundY);
      ctx.lineTo(sx, groundY + (Math.round(x / 0.5) % 2 === 0 ? 10 : 5));
      ctx.stroke();
    }
  }

  private drawSkeleton(keypoints: number[][], color: string, alpha: number): void {
    const ctx = this.ctx;
    ctx.globalAlpha = alpha;
    ctx.strokeStyle = color;
    ctx.lineWidth = 3;
    for (const [i, j] of LINKS) {
      const [x0, y0] = this.toScreen(keypoints[i][0], keypoints[i][1]);
      const [x1, y1] = this.toScreen(keypoints[j][0], keypoints[j][1]);
      ctx.beginPath();
      ctx.moveTo(x0, y0);
      ctx.lineTo(x1, y1);
      ctx.stroke();
    }
    ctx.fillStyle = COLORS.joint;
    for (const kp of keypoints) {
      const [sx, sy] = this.toScreen(kp[0], kp[1]);
      ctx.beginPath();
      ctx.arc(sx, sy, 3.5, 0, Math.PI * 2);
      ctx.fill();
    }
    ctx.globalAlpha = 1;
  }

  private drawHudText(state: StateMsg, hud: Hud): void {
    const ctx = this.ctx;
    ctx.globalAlpha = 1;
    ctx.fillStyle = COLORS.text;
    ctx.font = "13px monospace";
    const activeBits = state.mask.reduce((acc, b) => acc + (b !== 0 ? 1 : 0), 0);
    ctx.fillText(
      `t=${state.t.toFixed(2)}s  x=${state.base[0].toFixed(2)}m` +
      `  |z|=${state.z_norm.toFixed(2)}  mask=${activeBits}/17`,
      16, 24,
    );
    const tags: string[] = [];
    if (!hud.connected) tags.push("DISCONNECTED");
    if (state.paused) tags.push("PAUSED");
    if (hud.trackingClip !== null) tags.push(`tracking ${hud.trackingClip}`);
    if (tags.length > 0) {
      ctx.fillStyle = state.paused || !hud.connected ? COLORS.paused : COLORS.text;
      ctx.fillText(tags.join("  "), 16, 44);
    }
  }
}
