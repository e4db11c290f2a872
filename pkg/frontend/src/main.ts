/**
 * Browser entry point: connect, build the panel, and render at display rate.
 *
 * State frames arrive at up to 30 Hz and only the newest is kept; the
 * requestAnimationFrame loop redraws from that latest frame, so a slow
 * display can never stall the socket reader.
 */

import { SteeringClient } from "./client.js";
import { Renderer } from "./render.js";
import { buildUi } from "./ui.js";

function wsUrl(loc: Location): string {
  const scheme = loc.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${loc.host}/ws`;
}

function boot(): void {
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const panel = document.getElementById("panel") as HTMLElement;
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("2d canvas context unavailable");

  const client = new SteeringClient(wsUrl(window.location), {
    autoReconnect: true,
  });
  const renderer = new Renderer(ctx, canvas.width, canvas.height);
  const ui = buildUi(panel, client);

  client.onHello = (msg) => ui.syncFromHello(msg);
  client.onState = (msg) => ui.syncFromState(msg);
  client.onClose = () => { ui.statusLine.textContent = "disconnected — retrying…"; };

  const resize = () => {
    canvas.width = canvas.clientWidth;
    canvas.height = canvas.clientHeight;
    renderer.resize(canvas.width, canvas.height);
  };
  window.addEventListener("resize", resize);
  resize();

  const frame = () => {
    renderer.draw(client.lastState, {
      connected: client.open,
      trackingClip: ui.trackingClip(),
    });
    window.requestAnimationFrame(frame);
  };
  window.requestAnimationFrame(frame);
  client.connect();
}

boot();
