// Page bootstrap: ?server=host:port&session=<id> selects the live
// session; pointer input streams up, frames render at the display rate.

import { FrameMessage, Handshake } from "./messages.js";
import { StreamClient } from "./net.js";
import { paint } from "./render.js";
import {
  applyFrame,
  buildDrawList,
  initialViewState,
  resultsRows,
  TrailPoint,
  ViewState,
} from "./view.js";

const params = new URLSearchParams(window.location.search);
const server = params.get("server") ?? window.location.host;
const sessionId = params.get("session") ?? "";

const canvas = document.getElementById("arena") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const tableDiv = document.getElementById("results") as HTMLDivElement;

let state: ViewState = initialViewState();
let trail: TrailPoint[] = [];
let sessionDone = false;

function resize(): void {
  canvas.width = canvas.clientWidth;
  canvas.height = canvas.clientHeight;
}
window.addEventListener("resize", resize);
resize();

const client = new StreamClient(`ws://${server}/sessions/${sessionId}/stream`, {
  onHandshake(h: Handshake) {
    state = { ...state, handshake: h };
  },
  onFrame(f: FrameMessage) {
    state = applyFrame(state, f);
    if (f.cursor_assisted !== null) {
      trail.push({ p: f.cursor_assisted, t_ms: performance.now() });
    }
    if (f.phase === "idle" && f.generation > 0 && !sessionDone) {
      sessionDone = true;
      void showResults();
    }
  },
  onStatus(connected: boolean) {
    state = { ...state, connected, paused: !connected && state.frame !== null };
  },
});
client.connect();

canvas.addEventListener("pointermove", (ev) => {
  const rect = canvas.getBoundingClientRect();
  client.latestPointer = [
    (ev.clientX - rect.left) / rect.width,
    1 - (ev.clientY - rect.top) / rect.height,
  ];
});

async function showResults(): Promise<void> {
  const response = await fetch(`http://${server}/sessions/${sessionId}/results`);
  const payload = await response.json();
  const rows = resultsRows(payload);
  const cells = rows
    .map((r) => `<tr><td>${r.condition}</td><td>${r.mean.toFixed(4)}</td></tr>`)
    .join("");
  tableDiv.innerHTML =
    `<h3>validation results (mean cost)</h3>` +
    `<table><tr><th>condition</th><th>cost</th></tr>${cells}</table>`;
}

function loop(): void {
  const now = performance.now();
  trail = trail.filter((q) => now - q.t_ms <= 1000);
  paint(ctx, buildDrawList(state, trail, now));
  requestAnimationFrame(loop);
}
requestAnimationFrame(loop);
