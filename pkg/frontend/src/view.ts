// View model and draw-list construction. All geometry comes from the
// handshake and the latest frame; the client computes nothing about the
// experiment itself (display interpolation only), so reloading the page
// can never change server state.

import { FrameMessage, Handshake, Phase } from "./messages.js";

export interface TrialScore {
  label: string;
  cost: number;
}

export interface ViewState {
  handshake: Handshake | null;
  frame: FrameMessage | null;
  connected: boolean;
  paused: boolean;
  scores: TrialScore[];
  lastPhase: Phase | null;
  trialsSeen: number;
}

export function initialViewState(): ViewState {
  return {
    handshake: null,
    frame: null,
    connected: false,
    paused: false,
    scores: [],
    lastPhase: null,
    trialsSeen: 0,
  };
}

/** Fold one server frame into the view. A running/validation -> other
 * transition closes a trial and records its final running cost. */
export function applyFrame(state: ViewState, frame: FrameMessage): ViewState {
  const scores = state.scores.slice();
  let trialsSeen = state.trialsSeen;
  const closing =
    (state.lastPhase === "running" || state.lastPhase === "validation") &&
    frame.phase !== state.lastPhase;
  if (closing && state.frame !== null) {
    trialsSeen += 1;
    scores.push({
      label: `${state.lastPhase === "validation" ? "validation" : "trial"} ${trialsSeen}`,
      cost: state.frame.running_cost,
    });
  }
  return {
    ...state,
    frame,
    scores,
    lastPhase: frame.phase,
    trialsSeen,
  };
}

export type DrawOp =
  | { kind: "polyline"; points: [number, number][]; closed: boolean; style: string }
  | { kind: "band"; points: [number, number][]; radius: number; style: string }
  | { kind: "circle"; center: [number, number]; radius: number; style: string; fill: boolean }
  | { kind: "trail"; points: { p: [number, number]; age_s: number }[]; style: string }
  | { kind: "text"; text: string; anchor: [number, number]; style: string };

export interface TrailPoint {
  p: [number, number];
  t_ms: number;
}

export const TRAIL_FADE_MS = 1000;

export function pruneTrail(trail: TrailPoint[], nowMs: number): TrailPoint[] {
  return trail.filter((q) => nowMs - q.t_ms <= TRAIL_FADE_MS);
}

export function bannerText(state: ViewState): string {
  if (!state.connected) return state.paused ? "connection lost - paused" : "connecting...";
  const frame = state.frame;
  if (frame === null) return "waiting for first frame";
  const hs = state.handshake;
  const bout = hs === null ? "" : ` - bout ${frame.generation % hs.generations_per_day + 1}/${hs.generations_per_day} (G${frame.generation + 1})`;
  switch (frame.phase) {
    case "idle":
      return "idle - move the pointer to begin";
    case "break":
      return `rest break - next bout in ${frame.trial_remaining_s.toFixed(0)} s`;
    case "validation":
      return `validation trial - ${frame.trial_remaining_s.toFixed(1)} s left${bout}`;
    default:
      return `trial running - ${frame.trial_remaining_s.toFixed(1)} s left${bout}`;
  }
}

/** The complete draw list for the current state; pure, so tests can
 * assert geometry without a canvas. */
export function buildDrawList(state: ViewState, trail: TrailPoint[], nowMs: number): DrawOp[] {
  const ops: DrawOp[] = [];
  const hs = state.handshake;
  if (hs === null) return ops;

  ops.push({
    kind: "band",
    points: hs.path_screen,
    radius: hs.deadband_radius,
    style: "rgba(120,160,255,0.25)",
  });
  ops.push({ kind: "polyline", points: hs.path_screen, closed: true, style: "#4a6fd4" });

  const frame = state.frame;
  if (frame !== null) {
    ops.push({
      kind: "circle",
      center: frame.reference,
      radius: 0.012,
      style: "#ffcf40",
      fill: true,
    });
    if (trail.length > 0) {
      ops.push({
        kind: "trail",
        points: pruneTrail(trail, nowMs).map((q) => ({
          p: q.p,
          age_s: (nowMs - q.t_ms) / 1000,
        })),
        style: "#9ad0a0",
      });
    }
    if (frame.cursor_raw !== null) {
      ops.push({
        kind: "circle",
        center: frame.cursor_raw,
        radius: 0.006,
        style: "#777777",
        fill: false,
      });
    }
    if (frame.cursor_assisted !== null) {
      ops.push({
        kind: "circle",
        center: frame.cursor_assisted,
        radius: 0.009,
        style: "#3fbf5f",
        fill: true,
      });
    }
    const k = frame.stiffness;
    ops.push({
      kind: "text",
      text:
        `cost ${frame.running_cost.toFixed(3)}` +
        (k !== null ? `  K = [${k.map((v) => v.toFixed(0)).join(", ")}] Nm/rad` : ""),
      anchor: [0.02, 0.96],
      style: "#cccccc",
    });
  }
  ops.push({ kind: "text", text: bannerText(state), anchor: [0.02, 0.04], style: "#ffffff" });
  return ops;
}

/** Rows for the end-of-session results table. */
export function resultsRows(payload: {
  reports: { results: Record<string, { total: number }[]> }[];
}): { condition: string; mean: number }[] {
  const rows: { condition: string; mean: number }[] = [];
  for (const report of payload.reports) {
    for (const [condition, costs] of Object.entries(report.results)) {
      const mean = costs.reduce((a, c) => a + c.total, 0) / costs.length;
      rows.push({ condition, mean });
    }
  }
  return rows;
}
