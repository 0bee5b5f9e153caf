// Wire schema shared with the session server. Field names are part of
// the contract; unknown fields are ignored on both sides.

export interface Handshake {
  type: "handshake";
  session: string;
  mapping: { center_hip: number; center_knee: number; half_span: number };
  path_screen: [number, number][];
  deadband_radius: number;
  gait_period_s: number;
  frame_rate: number;
  control_rate: number;
  trial_s: number;
  days: number;
  generations_per_day: number;
  lam: number;
}

export type Phase = "idle" | "running" | "break" | "validation";

export interface FrameMessage {
  type: "frame";
  server_time_ms: number;
  frame: number;
  phase: Phase;
  reference: [number, number];
  cursor_raw: [number, number] | null;
  cursor_assisted: [number, number] | null;
  deadband_radius: number;
  stiffness: number[] | null;
  trial_remaining_s: number;
  running_cost: number;
  generation: number;
  day: number;
}

export interface InputMessage {
  client_time_ms: number;
  position: [number, number];
}

function isPair(v: unknown): v is [number, number] {
  return Array.isArray(v) && v.length === 2 &&
    typeof v[0] === "number" && typeof v[1] === "number";
}

const PHASES = new Set(["idle", "running", "break", "validation"]);

/** Parse a server message; returns null for anything malformed or of an
 * unknown type (extra fields on known types are simply carried along). */
export function parseServerMessage(text: string): Handshake | FrameMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const m = doc as Record<string, unknown>;
  if (m.type === "handshake") {
    if (typeof m.session !== "string" || !Array.isArray(m.path_screen)) return null;
    if (typeof m.deadband_radius !== "number") return null;
    return m as unknown as Handshake;
  }
  if (m.type === "frame") {
    if (!PHASES.has(m.phase as string)) return null;
    if (!isPair(m.reference)) return null;
    if (m.cursor_raw !== null && !isPair(m.cursor_raw)) return null;
    if (m.cursor_assisted !== null && !isPair(m.cursor_assisted)) return null;
    return m as unknown as FrameMessage;
  }
  return null;
}

export function encodeInput(position: [number, number], clientTimeMs: number): string {
  const clamp = (v: number) => Math.min(Math.max(v, 0), 1);
  const message: InputMessage = {
    client_time_ms: clientTimeMs,
    position: [clamp(position[0]), clamp(position[1])],
  };
  return JSON.stringify(message);
}
