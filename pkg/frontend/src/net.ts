// Stream client: sends pointer input at the display rate and hands
// parsed server messages to callbacks. Reconnects after connection loss;
// the server resumes the session at the next trial boundary.

import { encodeInput, FrameMessage, Handshake, parseServerMessage } from "./messages.js";

export interface StreamCallbacks {
  onHandshake: (h: Handshake) => void;
  onFrame: (f: FrameMessage) => void;
  onStatus: (connected: boolean) => void;
}

export class StreamClient {
  private ws: WebSocket | null = null;
  private sendTimer: number | null = null;
  private reconnectTimer: number | null = null;
  private closed = false;
  latestPointer: [number, number] | null = null;

  constructor(
    private url: string,
    private callbacks: StreamCallbacks,
    private sendHz = 50,
  ) {}

  connect(): void {
    this.closed = false;
    this.open();
  }

  private open(): void {
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.callbacks.onStatus(true);
      this.startSending();
    };
    ws.onmessage = (event) => {
      const message = parseServerMessage(String(event.data));
      if (message === null) return;
      if (message.type === "handshake") this.callbacks.onHandshake(message);
      else this.callbacks.onFrame(message);
    };
    ws.onclose = () => {
      this.stopSending();
      this.callbacks.onStatus(false);
      if (!this.closed) {
        this.reconnectTimer = setTimeout(() => this.open(), 1000) as unknown as number;
      }
    };
    ws.onerror = () => ws.close();
  }

  private startSending(): void {
    this.stopSending();
    this.sendTimer = setInterval(() => {
      if (this.latestPointer !== null && this.ws?.readyState === WebSocket.OPEN) {
        this.ws.send(encodeInput(this.latestPointer, performance.now()));
      }
    }, 1000 / this.sendHz) as unknown as number;
  }

  private stopSending(): void {
    if (this.sendTimer !== null) {
      clearInterval(this.sendTimer);
      this.sendTimer = null;
    }
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.stopSending();
    this.ws?.close();
  }
}
