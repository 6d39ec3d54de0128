// Connection state machine over the harness wire protocol.  The websocket
// implementation is injected so the browser uses the native WebSocket and
// tests can use the 'ws' package or a stub.

import {
  EventMessage,
  StateFrame,
  helloMessage,
  parseServerMessage,
  pedalMessage,
} from "./protocol.js";

export type ConnectionStatus =
  | "connecting"
  | "connected"
  | "claimed"
  | "rejected"
  | "closed"
  | "error";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => WebSocketLike;

export interface SessionState {
  status: ConnectionStatus;
  vehicleId: number;
  latestFrame: StateFrame | null;
  latencyMs: number;
  inputMode: "keyboard" | "gamepad";
  events: EventMessage[];
  framesSeen: number;
}

export interface SessionOptions {
  tickHz?: number;
  now?: () => number; // ms clock, injectable for tests
  onFrame?: (frame: StateFrame) => void;
  onEvent?: (ev: EventMessage) => void;
  onChange?: (state: SessionState) => void;
}

export class Session {
  readonly state: SessionState;
  private ws: WebSocketLike;
  private readonly period: number;
  private readonly now: () => number;
  private t0: number | null = null;
  private opts: SessionOptions;

  constructor(factory: SocketFactory, url: string, vehicleId: number, opts: SessionOptions = {}) {
    this.opts = opts;
    this.now = opts.now ?? (() => Date.now());
    this.period = 1000 / (opts.tickHz ?? 20);
    this.state = {
      status: "connecting",
      vehicleId,
      latestFrame: null,
      latencyMs: 0,
      inputMode: "keyboard",
      events: [],
      framesSeen: 0,
    };
    this.ws = factory(url);
    this.ws.onopen = () => {
      this.state.status = "connected";
      this.ws.send(JSON.stringify(helloMessage(vehicleId)));
      this.changed();
    };
    this.ws.onmessage = (ev) => this.handleMessage(String(ev.data));
    this.ws.onclose = () => {
      if (this.state.status !== "rejected") this.state.status = "closed";
      this.changed();
    };
    this.ws.onerror = () => {
      if (this.state.status === "connecting") this.state.status = "error";
      this.changed();
    };
  }

  private handleMessage(raw: string) {
    const msg = parseServerMessage(raw);
    if (msg === null) return; // unknown message types are ignored
    if (msg.type === "event") {
      this.state.events.push(msg);
      if (msg.kind === "claim-accepted") this.state.status = "claimed";
      if (msg.kind === "claim-rejected") this.state.status = "rejected";
      this.opts.onEvent?.(msg);
      this.changed();
      return;
    }
    this.state.latestFrame = msg;
    this.state.framesSeen += 1;
    const t = this.now();
    if (this.t0 === null) this.t0 = t - msg.tick * this.period;
    this.state.latencyMs = Math.max(0, t - (this.t0 + msg.tick * this.period));
    this.opts.onFrame?.(msg);
    this.changed();
  }

  /** Clamped pedal values go out once per rendered frame. */
  sendPedals(throttle: number, brake: number) {
    if (this.state.status !== "claimed") return;
    this.ws.send(JSON.stringify(pedalMessage(this.state.vehicleId, throttle, brake)));
  }

  /** Frames older than three tick periods are flagged stale for the renderer. */
  isStale(): boolean {
    if (this.state.latestFrame === null || this.t0 === null) return true;
    const expected = this.t0 + this.state.latestFrame.tick * this.period;
    return this.now() - expected > 3 * this.period;
  }

  close() {
    this.ws.close();
  }

  private changed() {
    this.opts.onChange?.(this.state);
  }
}
