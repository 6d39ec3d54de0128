// Road-strip renderer: a pure function of the latest frame plus local input
// state, drawing through a narrow 2D-context interface so tests can record
// the call sequence.

import { StateFrame, EventMessage } from "./protocol.js";
import { PedalState } from "./pedals.js";

export interface Draw2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  set fillStyle(style: string);
  set strokeStyle(style: string);
  set font(font: string);
}

export interface RenderInputs {
  frame: StateFrame | null;
  pedals: PedalState;
  latencyMs: number;
  stale: boolean;
  banner: EventMessage | null;
  width: number;
  height: number;
}

export const ROLE_COLORS: Record<string, string> = {
  head: "#222222",
  cav: "#d62728",
  hdv: "#1f77b4",
  human: "#2ca02c",
};

const ATTACK_EPS = 1e-9;

export function renderFrame(ctx: Draw2D, inputs: RenderInputs): void {
  const { width, height } = inputs;
  ctx.clearRect(0, 0, width, height);

  ctx.fillStyle = "#f4f4f4";
  ctx.fillRect(0, 0, width, height);
  const roadY = height * 0.45;
  ctx.fillStyle = "#888888";
  ctx.fillRect(0, roadY, width, height * 0.12);

  if (inputs.frame === null) {
    ctx.fillStyle = "#000000";
    ctx.font = "16px sans-serif";
    ctx.fillText("waiting for state frames...", 20, 30);
    return;
  }
  const frame = inputs.frame;
  const head = frame.vehicles[0];
  const margin = 60;
  const span = Math.max(
    20,
    head.pos - frame.vehicles[frame.vehicles.length - 1].pos,
  );
  const scale = (width - 2 * margin) / span;

  for (const veh of frame.vehicles) {
    const x = width - margin - (head.pos - veh.pos) * scale;
    ctx.fillStyle = ROLE_COLORS[veh.role] ?? "#777777";
    ctx.fillRect(x - 14, roadY - 14, 28, 14);
    ctx.fillStyle = "#000000";
    ctx.font = "11px sans-serif";
    ctx.fillText(`${veh.vel.toFixed(1)} m/s`, x - 18, roadY - 22);
    if (veh.id > 0) {
      ctx.fillText(`${veh.spacing.toFixed(1)} m`, x - 18, roadY + 28);
    }
  }

  // command vs received input: a visible gap means an active attack
  const attacked = Math.abs(frame.cav.u_received - frame.cav.u_sent) > ATTACK_EPS;
  ctx.font = "13px sans-serif";
  ctx.fillStyle = attacked ? "#d62728" : "#000000";
  ctx.fillText(
    `u_sent ${frame.cav.u_sent.toFixed(2)}  u_received ${frame.cav.u_received.toFixed(2)}` +
      (attacked ? "  ATTACK" : ""),
    20,
    height - 44,
  );

  ctx.fillStyle = "#000000";
  ctx.fillText(
    `throttle ${inputs.pedals.throttle.toFixed(2)}  brake ${inputs.pedals.brake.toFixed(2)}`,
    20,
    height - 26,
  );
  ctx.fillText(`t=${frame.t.toFixed(2)}s  tick ${frame.tick}  latency ${inputs.latencyMs.toFixed(0)} ms`, 20, 22);

  if (inputs.stale) {
    ctx.fillStyle = "#d62728";
    ctx.fillText("STALE FRAME", width - 140, 22);
  }
  if (inputs.banner) {
    ctx.fillStyle = "#b8860b";
    ctx.fillText(`[${inputs.banner.kind}] ${inputs.banner.detail}`, 20, 44);
  }
}
