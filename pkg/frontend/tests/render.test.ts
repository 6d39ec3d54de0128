import { describe, expect, it } from "vitest";
import { Draw2D, renderFrame, ROLE_COLORS } from "../src/render.js";
import { StateFrame } from "../src/protocol.js";

class RecordingCtx implements Draw2D {
  ops: string[] = [];
  texts: string[] = [];
  styles: string[] = [];
  clearRect(x: number, y: number, w: number, h: number) {
    this.ops.push(`clear ${x},${y},${w},${h}`);
  }
  fillRect() {
    this.ops.push("fillRect");
  }
  strokeRect() {
    this.ops.push("strokeRect");
  }
  fillText(text: string) {
    this.ops.push("fillText");
    this.texts.push(text);
  }
  set fillStyle(style: string) {
    this.styles.push(style);
  }
  set strokeStyle(_style: string) {}
  set font(_font: string) {}
}

function frame(uSent: number, uReceived: number): StateFrame {
  return {
    type: "state",
    t: 2.5,
    tick: 50,
    vehicles: [
      { id: 0, role: "head", pos: 0, vel: 18, spacing: 0 },
      { id: 1, role: "cav", pos: -20, vel: 18, spacing: 20 },
      { id: 2, role: "human", pos: -40, vel: 18, spacing: 20 },
    ],
    cav: { u_sent: uSent, u_received: uReceived },
  };
}

const baseInputs = {
  pedals: { throttle: 0.5, brake: 0 },
  latencyMs: 12,
  stale: false,
  banner: null,
  width: 960,
  height: 420,
};

describe("renderFrame", () => {
  it("is a pure function of its inputs (identical call sequences)", () => {
    const a = new RecordingCtx();
    const b = new RecordingCtx();
    renderFrame(a, { ...baseInputs, frame: frame(0.1, 0.1) });
    renderFrame(b, { ...baseInputs, frame: frame(0.1, 0.1) });
    expect(a.ops).toEqual(b.ops);
    expect(a.texts).toEqual(b.texts);
    expect(a.styles).toEqual(b.styles);
  });

  it("draws every vehicle with its role color", () => {
    const ctx = new RecordingCtx();
    renderFrame(ctx, { ...baseInputs, frame: frame(0, 0) });
    for (const role of ["head", "cav", "human"]) {
      expect(ctx.styles).toContain(ROLE_COLORS[role]);
    }
    expect(ctx.texts.some((t) => t.includes("18.0 m/s"))).toBe(true);
    expect(ctx.texts.some((t) => t.includes("20.0 m"))).toBe(true);
  });

  it("highlights an active attack", () => {
    const ctx = new RecordingCtx();
    renderFrame(ctx, { ...baseInputs, frame: frame(0.2, 1.4) });
    expect(ctx.texts.some((t) => t.includes("ATTACK"))).toBe(true);
    const clean = new RecordingCtx();
    renderFrame(clean, { ...baseInputs, frame: frame(0.2, 0.2) });
    expect(clean.texts.some((t) => t.includes("ATTACK"))).toBe(false);
  });

  it("flags stale frames and shows banners", () => {
    const ctx = new RecordingCtx();
    renderFrame(ctx, {
      ...baseInputs,
      frame: frame(0, 0),
      stale: true,
      banner: { type: "event", kind: "tick-overrun", detail: "12 ms late" },
    });
    expect(ctx.texts.some((t) => t.includes("STALE"))).toBe(true);
    expect(ctx.texts.some((t) => t.includes("tick-overrun"))).toBe(true);
  });

  it("renders a waiting screen without a frame", () => {
    const ctx = new RecordingCtx();
    renderFrame(ctx, { ...baseInputs, frame: null });
    expect(ctx.texts.some((t) => t.includes("waiting"))).toBe(true);
  });
});
