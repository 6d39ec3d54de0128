import { describe, expect, it } from "vitest";
import { helloMessage, parseServerMessage, pedalMessage } from "../src/protocol.js";

describe("protocol", () => {
  it("clamps pedal values into [0, 1]", () => {
    const msg = pedalMessage(2, 1.7, -0.3);
    expect(msg.throttle).toBe(1);
    expect(msg.brake).toBe(0);
    expect(msg.type).toBe("pedal");
    expect(msg.vehicle_id).toBe(2);
  });

  it("builds hello messages", () => {
    expect(helloMessage(3)).toEqual({ type: "hello", vehicle_id: 3 });
  });

  it("parses state frames", () => {
    const frame = {
      type: "state",
      t: 1.5,
      tick: 30,
      vehicles: [{ id: 0, role: "head", pos: 0, vel: 18, spacing: 0 }],
      cav: { u_sent: 0.2, u_received: 0.4 },
    };
    const parsed = parseServerMessage(JSON.stringify(frame));
    expect(parsed).not.toBeNull();
    expect(parsed!.type).toBe("state");
  });

  it("parses events and rejects junk", () => {
    expect(parseServerMessage(JSON.stringify({ type: "event", kind: "x", detail: "y" }))!.type).toBe("event");
    expect(parseServerMessage("not json")).toBeNull();
    expect(parseServerMessage(JSON.stringify({ type: "mystery" }))).toBeNull();
    expect(parseServerMessage(JSON.stringify(42))).toBeNull();
  });
});
