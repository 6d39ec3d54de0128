// Wire protocol shared with the harness service: JSON objects, one per
// websocket message.

export interface VehicleFrame {
  id: number;
  role: "head" | "cav" | "hdv" | "human";
  pos: number;
  vel: number;
  spacing: number;
}

export interface StateFrame {
  type: "state";
  t: number;
  tick: number;
  vehicles: VehicleFrame[];
  cav: { u_sent: number; u_received: number };
}

export interface EventMessage {
  type: "event";
  kind: string;
  detail: string;
}

export type ServerMessage = StateFrame | EventMessage;

export interface PedalMessage {
  type: "pedal";
  vehicle_id: number;
  throttle: number;
  brake: number;
}

export interface HelloMessage {
  type: "hello";
  vehicle_id: number;
}

const clamp01 = (v: number) => Math.min(1, Math.max(0, v));

/** Pedal values are clamped to [0, 1] before they ever leave the client. */
export function pedalMessage(vehicleId: number, throttle: number, brake: number): PedalMessage {
  return {
    type: "pedal",
    vehicle_id: vehicleId,
    throttle: clamp01(throttle),
    brake: clamp01(brake),
  };
}

export function helloMessage(vehicleId: number): HelloMessage {
  return { type: "hello", vehicle_id: vehicleId };
}

/** Parse a server message; returns null for unknown or malformed payloads. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const msg = doc as Record<string, unknown>;
  if (msg.type === "state" && Array.isArray(msg.vehicles) && typeof msg.tick === "number") {
    return msg as unknown as StateFrame;
  }
  if (msg.type === "event" && typeof msg.kind === "string") {
    return msg as unknown as EventMessage;
  }
  return null;
}
