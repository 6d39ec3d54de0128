// Browser entry point: wires the canvas, keyboard/gamepad input, and the
// websocket session together.  One client drives exactly one vehicle.

import { Session } from "./session.js";
import { advancePedals, gamepadPedals, PedalState } from "./pedals.js";
import { Draw2D, renderFrame } from "./render.js";
import { EventMessage } from "./protocol.js";

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

export function startApp(): void {
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")! as unknown as Draw2D;
  const address = param("server", `ws://${window.location.hostname || "127.0.0.1"}:8765`);
  const vehicleId = parseInt(param("vehicle", "2"), 10);

  const session = new Session((url) => new WebSocket(url) as never, address, vehicleId);
  const keys = { accelerate: false, brake: false };
  let pedals: PedalState = { throttle: 0, brake: 0 };
  let banner: EventMessage | null = null;
  let bannerUntil = 0;
  let usingGamepad = false;
  let last = performance.now();

  window.addEventListener("keydown", (ev) => {
    if (ev.key === "ArrowUp" || ev.key === "w") keys.accelerate = true;
    if (ev.key === "ArrowDown" || ev.key === "s") keys.brake = true;
  });
  window.addEventListener("keyup", (ev) => {
    if (ev.key === "ArrowUp" || ev.key === "w") keys.accelerate = false;
    if (ev.key === "ArrowDown" || ev.key === "s") keys.brake = false;
  });

  const seenEvents = session.state.events;
  let eventCursor = 0;

  function tick(now: number) {
    const dt = Math.min(0.1, (now - last) / 1000);
    last = now;

    const pads = navigator.getGamepads ? navigator.getGamepads() : [];
    const pad = pads && pads[0] ? pads[0] : null;
    usingGamepad = pad !== null;
    session.state.inputMode = usingGamepad ? "gamepad" : "keyboard";
    pedals = usingGamepad ? gamepadPedals(pad) : advancePedals(pedals, keys, dt);
    session.sendPedals(pedals.throttle, pedals.brake);

    while (eventCursor < seenEvents.length) {
      banner = seenEvents[eventCursor++];
      bannerUntil = now + 4000;
    }
    if (banner && now > bannerUntil) banner = null;

    renderFrame(ctx, {
      frame: session.state.latestFrame,
      pedals,
      latencyMs: session.state.latencyMs,
      stale: session.isStale(),
      banner,
      width: canvas.width,
      height: canvas.height,
    });
    requestAnimationFrame(tick);
  }
  requestAnimationFrame(tick);
}

if (typeof document !== "undefined" && document.getElementById("view")) {
  startApp();
}
