// Pedal input: keyboard ramps approximating pedal travel, plus gamepad axes.
// The ramp update is a pure function so a recorded input script replays to an
// identical message sequence.

export interface PedalState {
  throttle: number;
  brake: number;
}

export interface RampConfig {
  riseSeconds: number; // full travel time while held
  fallSeconds: number; // release time back to zero
}

export const DEFAULT_RAMP: RampConfig = { riseSeconds: 0.3, fallSeconds: 0.2 };

/** Advance one pedal value by dt given whether its key is held. */
export function advancePedal(
  value: number,
  pressed: boolean,
  dtSeconds: number,
  ramp: RampConfig = DEFAULT_RAMP,
): number {
  const rate = pressed ? dtSeconds / ramp.riseSeconds : -dtSeconds / ramp.fallSeconds;
  return Math.min(1, Math.max(0, value + rate));
}

export interface KeyInput {
  accelerate: boolean;
  brake: boolean;
}

export function advancePedals(
  state: PedalState,
  keys: KeyInput,
  dtSeconds: number,
  ramp: RampConfig = DEFAULT_RAMP,
): PedalState {
  return {
    throttle: advancePedal(state.throttle, keys.accelerate, dtSeconds, ramp),
    brake: advancePedal(state.brake, keys.brake, dtSeconds, ramp),
  };
}

/** Map gamepad axes/buttons to pedal values; input loss reads as zeros. */
export function gamepadPedals(pad: { axes?: readonly number[]; buttons?: readonly { value: number }[] } | null): PedalState {
  if (!pad) return { throttle: 0, brake: 0 };
  const throttle = pad.buttons?.[7]?.value ?? Math.max(0, -(pad.axes?.[1] ?? 0));
  const brake = pad.buttons?.[6]?.value ?? Math.max(0, pad.axes?.[1] ?? 0);
  return {
    throttle: Math.min(1, Math.max(0, throttle)),
    brake: Math.min(1, Math.max(0, brake)),
  };
}

/** Replay a key script: one KeyInput per frame at fixed dt. */
export function replayScript(
  script: KeyInput[],
  dtSeconds: number,
  ramp: RampConfig = DEFAULT_RAMP,
): PedalState[] {
  const out: PedalState[] = [];
  let state: PedalState = { throttle: 0, brake: 0 };
  for (const keys of script) {
    state = advancePedals(state, keys, dtSeconds, ramp);
    out.push(state);
  }
  return out;
}
