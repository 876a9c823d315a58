/** Recording stub for the DrawContext the renderers draw through. */

import type { DrawContext } from "../src/meshview.js";

export interface RecordedCall {
  op: string;
  args: unknown[];
}

export interface Recorder {
  ctx: DrawContext;
  calls: RecordedCall[];
  /** values of a property at each assignment, in order */
  sets(prop: string): unknown[];
}

export function makeRecorder(): Recorder {
  const calls: RecordedCall[] = [];
  const record =
    (op: string) =>
    (...args: unknown[]) => {
      calls.push({ op, args });
    };
  const state: Record<string, unknown> = {
    fillStyle: "",
    strokeStyle: "",
    lineWidth: 1,
    globalAlpha: 1,
  };
  const ctx = {
    beginPath: record("beginPath"),
    moveTo: record("moveTo"),
    lineTo: record("lineTo"),
    closePath: record("closePath"),
    fill: record("fill"),
    stroke: record("stroke"),
    arc: record("arc"),
    clearRect: record("clearRect"),
  } as unknown as DrawContext;
  for (const prop of Object.keys(state)) {
    Object.defineProperty(ctx, prop, {
      get: () => state[prop],
      set: (v: unknown) => {
        state[prop] = v;
        calls.push({ op: `set:${prop}`, args: [v] });
      },
    });
  }
  return {
    ctx,
    calls,
    sets: (prop: string) =>
      calls.filter((c) => c.op === `set:${prop}`).map((c) => c.args[0]),
  };
}
