import { describe, expect, it } from "vitest";

import {
  clamp,
  clampState,
  decodeState,
  defaultState,
  encodeState,
  SLIDER_LIMITS,
} from "../src/state.js";

describe("session state url encoding", () => {
  it("round-trips a populated state losslessly", () => {
    const state = defaultState();
    state.points = [
      [0.1, 0.2],
      [5.25, 0.75],
      [3.3333333333333335, 4.1],
    ];
    state.boundary = [
      [0, 0],
      [6, 0],
      [6, 6],
      [0, 6],
    ];
    state.config.max_edge_inner = 0.35;
    state.config.max_edge_outer = 1.4;
    state.config.extension_distance = 2.0;
    state.config.min_angle = 25;
    state.matern.range = 1.7;
    state.matern.sigma = 0.9;

    const decoded = decodeState(encodeState(state));
    expect(decoded).toEqual(state);
  });

  it("produces url-safe text", () => {
    const state = defaultState();
    state.points = Array.from({ length: 40 }, (_, i) => [i * 0.37, i * 1.11]);
    const encoded = encodeState(state);
    expect(encoded).toMatch(/^[A-Za-z0-9_-]+$/);
  });

  it("falls back to defaults on garbage", () => {
    expect(decodeState("not base64!!!")).toEqual(defaultState());
    expect(decodeState("")).toEqual(defaultState());
  });

  it("ignores fields with wrong types", () => {
    const payload = btoa(
      JSON.stringify({
        points: [[1, 2], ["x", 3]],
        config: { max_edge_inner: "wide" },
        matern: { range: 3.0 },
      }),
    );
    const decoded = decodeState(payload);
    expect(decoded.points).toEqual([]);
    expect(decoded.config.max_edge_inner).toBe(
      defaultState().config.max_edge_inner,
    );
    expect(decoded.matern.range).toBe(3.0);
  });

  it("clamps out-of-range slider values on decode", () => {
    const payload = btoa(
      JSON.stringify({
        points: [],
        config: { max_edge_inner: 1e9, min_angle: -5 },
        matern: { range: 0.0001, sigma: 99 },
      }),
    );
    const decoded = decodeState(payload);
    expect(decoded.config.max_edge_inner).toBe(SLIDER_LIMITS.max_edge_inner.max);
    expect(decoded.config.min_angle).toBe(SLIDER_LIMITS.min_angle.min);
    expect(decoded.matern.range).toBe(SLIDER_LIMITS.range.min);
    expect(decoded.matern.sigma).toBe(SLIDER_LIMITS.sigma.max);
  });
});

describe("clamping", () => {
  it("keeps in-range values untouched", () => {
    expect(clamp("range", 2.5)).toBe(2.5);
  });

  it("handles non-finite input", () => {
    expect(clamp("range", NaN)).toBe(SLIDER_LIMITS.range.min);
    expect(clamp("sigma", Infinity)).toBe(SLIDER_LIMITS.sigma.max);
  });

  it("leaves the auto outer edge alone", () => {
    const state = defaultState();
    state.config.max_edge_outer = null;
    expect(clampState(state).config.max_edge_outer).toBeNull();
  });
});
