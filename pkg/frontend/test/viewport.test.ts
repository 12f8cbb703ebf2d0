import { describe, expect, it } from "vitest";

import { Viewport } from "../src/viewport.js";

/** Deterministic uniform in [0, 1); tests must not depend on Math.random. */
function lcg(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s * 1664525 + 1013904223) >>> 0;
    return s / 2 ** 32;
  };
}

describe("Viewport transforms", () => {
  it("round-trips screen -> image -> screen within half a pixel", () => {
    const rand = lcg(7);
    for (let i = 0; i < 500; i++) {
      const view = new Viewport(
        Math.exp((rand() * 2 - 1) * Math.log(32)),
        (rand() * 2 - 1) * 1e4,
        (rand() * 2 - 1) * 1e4,
      );
      const p = { x: (rand() * 2 - 1) * 4096, y: (rand() * 2 - 1) * 4096 };
      const back = view.imageToScreen(view.screenToImage(p));
      expect(Math.hypot(back.x - p.x, back.y - p.y)).toBeLessThanOrEqual(0.5);
      expect(Math.hypot(back.x - p.x, back.y - p.y)).toBeLessThanOrEqual(1e-6);

      const fwd = view.screenToImage(view.imageToScreen(p));
      expect(Math.hypot(fwd.x - p.x, fwd.y - p.y)).toBeLessThanOrEqual(0.5);
      expect(Math.hypot(fwd.x - p.x, fwd.y - p.y)).toBeLessThanOrEqual(1e-6);
    }
  });

  it("zoomAt keeps the image point under the anchor fixed", () => {
    const rand = lcg(11);
    for (let i = 0; i < 200; i++) {
      const view = new Viewport(1 + rand() * 3, rand() * 100, rand() * 100);
      const anchor = { x: rand() * 800, y: rand() * 600 };
      const before = view.screenToImage(anchor);
      const zoomed = view.zoomAt(anchor, 0.5 + rand() * 3);
      const after = zoomed.screenToImage(anchor);
      expect(Math.hypot(after.x - before.x, after.y - before.y)).toBeLessThanOrEqual(1e-9);
    }
  });

  it("clamps zoom to the scale limits", () => {
    const tiny = new Viewport(1 / 32).zoomAt({ x: 0, y: 0 }, 1e-6);
    expect(tiny.scale).toBe(1 / 32);
    const huge = new Viewport(64).zoomAt({ x: 0, y: 0 }, 1e6);
    expect(huge.scale).toBe(64);
  });

  it("panBy shifts screen coordinates exactly", () => {
    const view = new Viewport(2, 10, 20).panBy(5, -7);
    expect(view.imageToScreen({ x: 1, y: 1 })).toEqual({ x: 17, y: 15 });
  });

  it("fit centers the image and touches one pair of view edges", () => {
    const view = Viewport.fit(400, 300, 900, 700);
    const tl = view.imageToScreen({ x: 0, y: 0 });
    const br = view.imageToScreen({ x: 400, y: 300 });
    expect(br.x - tl.x).toBeCloseTo(900, 9);
    expect(tl.y).toBeCloseTo((700 - 300 * view.scale) / 2, 9);
    expect(tl.y).toBeGreaterThanOrEqual(0);
    expect(view.scale).toBeCloseTo(900 / 400, 12);
  });

  it("rejects degenerate construction", () => {
    expect(() => new Viewport(0)).toThrow(RangeError);
    expect(() => new Viewport(Number.NaN)).toThrow(RangeError);
    expect(() => new Viewport(1, Number.POSITIVE_INFINITY, 0)).toThrow(RangeError);
    expect(() => Viewport.fit(0, 10, 10, 10)).toThrow(RangeError);
  });
});
