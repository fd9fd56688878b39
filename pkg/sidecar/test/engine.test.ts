import { describe, expect, it } from "vitest";

import { Engine } from "../src/engine.js";
import { maskCells, packMask, unpackMask, encodeLatents, decodeLatents } from "../src/arrays.js";

const BOX = { x: 0.25, y: 0.25, w: 0.5, h: 0.5 };

function maxAbsDiff(a: Float32Array, b: Float32Array): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) {
    worst = Math.max(worst, Math.abs(a[i] - b[i]));
  }
  return worst;
}

describe("array codecs", () => {
  it("round-trips masks through packed bits", () => {
    const grid = new Uint8Array(16 * 16);
    for (let i = 0; i < grid.length; i += 3) grid[i] = 1;
    const unpacked = unpackMask(packMask(grid, 16, 16));
    expect(Array.from(unpacked.grid)).toEqual(Array.from(grid));
  });

  it("round-trips float32 latents", () => {
    const data = new Float32Array([0.25, -1.5, 3.125, 0]);
    const decoded = decodeLatents(encodeLatents(data, [1, 1, 2, 2]));
    expect(Array.from(decoded.data)).toEqual(Array.from(data));
  });
});

describe("engine", () => {
  it("announces consistent latent metadata", () => {
    const engine = new Engine({ grid: 16, totalSteps: 10 });
    expect(engine.latentShape).toEqual([4, 16, 16]);
    expect(engine.totalSteps).toBe(10);
    expect(engine.scheduleId).toContain("10");
  });

  it("segments the full-image box to every cell", () => {
    const engine = new Engine({ grid: 16 });
    const handle = engine.pregenerate("probe", BOX);
    const grid = engine.segment(handle, { x: 0, y: 0, w: 1, h: 1 });
    expect(maskCells(grid)).toBe(16 * 16);
  });

  it("inversion then fully-frozen forward reproduces the image within tolerance", () => {
    // This measured bound backs the published round-trip tolerance of 1e-4.
    const engine = new Engine({ grid: 16, totalSteps: 10 });
    const handle = engine.pregenerate("conformance probe", BOX);
    const before = engine.exportImage(handle).data;
    const stack = engine.invert(handle);
    const full = new Uint8Array(16 * 16).fill(1);
    const result = engine.forward(
      stack.handle,
      [{ stepRange: [0, 10], grid: full, values: null, freeze: true }],
      7,
    );
    const after = engine.exportImage(result.handle).data;
    expect(maxAbsDiff(before, after)).toBeLessThanOrEqual(1e-4);
  });

  it("echoes the seed and stays deterministic", () => {
    const engine = new Engine({ grid: 16 });
    const image = engine.pregenerate("probe", BOX);
    const mask = engine.segment(image, BOX);
    const values = new Float32Array(4 * 16 * 16).fill(0.5);
    const run = () => {
      const stack = engine.invert(image);
      const result = engine.forward(
        stack.handle,
        [{ stepRange: [0, 1], grid: mask, values, freeze: false }],
        99,
      );
      expect(result.seed).toBe(99);
      return engine.exportImage(result.handle).data;
    };
    expect(maxAbsDiff(run(), run())).toBe(0);
  });

  it("freeze pins unedited regions to the original trajectory", () => {
    const engine = new Engine({ grid: 16, totalSteps: 10 });
    const image = engine.pregenerate("probe", BOX);
    const before = engine.exportImage(image).data;
    const mask = engine.segment(image, { x: 0, y: 0, w: 0.25, h: 0.25 });
    const values = new Float32Array(4 * 16 * 16).fill(2.0);
    const stack = engine.invert(image);
    const complement = new Uint8Array(16 * 16);
    for (let i = 0; i < complement.length; i++) complement[i] = mask[i] ? 0 : 1;
    const result = engine.forward(
      stack.handle,
      [
        { stepRange: [0, 1], grid: mask, values, freeze: false },
        { stepRange: [0, 10], grid: complement, values: null, freeze: true },
      ],
      1,
    );
    const after = engine.exportImage(result.handle).data;
    const hw = 16 * 16;
    for (let i = 0; i < hw; i++) {
      if (!complement[i]) continue;
      for (let ch = 0; ch < 3; ch++) {
        expect(Math.abs(after[ch * hw + i] - before[ch * hw + i])).toBeLessThanOrEqual(1e-4);
      }
    }
  });

  it("detects pregenerated objects by phrase and base name", () => {
    const engine = new Engine({ grid: 16 });
    const handle = engine.pregenerate("blue dog", BOX);
    expect(engine.detect(handle, ["image of a blue dog"], 0.15)).toHaveLength(1);
    expect(engine.detect(handle, ["image of a dog"], 0.15)).toHaveLength(1);
    expect(engine.detect(handle, ["image of a cat"], 0.15)).toHaveLength(0);
    expect(engine.detect(handle, ["image of a blue dog"], 1.0)).toHaveLength(0);
  });

  it("attribute edit changes masked cells only and relabels the scene", () => {
    const engine = new Engine({ grid: 16 });
    const image = engine.pregenerate("blue dog", BOX);
    const mask = engine.segment(image, BOX);
    const edited = engine.attributeEdit(image, mask, "pink dog");
    const before = engine.exportImage(image).data;
    const after = engine.exportImage(edited).data;
    const hw = 16 * 16;
    let changedInside = false;
    for (let i = 0; i < hw; i++) {
      for (let ch = 0; ch < 3; ch++) {
        const delta = Math.abs(after[ch * hw + i] - before[ch * hw + i]);
        if (mask[i] && delta > 0) changedInside = true;
        if (!mask[i]) expect(delta).toBe(0);
      }
    }
    expect(changedInside).toBe(true);
    expect(engine.sceneOf(edited)[0].phrase).toBe("pink dog");
  });

  it("transform crops and resizes into the target rectangle", () => {
    const engine = new Engine({ grid: 16 });
    const from = { x: 0, y: 0, w: 0.25, h: 0.25 };
    const image = engine.pregenerate("cat", from);
    const to = { x: 0.5, y: 0.5, w: 0.5, h: 0.5 };
    const moved = engine.transform(image, from, to);
    const array = engine.exportImage(moved).data;
    const cells = engine.segment(moved, to);
    const hw = 16 * 16;
    for (let i = 0; i < hw; i++) {
      if (cells[i]) expect(array[2 * hw + i]).toBeCloseTo(0.75, 5);
      else expect(array[2 * hw + i]).toBe(0);
    }
    expect(engine.sceneOf(moved)).toEqual([{ phrase: "cat", box: to }]);
  });

  it("evicts least-recently-used handles beyond the budget", () => {
    const engine = new Engine({ grid: 8, handleBudget: 2 });
    const a = engine.pregenerate("a", BOX);
    const b = engine.pregenerate("b", BOX);
    engine.exportImage(a); // refresh a; b is now oldest
    const c = engine.pregenerate("c", BOX);
    expect(() => engine.exportImage(a)).not.toThrow();
    expect(() => engine.exportImage(c)).not.toThrow();
    expect(() => engine.exportImage(b)).toThrow();
  });
});
