import { afterAll, beforeAll, describe, expect, it } from "vitest";
import type { Server } from "node:http";

import { createApp } from "../src/server.js";
import { packMask, decodeLatents } from "../src/arrays.js";

let server: Server;
let base: string;

function post(path: string, body: unknown) {
  return fetch(`${base}${path}`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
}

beforeAll(async () => {
  const { app } = createApp({ grid: 16, totalSteps: 10 });
  await new Promise<void>((resolve) => {
    server = app.listen(0, () => resolve());
  });
  const address = server.address();
  if (address === null || typeof address === "string") throw new Error("no port");
  base = `http://127.0.0.1:${address.port}`;
});

afterAll(() => {
  server.close();
});

describe("wire surface", () => {
  it("health announces the contract metadata", async () => {
    const res = await fetch(`${base}/health`);
    expect(res.status).toBe(200);
    const body = await res.json();
    expect(body.latent_shape).toEqual([4, 16, 16]);
    expect(body.total_steps).toBe(10);
    expect(typeof body.schedule_id).toBe("string");
    expect(body.models.base).toBeTruthy();
  });

  it("runs the full pregenerate/segment/invert/forward/export pipeline", async () => {
    const pre = await post("/pregenerate", { text: "conformance probe", box: [0.25, 0.25, 0.5, 0.5] });
    expect(pre.status).toBe(200);
    const { image_handle } = await pre.json();

    const seg = await post("/segment", { image_handle, box: [0, 0, 1, 1] });
    expect(seg.status).toBe(200);
    const mask = (await seg.json()).mask;
    expect(mask.dims).toEqual([16, 16]);

    const inv = await post("/invert", { image_handle });
    expect(inv.status).toBe(200);
    const invBody = await inv.json();
    expect(invBody.stack.dims).toEqual([10, 4, 16, 16]);

    const full = packMask(new Uint8Array(16 * 16).fill(1), 16, 16);
    const fwd = await post("/forward", {
      latent_stack_handle: invBody.latent_stack_handle,
      overrides: [{ step_range: [0, 10], mask: full, values: null, freeze: true }],
      seed: 7,
    });
    expect(fwd.status).toBe(200);
    const fwdBody = await fwd.json();
    expect(fwdBody.seed).toBe(7);

    const before = await (await post("/export_image", { image_handle })).json();
    const after = await (
      await post("/export_image", { image_handle: fwdBody.image_handle })
    ).json();
    const a = decodeLatents(before.array).data;
    const b = decodeLatents(after.array).data;
    let worst = 0;
    for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(a[i] - b[i]));
    expect(worst).toBeLessThanOrEqual(1e-4);
  });

  it("detects with threshold boundary semantics", async () => {
    const pre = await post("/pregenerate", { text: "blue dog", box: [0.1, 0.1, 0.3, 0.3] });
    const { image_handle } = await pre.json();
    const low = await post("/detect", { image_handle, queries: ["image of a blue dog"], threshold: 0.15 });
    expect((await low.json()).detections).toHaveLength(1);
    const top = await post("/detect", { image_handle, queries: ["image of a blue dog"], threshold: 1.0 });
    expect((await top.json()).detections).toHaveLength(0);
  });

  it("rejects schema violations with 422", async () => {
    const res = await post("/segment", { wrong: "fields" });
    expect(res.status).toBe(422);
    const bad = await post("/detect", { image_handle: "x", queries: "not-a-list", threshold: 0.5 });
    expect(bad.status).toBe(422);
    const unknown = await post("/no_such_op", {});
    expect(unknown.status).toBe(422);
  });

  it("maps unknown handles to 404", async () => {
    const res = await post("/invert", { image_handle: "missing" });
    expect(res.status).toBe(404);
  });

  it("answers 503 while models are loading", async () => {
    const { app } = createApp({ grid: 8, loadMs: 60_000 });
    const loading = await new Promise<Server>((resolve) => {
      const s = app.listen(0, () => resolve(s));
    });
    const address = loading.address();
    if (address === null || typeof address === "string") throw new Error("no port");
    const res = await fetch(`http://127.0.0.1:${address.port}/health`);
    expect(res.status).toBe(503);
    const op = await fetch(`http://127.0.0.1:${address.port}/invert`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_handle: "x" }),
    });
    expect(op.status).toBe(503);
    loading.close();
  });
});
