/**
 * HTTP surface of the generation backend.
 *
 * Every endpoint mirrors the in-process reference backend's wire schema;
 * requests are validated before touching the engine (422 on violation,
 * 404 on unknown handles, 503 while the models are still loading).
 */

import express, { type Express, type Request, type Response } from "express";
import { ZodSchema } from "zod";

import { decodeLatents, encodeLatents, packMask, unpackMask } from "./arrays.js";
import { Engine, Override, UnknownHandle, type Box } from "./engine.js";
import {
  attributeEditSchema,
  detectSchema,
  exportImageSchema,
  forwardSchema,
  invertSchema,
  pregenerateSchema,
  segmentSchema,
  transformSchema,
} from "./schemas.js";

export interface ServerOptions {
  grid?: number;
  totalSteps?: number;
  handleBudget?: number;
  modelIds?: Record<string, string>;
  /** Simulated model-load time; requests before then answer 503. */
  loadMs?: number;
}

function toBox(values: [number, number, number, number]): Box {
  return { x: values[0], y: values[1], w: values[2], h: values[3] };
}

export function createApp(options: ServerOptions = {}): { app: Express; engine: Engine } {
  const engine = new Engine(options);
  const readyAt = Date.now() + (options.loadMs ?? 0);
  const app = express();
  app.use(express.json({ limit: "64mb" }));

  app.get("/health", (_req: Request, res: Response) => {
    const loading = Date.now() < readyAt;
    res.status(loading ? 503 : 200).json({
      status: loading ? "loading" : "ok",
      latent_shape: engine.latentShape,
      total_steps: engine.totalSteps,
      schedule_id: engine.scheduleId,
      models: engine.modelIds,
    });
  });

  const handle = <T>(schema: ZodSchema<T>, fn: (body: T) => unknown) => {
    return (req: Request, res: Response) => {
      if (Date.now() < readyAt) {
        res.status(503).json({ error: "models are still loading" });
        return;
      }
      const parsed = schema.safeParse(req.body);
      if (!parsed.success) {
        res.status(422).json({ error: parsed.error.message });
        return;
      }
      try {
        res.json(fn(parsed.data));
      } catch (error) {
        if (error instanceof UnknownHandle) {
          res.status(404).json({ error: String(error) });
        } else if (error instanceof RangeError) {
          res.status(422).json({ error: String(error) });
        } else {
          res.status(500).json({ error: String(error) });
        }
      }
    };
  };

  app.post(
    "/invert",
    handle(invertSchema, (body) => {
      const result = engine.invert(body.image_handle);
      return {
        latent_stack_handle: result.handle,
        schedule_id: engine.scheduleId,
        stack: encodeLatents(result.steps, result.dims),
      };
    }),
  );

  app.post(
    "/pregenerate",
    handle(pregenerateSchema, (body) => ({
      image_handle: engine.pregenerate(body.text, toBox(body.box)),
    })),
  );

  app.post(
    "/segment",
    handle(segmentSchema, (body) => {
      const grid = engine.segment(body.image_handle, toBox(body.box));
      return { mask: packMask(grid, engine.grid, engine.grid) };
    }),
  );

  app.post(
    "/forward",
    handle(forwardSchema, (body) => {
      const overrides: Override[] = body.overrides.map((o) => {
        const { grid, height, width } = unpackMask(o.mask);
        if (height !== engine.grid || width !== engine.grid) {
          throw new RangeError(`mask dims ${height}x${width} vs grid ${engine.grid}`);
        }
        return {
          stepRange: o.step_range,
          grid,
          values: o.values ? decodeLatents(o.values).data : null,
          freeze: o.freeze ?? false,
        };
      });
      const result = engine.forward(body.latent_stack_handle, overrides, body.seed);
      return { image_handle: result.handle, seed: result.seed };
    }),
  );

  app.post(
    "/attribute_edit",
    handle(attributeEditSchema, (body) => {
      const { grid } = unpackMask(body.mask);
      return { image_handle: engine.attributeEdit(body.image_handle, grid, body.target) };
    }),
  );

  app.post(
    "/transform",
    handle(transformSchema, (body) => ({
      image_handle: engine.transform(body.image_handle, toBox(body.from_box), toBox(body.to_box)),
    })),
  );

  app.post(
    "/detect",
    handle(detectSchema, (body) => ({
      detections: engine.detect(body.image_handle, body.queries, body.threshold),
    })),
  );

  app.post(
    "/export_image",
    handle(exportImageSchema, (body) => {
      const { data, dims } = engine.exportImage(body.image_handle);
      return { array: encodeLatents(data, dims) };
    }),
  );

  app.use((_req: Request, res: Response) => {
    res.status(422).json({ error: "unknown endpoint" });
  });

  return { app, engine };
}
