/** Request schemas; violations surface as 422 responses. */

import { z } from "zod";

export const boxSchema = z.tuple([z.number(), z.number(), z.number(), z.number()]);

export const maskSchema = z.object({
  dims: z.tuple([z.number().int().positive(), z.number().int().positive()]),
  bits: z.string(),
});

export const latentsSchema = z.object({
  dims: z.array(z.number().int().positive()).min(1),
  data: z.string(),
});

export const invertSchema = z.object({ image_handle: z.string() });

export const pregenerateSchema = z.object({ text: z.string().min(1), box: boxSchema });

export const segmentSchema = z.object({ image_handle: z.string(), box: boxSchema });

export const overrideSchema = z.object({
  step_range: z.tuple([z.number().int().min(0), z.number().int().min(0)]),
  mask: maskSchema,
  values: latentsSchema.nullable().optional(),
  freeze: z.boolean().optional().default(false),
});

export const forwardSchema = z.object({
  latent_stack_handle: z.string(),
  overrides: z.array(overrideSchema),
  seed: z.number().int(),
});

export const attributeEditSchema = z.object({
  image_handle: z.string(),
  mask: maskSchema,
  target: z.string().min(1),
});

export const transformSchema = z.object({
  image_handle: z.string(),
  from_box: boxSchema,
  to_box: boxSchema,
});

export const detectSchema = z.object({
  image_handle: z.string(),
  queries: z.array(z.string()),
  threshold: z.number().min(0).max(1),
});

export const exportImageSchema = z.object({ image_handle: z.string() });
