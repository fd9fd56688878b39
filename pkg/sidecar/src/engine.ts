/**
 * The generation engine behind the wire contract.
 *
 * Stands in for the real diffusion / segmentation / detection models with a
 * deterministic procedural implementation: images are float32 (3, H, W)
 * canvases, inversion is a per-step affine map whose final step is the
 * identity (so a fully frozen forward pass reproduces the input up to
 * float32 rounding), segmentation rasterizes boxes by cell center, and
 * detection reads the per-image scene registry. All nondeterminism is
 * confined behind the request seed, which every forward response echoes.
 * Real model integrations replace this module while the HTTP surface and
 * handle/session semantics stay put.
 */

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface SceneEntry {
  phrase: string;
  box: Box;
  score?: number;
}

export interface Override {
  stepRange: [number, number];
  grid: Uint8Array;
  values: Float32Array | null;
  freeze: boolean;
}

export interface Detection {
  query: string;
  score: number;
  box: [number, number, number, number];
}

export class UnknownHandle extends Error {}

interface ImageEntry {
  array: Float32Array; // (3, H, W) row-major
  scene: SceneEntry[];
}

interface StackEntry {
  steps: Float32Array; // (T, 4, H, W) row-major
  sourceImage: string;
}

const IMAGE_CHANNELS = 3;
const LATENT_CHANNELS = 4;

function hashText(text: string): number {
  let hash = 2166136261;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 16777619) >>> 0;
  }
  return hash;
}

/** Per-phrase constant paint values, one per image channel. */
function patternFor(phrase: string): [number, number, number] {
  const h = hashText(phrase);
  return [
    ((h % 1601) - 800) / 1000,
    (((h >> 11) % 180) + 1) * 0.005,
    0.75,
  ];
}

export function clampBox(box: Box): Box {
  const w = Math.min(Math.max(box.w, 1e-3), 1);
  const h = Math.min(Math.max(box.h, 1e-3), 1);
  const x = Math.min(Math.max(box.x, 0), 1 - w);
  const y = Math.min(Math.max(box.y, 0), 1 - h);
  return { x, y, w, h };
}

export class Engine {
  readonly grid: number;
  readonly totalSteps: number;
  readonly scheduleId: string;
  readonly modelIds: Record<string, string>;
  private readonly handleBudget: number;
  private readonly images = new Map<string, ImageEntry>();
  private readonly stacks = new Map<string, StackEntry>();
  private counter = 0;
  private readonly a: Float32Array;
  private readonly b: Float32Array;

  constructor(
    options: {
      grid?: number;
      totalSteps?: number;
      handleBudget?: number;
      modelIds?: Record<string, string>;
    } = {},
  ) {
    this.grid = options.grid ?? 16;
    this.totalSteps = options.totalSteps ?? 10;
    this.handleBudget = options.handleBudget ?? 256;
    this.scheduleId = `sidecar-affine-${this.totalSteps}`;
    this.modelIds = options.modelIds ?? {
      base: "procedural-diffusion-v1",
      segmenter: "box-raster-v1",
      detector: "scene-registry-v1",
    };
    this.a = new Float32Array(this.totalSteps);
    this.b = new Float32Array(this.totalSteps);
    for (let t = 0; t < this.totalSteps; t++) {
      const span = this.totalSteps - 1 - t;
      this.a[t] = Math.fround(1 + 0.5 * span);
      this.b[t] = Math.fround(0.25 * span);
    }
  }

  get latentShape(): [number, number, number] {
    return [LATENT_CHANNELS, this.grid, this.grid];
  }

  private newHandle(prefix: string): string {
    this.counter += 1;
    return `${prefix}-${String(this.counter).padStart(4, "0")}`;
  }

  /** Map.set keeps insertion order; re-setting moves a key to the back. */
  private touch<T>(table: Map<string, T>, handle: string, entry: T) {
    table.delete(handle);
    table.set(handle, entry);
    while (table.size > this.handleBudget) {
      const oldest = table.keys().next().value as string;
      table.delete(oldest);
    }
  }

  private imageEntry(handle: string): ImageEntry {
    const entry = this.images.get(handle);
    if (!entry) throw new UnknownHandle(`image handle ${handle} is not registered`);
    this.touch(this.images, handle, entry);
    return entry;
  }

  rasterize(box: Box): Uint8Array {
    const clamped = clampBox(box);
    const grid = new Uint8Array(this.grid * this.grid);
    for (let r = 0; r < this.grid; r++) {
      const cy = (r + 0.5) / this.grid;
      if (cy < clamped.y || cy > clamped.y + clamped.h) continue;
      for (let c = 0; c < this.grid; c++) {
        const cx = (c + 0.5) / this.grid;
        if (cx >= clamped.x && cx <= clamped.x + clamped.w) {
          grid[r * this.grid + c] = 1;
        }
      }
    }
    return grid;
  }

  private paint(scene: SceneEntry[]): Float32Array {
    const hw = this.grid * this.grid;
    const canvas = new Float32Array(IMAGE_CHANNELS * hw);
    for (const entry of scene) {
      const cells = this.rasterize(entry.box);
      const pattern = patternFor(entry.phrase);
      for (let i = 0; i < hw; i++) {
        if (!cells[i]) continue;
        for (let ch = 0; ch < IMAGE_CHANNELS; ch++) {
          canvas[ch * hw + i] = Math.fround(pattern[ch]);
        }
      }
    }
    return canvas;
  }

  registerScene(scene: SceneEntry[], handle?: string): string {
    const id = handle ?? this.newHandle("img");
    this.touch(this.images, id, { array: this.paint(scene), scene });
    return id;
  }

  exportImage(handle: string): { data: Float32Array; dims: number[] } {
    const entry = this.imageEntry(handle);
    return { data: entry.array.slice(), dims: [1, IMAGE_CHANNELS, this.grid, this.grid] };
  }

  sceneOf(handle: string): SceneEntry[] {
    return this.imageEntry(handle).scene;
  }

  invert(imageHandle: string): { handle: string; steps: Float32Array; dims: number[] } {
    const { array } = this.imageEntry(imageHandle);
    const hw = this.grid * this.grid;
    const steps = new Float32Array(this.totalSteps * LATENT_CHANNELS * hw);
    for (let t = 0; t < this.totalSteps; t++) {
      for (let ch = 0; ch < LATENT_CHANNELS; ch++) {
        const lifted = ch < IMAGE_CHANNELS ? array.subarray(ch * hw, (ch + 1) * hw) : null;
        const base = (t * LATENT_CHANNELS + ch) * hw;
        for (let i = 0; i < hw; i++) {
          const value = lifted ? lifted[i] : 0;
          steps[base + i] = Math.fround(this.a[t] * value + this.b[t]);
        }
      }
    }
    const handle = this.newHandle("lat");
    this.touch(this.stacks, handle, { steps, sourceImage: imageHandle });
    return { handle, steps, dims: [this.totalSteps, LATENT_CHANNELS, this.grid, this.grid] };
  }

  pregenerate(text: string, box: Box): string {
    return this.registerScene([{ phrase: text, box: clampBox(box) }]);
  }

  segment(imageHandle: string, box: Box): Uint8Array {
    this.imageEntry(imageHandle);
    const grid = this.rasterize(box);
    if (maskAny(grid) === 0) {
      throw new RangeError(`box rasterizes to no cell at ${this.grid}x${this.grid}`);
    }
    return grid;
  }

  transform(imageHandle: string, fromBox: Box, toBox: Box): string {
    const { array, scene } = this.imageEntry(imageHandle);
    const src = boundsOf(this.rasterize(fromBox), this.grid);
    const dst = boundsOf(this.rasterize(toBox), this.grid);
    if (!src || !dst) throw new RangeError("transform boxes rasterize to no cells");
    const hw = this.grid * this.grid;
    const canvas = new Float32Array(IMAGE_CHANNELS * hw);
    const srcRows = src.r1 - src.r0 + 1;
    const srcCols = src.c1 - src.c0 + 1;
    const dstRows = dst.r1 - dst.r0 + 1;
    const dstCols = dst.c1 - dst.c0 + 1;
    for (let r = 0; r < dstRows; r++) {
      const sr = src.r0 + Math.min(srcRows - 1, Math.floor((r * srcRows) / dstRows));
      for (let c = 0; c < dstCols; c++) {
        const sc = src.c0 + Math.min(srcCols - 1, Math.floor((c * srcCols) / dstCols));
        for (let ch = 0; ch < IMAGE_CHANNELS; ch++) {
          canvas[ch * hw + (dst.r0 + r) * this.grid + (dst.c0 + c)] =
            array[ch * hw + sr * this.grid + sc];
        }
      }
    }
    const moved: SceneEntry[] = [];
    for (const entry of scene) {
      if (overlapFraction(this.rasterize(entry.box), this.rasterize(fromBox)) >= 0.5) {
        moved.push({ phrase: entry.phrase, box: clampBox(toBox) });
        break;
      }
    }
    const handle = this.newHandle("img");
    this.touch(this.images, handle, { array: canvas, scene: moved });
    return handle;
  }

  attributeEdit(imageHandle: string, grid: Uint8Array, target: string): string {
    const { array, scene } = this.imageEntry(imageHandle);
    const hw = this.grid * this.grid;
    if (grid.length !== hw) {
      throw new RangeError(`mask holds ${grid.length} cells, latent grid has ${hw}`);
    }
    const edited = array.slice();
    const pattern = patternFor(target);
    for (let i = 0; i < hw; i++) {
      if (!grid[i]) continue;
      for (let ch = 0; ch < IMAGE_CHANNELS; ch++) {
        edited[ch * hw + i] = Math.fround(pattern[ch]);
      }
    }
    let bestIndex = -1;
    let bestFraction = 0;
    scene.forEach((entry, index) => {
      const fraction = overlapFraction(this.rasterize(entry.box), grid);
      if (fraction > bestFraction) {
        bestFraction = fraction;
        bestIndex = index;
      }
    });
    const newScene = scene.map((entry, index) =>
      index === bestIndex && bestFraction >= 0.5 ? { ...entry, phrase: target } : entry,
    );
    const handle = this.newHandle("img");
    this.touch(this.images, handle, { array: edited, scene: newScene });
    return handle;
  }

  forward(stackHandle: string, overrides: Override[], seed: number): { handle: string; seed: number } {
    const stack = this.stacks.get(stackHandle);
    if (!stack) throw new UnknownHandle(`latent stack handle ${stackHandle} is not registered`);
    this.touch(this.stacks, stackHandle, stack);
    const hw = this.grid * this.grid;
    const stepSize = LATENT_CHANNELS * hw;
    for (const override of overrides) {
      if (override.grid.length !== hw) {
        throw new RangeError(`override mask holds ${override.grid.length} cells, grid has ${hw}`);
      }
      if (override.values && override.values.length !== stepSize) {
        throw new RangeError(`override values hold ${override.values.length} cells`);
      }
    }

    const canvas = stack.steps.slice(0, stepSize);
    const applyValues = (state: Float32Array, step: number) => {
      for (const override of overrides) {
        if (override.freeze || !override.values) continue;
        const [start, stop] = override.stepRange;
        if (step < start || step >= stop) continue;
        for (let i = 0; i < hw; i++) {
          if (!override.grid[i]) continue;
          for (let ch = 0; ch < LATENT_CHANNELS; ch++) {
            state[ch * hw + i] = override.values[ch * hw + i];
          }
        }
      }
    };
    applyValues(canvas, 0);

    for (let t = 1; t < this.totalSteps; t++) {
      // remap t-1 -> t through the shared clean latents
      for (let i = 0; i < stepSize; i++) {
        const base = (canvas[i] - this.b[t - 1]) / this.a[t - 1];
        canvas[i] = Math.fround(this.a[t] * base + this.b[t]);
      }
      for (const override of overrides) {
        if (!override.freeze) continue;
        const [start, stop] = override.stepRange;
        if (t < start || t >= stop) continue;
        const source = stack.steps.subarray(t * stepSize, (t + 1) * stepSize);
        for (let i = 0; i < hw; i++) {
          if (!override.grid[i]) continue;
          for (let ch = 0; ch < LATENT_CHANNELS; ch++) {
            canvas[ch * hw + i] = source[ch * hw + i];
          }
        }
      }
      applyValues(canvas, t);
    }

    const last = this.totalSteps - 1;
    const image = new Float32Array(IMAGE_CHANNELS * hw);
    for (let ch = 0; ch < IMAGE_CHANNELS; ch++) {
      for (let i = 0; i < hw; i++) {
        image[ch * hw + i] = Math.fround((canvas[ch * hw + i] - this.b[last]) / this.a[last]);
      }
    }
    const sourceScene = this.images.get(stack.sourceImage)?.scene ?? [];
    const handle = this.newHandle("img");
    this.touch(this.images, handle, { array: image, scene: sourceScene });
    return { handle, seed };
  }

  detect(imageHandle: string, queries: string[], threshold: number): Detection[] {
    const { scene } = this.imageEntry(imageHandle);
    const detections: Detection[] = [];
    for (const entry of scene) {
      for (const query of queries) {
        let phrase = query;
        for (const prefix of ["image of an ", "image of a "]) {
          if (query.startsWith(prefix)) {
            phrase = query.slice(prefix.length);
            break;
          }
        }
        let score: number | null = null;
        if (phrase === entry.phrase) score = entry.score ?? 0.9;
        else if (entry.phrase.endsWith(` ${phrase}`)) score = entry.score ?? 0.8;
        if (score !== null && score >= threshold) {
          detections.push({
            query,
            score,
            box: [entry.box.x, entry.box.y, entry.box.w, entry.box.h],
          });
        }
      }
    }
    return detections;
  }
}

function maskAny(grid: Uint8Array): number {
  for (const bit of grid) if (bit) return 1;
  return 0;
}

function boundsOf(grid: Uint8Array, size: number): { r0: number; r1: number; c0: number; c1: number } | null {
  let r0 = size, r1 = -1, c0 = size, c1 = -1;
  for (let r = 0; r < size; r++) {
    for (let c = 0; c < size; c++) {
      if (!grid[r * size + c]) continue;
      if (r < r0) r0 = r;
      if (r > r1) r1 = r;
      if (c < c0) c0 = c;
      if (c > c1) c1 = c;
    }
  }
  return r1 < 0 ? null : { r0, r1, c0, c1 };
}

function overlapFraction(objectCells: Uint8Array, cover: Uint8Array): number {
  let total = 0;
  let hit = 0;
  for (let i = 0; i < objectCells.length; i++) {
    if (!objectCells[i]) continue;
    total += 1;
    if (cover[i]) hit += 1;
  }
  return total === 0 ? 0 : hit / total;
}
