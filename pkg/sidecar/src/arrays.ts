/**
 * Wire codecs and small tensor helpers.
 *
 * Masks travel as row-major bits packed most-significant-bit first with a
 * [height, width] dims header; latent grids as row-major little-endian
 * float32 with a [steps, channels, height, width] dims header.
 */

export interface MaskPayload {
  dims: [number, number];
  bits: string;
}

export interface LatentsPayload {
  dims: number[];
  data: string;
}

export function packMask(grid: Uint8Array, height: number, width: number): MaskPayload {
  const packed = new Uint8Array(Math.ceil((height * width) / 8));
  for (let i = 0; i < height * width; i++) {
    if (grid[i]) {
      packed[i >> 3] |= 0x80 >> (i & 7);
    }
  }
  return { dims: [height, width], bits: Buffer.from(packed).toString("base64") };
}

export function unpackMask(payload: MaskPayload): { grid: Uint8Array; height: number; width: number } {
  const [height, width] = payload.dims;
  const raw = Buffer.from(payload.bits, "base64");
  const grid = new Uint8Array(height * width);
  for (let i = 0; i < height * width; i++) {
    grid[i] = (raw[i >> 3] >> (7 - (i & 7))) & 1;
  }
  return { grid, height, width };
}

export function encodeLatents(data: Float32Array, dims: number[]): LatentsPayload {
  const bytes = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) {
    bytes.writeFloatLE(data[i], i * 4);
  }
  return { dims, data: bytes.toString("base64") };
}

export function decodeLatents(payload: LatentsPayload): { data: Float32Array; dims: number[] } {
  const raw = Buffer.from(payload.data, "base64");
  const count = payload.dims.reduce((a, b) => a * b, 1);
  if (raw.length !== count * 4) {
    throw new Error(`latent payload holds ${raw.length / 4} values for dims ${payload.dims}`);
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = raw.readFloatLE(i * 4);
  }
  return { data, dims: payload.dims };
}

export function maskCells(grid: Uint8Array): number {
  let count = 0;
  for (const bit of grid) count += bit;
  return count;
}
