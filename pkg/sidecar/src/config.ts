/** Service configuration from the environment. */

export interface SidecarConfig {
  port: number;
  grid: number;
  totalSteps: number;
  handleBudget: number;
  loadMs: number;
  modelIds: Record<string, string>;
}

export function loadConfig(env: NodeJS.ProcessEnv = process.env): SidecarConfig {
  return {
    port: Number(env.SIDECAR_PORT ?? 8431),
    grid: Number(env.SIDECAR_GRID ?? 16),
    totalSteps: Number(env.SIDECAR_STEPS ?? 10),
    handleBudget: Number(env.SIDECAR_HANDLE_BUDGET ?? 256),
    loadMs: Number(env.SIDECAR_LOAD_MS ?? 0),
    modelIds: {
      base: env.SIDECAR_MODEL_BASE ?? "procedural-diffusion-v1",
      segmenter: env.SIDECAR_MODEL_SEGMENTER ?? "box-raster-v1",
      detector: env.SIDECAR_MODEL_DETECTOR ?? "scene-registry-v1",
    },
  };
}
