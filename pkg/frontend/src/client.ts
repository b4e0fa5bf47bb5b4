/** Thin typed client for the render service HTTP API. */

export type RenderMode = "full" | "clear" | "medium" | "depth";

export interface SceneInfo {
  gaussian_count: number;
  scene_extent: number;
  has_medium: boolean;
  default_camera: {
    pose: number[];
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    width: number;
    height: number;
  };
  modes: RenderMode[];
}

export interface RenderRequest {
  pose: number[];
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  mode: RenderMode;
  medium_scale: number;
}

export class NoSceneError extends Error {}

export class RenderClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  async sceneInfo(): Promise<SceneInfo> {
    const res = await this.fetchFn(`${this.baseUrl}/scene`);
    if (res.status === 503) throw new NoSceneError("no scene loaded");
    if (!res.ok) throw new Error(`scene info failed: ${res.status}`);
    return (await res.json()) as SceneInfo;
  }

  async health(): Promise<boolean> {
    try {
      const res = await this.fetchFn(`${this.baseUrl}/health`);
      return res.ok;
    } catch {
      return false;
    }
  }

  async render(req: RenderRequest): Promise<Blob> {
    const res = await this.fetchFn(`${this.baseUrl}/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    if (res.status === 503) throw new NoSceneError("no scene loaded");
    if (!res.ok) throw new Error(`render failed: ${res.status}`);
    return await res.blob();
  }
}
