/**
 * Browser viewer: orbit/fly camera over the render service, mode switching
 * (full / restored / medium-only / depth), a medium-density slider, and an
 * optional pinned compare mode. The viewer holds no scene data; every frame
 * comes back from the server as a PNG.
 */

import { OrbitCamera } from "./camera.js";
import { NoSceneError, RenderClient, RenderMode, RenderRequest } from "./client.js";
import { RenderLoop } from "./loop.js";

const MODES: RenderMode[] = ["full", "clear", "medium", "depth"];

export interface ViewerOptions {
  serverUrl: string;
  canvas: HTMLCanvasElement;
  compareCanvas?: HTMLCanvasElement;
  statusBar?: HTMLElement;
  banner?: HTMLElement;
}

export class Viewer {
  client: RenderClient;
  camera: OrbitCamera | null = null;
  mode: RenderMode = "full";
  compareMode: RenderMode | null = null;
  mediumScale = 1.0;
  private loop: RenderLoop<RenderRequest & { compare?: boolean }, Blob>;
  private opts: ViewerOptions;

  constructor(opts: ViewerOptions, fetchFn: typeof fetch = fetch) {
    this.opts = opts;
    this.client = new RenderClient(opts.serverUrl, fetchFn);
    this.loop = new RenderLoop(
      (req) => this.client.render(req),
      (blob, req) => this.present(blob, req.compare === true),
      (err) => this.warn(err),
    );
  }

  async connect(): Promise<void> {
    try {
      const info = await this.client.sceneInfo();
      const dc = info.default_camera;
      this.camera = OrbitCamera.fromPose(dc.pose, {
        fx: dc.fx, fy: dc.fy, cx: dc.cx, cy: dc.cy,
        width: dc.width, height: dc.height,
      });
      this.setStatus(`${info.gaussian_count} gaussians, extent ` +
        `${info.scene_extent.toFixed(2)}${info.has_medium ? ", medium" : ""}`);
      this.hideBanner();
      this.refresh();
    } catch (err) {
      if (err instanceof NoSceneError) {
        this.showBanner("no scene loaded");
      } else {
        this.showBanner(`cannot reach server: ${String(err)}`);
      }
    }
  }

  buildRequest(mode: RenderMode): RenderRequest {
    if (!this.camera) throw new Error("not connected");
    const k = this.camera.intrinsics;
    return {
      pose: this.camera.pose(),
      fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy,
      width: k.width, height: k.height,
      mode,
      medium_scale: this.mediumScale,
    };
  }

  /** Issue a render for the current state (latest wins, one in flight). */
  refresh(): void {
    if (!this.camera) return;
    this.loop.request(this.buildRequest(this.mode));
    if (this.compareMode !== null) {
      this.loop.request({ ...this.buildRequest(this.compareMode),
                          compare: true });
    }
  }

  // interaction ----------------------------------------------------------

  drag(dxPixels: number, dyPixels: number): void {
    this.camera?.orbit(dxPixels * 0.005, dyPixels * 0.005);
    this.refresh();
  }

  scroll(deltaY: number): void {
    this.camera?.dolly(Math.exp(deltaY * 0.001));
    this.refresh();
  }

  pan(dxPixels: number, dyPixels: number): void {
    this.camera?.pan(-dxPixels * 0.0015, dyPixels * 0.0015);
    this.refresh();
  }

  cycleMode(): RenderMode {
    this.mode = MODES[(MODES.indexOf(this.mode) + 1) % MODES.length];
    this.refresh();
    return this.mode;
  }

  setMode(mode: RenderMode): void {
    this.mode = mode;
    this.refresh();
  }

  setMediumScale(value: number): void {
    this.mediumScale = Math.max(0, Math.min(2, value));
    this.refresh();
  }

  pinCompare(mode: RenderMode | null): void {
    this.compareMode = mode;
    this.refresh();
  }

  // presentation ----------------------------------------------------------

  private present(blob: Blob, compare: boolean): void {
    const canvas = compare ? this.opts.compareCanvas : this.opts.canvas;
    if (!canvas) return;
    const url = URL.createObjectURL(blob);
    const img = new Image();
    img.onload = () => {
      canvas.width = img.width;
      canvas.height = img.height;
      canvas.getContext("2d")?.drawImage(img, 0, 0);
      URL.revokeObjectURL(url);
    };
    img.src = url;
    this.hideBanner();
  }

  private warn(err: unknown): void {
    // keep the last good frame; surface a transient warning only
    if (err instanceof NoSceneError) {
      this.showBanner("no scene loaded");
      return;
    }
    this.setStatus(`render failed: ${String(err)}`);
  }

  private setStatus(text: string): void {
    if (this.opts.statusBar) this.opts.statusBar.textContent = text;
  }

  private showBanner(text: string): void {
    if (this.opts.banner) {
      this.opts.banner.textContent = text;
      this.opts.banner.style.display = "block";
    }
  }

  private hideBanner(): void {
    if (this.opts.banner) this.opts.banner.style.display = "none";
  }
}

/** Wire DOM events; kept separate so the Viewer logic stays testable. */
export function attach(viewer: Viewer, canvas: HTMLCanvasElement): void {
  let dragging = false;
  let panning = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (e) => {
    dragging = e.button === 0;
    panning = e.button === 2 || e.shiftKey;
    lastX = e.clientX;
    lastY = e.clientY;
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!dragging && !panning) return;
    const dx = e.clientX - lastX;
    const dy = e.clientY - lastY;
    lastX = e.clientX;
    lastY = e.clientY;
    if (panning) viewer.pan(dx, dy);
    else viewer.drag(dx, dy);
  });
  canvas.addEventListener("pointerup", () => {
    dragging = panning = false;
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    viewer.scroll(e.deltaY);
  }, { passive: false });
  canvas.addEventListener("contextmenu", (e) => e.preventDefault());
  window.addEventListener("keydown", (e) => {
    const panStep = 20;
    if (e.key === "m") viewer.cycleMode();
    else if (e.key === "ArrowLeft") viewer.pan(-panStep, 0);
    else if (e.key === "ArrowRight") viewer.pan(panStep, 0);
    else if (e.key === "ArrowUp") viewer.pan(0, -panStep);
    else if (e.key === "ArrowDown") viewer.pan(0, panStep);
  });
}
