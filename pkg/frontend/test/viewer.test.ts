import { describe, expect, it } from "vitest";

import { Viewer } from "../src/viewer.js";

const sceneInfo = {
  gaussian_count: 42,
  scene_extent: 1.5,
  has_medium: true,
  default_camera: {
    pose: [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 3, 0, 0, 0, 1],
    fx: 300, fy: 300, cx: 200, cy: 150, width: 400, height: 300,
  },
  modes: ["full", "clear", "medium", "depth"],
};

function mockServer(opts: { noScene?: boolean } = {}) {
  const requests: any[] = [];
  const fetchFn = (async (url: any, init?: any) => {
    const path = String(url);
    if (opts.noScene) {
      return new Response(JSON.stringify({ error: "no scene loaded" }),
                          { status: 503 });
    }
    if (path.endsWith("/scene")) {
      return new Response(JSON.stringify(sceneInfo), { status: 200 });
    }
    if (path.endsWith("/render")) {
      requests.push(JSON.parse(init.body));
      return new Response(new Blob([new Uint8Array([137, 80, 78, 71])]),
                          { status: 200 });
    }
    return new Response("nope", { status: 404 });
  }) as unknown as typeof fetch;
  return { fetchFn, requests };
}

const tick = () => new Promise<void>((r) => setTimeout(r, 0));

function makeViewer(opts: { noScene?: boolean } = {}) {
  const { fetchFn, requests } = mockServer(opts);
  const banner = { textContent: "", style: { display: "none" } } as any;
  const viewer = new Viewer(
    { serverUrl: "http://test", canvas: undefined as any, banner },
    fetchFn,
  );
  return { viewer, requests, banner };
}

describe("Viewer", () => {
  it("connects and issues a first render", async () => {
    const { viewer, requests } = makeViewer();
    await viewer.connect();
    await tick();
    expect(requests.length).toBe(1);
    expect(requests[0].mode).toBe("full");
    expect(requests[0].width).toBe(400);
  });

  it("shows a banner instead of crashing when no scene is loaded",
     async () => {
    const { viewer, banner } = makeViewer({ noScene: true });
    await viewer.connect();
    expect(banner.style.display).toBe("block");
    expect(banner.textContent).toContain("no scene");
  });

  it("mode changes preserve the camera pose exactly", async () => {
    const { viewer, requests } = makeViewer();
    await viewer.connect();
    await tick();
    const before = requests[requests.length - 1].pose;
    viewer.cycleMode();
    await tick();
    const after = requests[requests.length - 1].pose;
    expect(after).toEqual(before);
    expect(requests[requests.length - 1].mode).toBe("clear");
  });

  it("slider maps to medium_scale in [0, 2]", async () => {
    const { viewer, requests } = makeViewer();
    await viewer.connect();
    await tick();
    viewer.setMediumScale(0.75);
    await tick();
    expect(requests[requests.length - 1].medium_scale).toBe(0.75);
    viewer.setMediumScale(9);
    await tick();
    expect(requests[requests.length - 1].medium_scale).toBe(2);
    viewer.setMediumScale(-3);
    await tick();
    expect(requests[requests.length - 1].medium_scale).toBe(0);
  });

  it("slider at zero issues sigma-scale-zero renders in full mode",
     async () => {
    const { viewer, requests } = makeViewer();
    await viewer.connect();
    await tick();
    viewer.setMediumScale(0);
    await tick();
    const last = requests[requests.length - 1];
    expect(last.mode).toBe("full");
    expect(last.medium_scale).toBe(0);
  });

  it("drags keep poses orthonormal in requests", async () => {
    const { viewer, requests } = makeViewer();
    await viewer.connect();
    await tick();
    for (let i = 0; i < 20; i++) {
      viewer.drag(13, -7);
      viewer.scroll(40);
      await tick();
    }
    const { orthonormalityError } = await import("../src/camera.js");
    for (const req of requests) {
      expect(orthonormalityError(req.pose)).toBeLessThan(1e-6);
    }
  });
});
