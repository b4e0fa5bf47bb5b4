import { RenderMode } from "./client.js";
import { Viewer, attach } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const params = new URLSearchParams(window.location.search);
const server = params.get("server") ?? "http://127.0.0.1:8090";

const canvas = el<HTMLCanvasElement>("frame");
const compare = el<HTMLCanvasElement>("compare");
const viewer = new Viewer({
  serverUrl: server,
  canvas,
  compareCanvas: compare,
  statusBar: el("status"),
  banner: el("banner"),
});

attach(viewer, canvas);

for (const mode of ["full", "clear", "medium", "depth"] as RenderMode[]) {
  el(`mode-${mode}`).addEventListener("click", () => viewer.setMode(mode));
}

const slider = el<HTMLInputElement>("medium-scale");
const sliderLabel = el("medium-scale-value");
slider.addEventListener("input", () => {
  const value = Number(slider.value);
  sliderLabel.textContent = value.toFixed(2);
  viewer.setMediumScale(value);
});

const compareSelect = el<HTMLSelectElement>("compare-mode");
compareSelect.addEventListener("change", () => {
  const v = compareSelect.value;
  compare.style.display = v === "off" ? "none" : "block";
  viewer.pinCompare(v === "off" ? null : (v as RenderMode));
});

viewer.connect();
