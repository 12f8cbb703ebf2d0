/**
 * Browser wiring: connects the DOM to the tested modules.  All decisions
 * live in state/scheduler/params/viewport; this file only moves events in
 * and pixels out.  Served as a static bundle next to the annotation
 * service; the service address comes from the `data-server` attribute on
 * the page body, defaulting to same-origin.
 */

import { AnnotClient, decodeBase64 } from "./api.js";
import type { MetricPatch, TrackResponse } from "./api.js";
import { ApiError } from "./api.js";
import { drawEndpoints, drawTrack } from "./overlay.js";
import { defaultPanel, metricPatch, validatePanel, widthPatch } from "./params.js";
import type { PanelField, PanelParams } from "./params.js";
import { TrackScheduler } from "./scheduler.js";
import { AnnotationState } from "./state.js";
import { Viewport } from "./viewport.js";

const HIT_RADIUS_PX = 8;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("canvas");
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("2d canvas unavailable");
  const status = el<HTMLSpanElement>("status");
  const fileInput = el<HTMLInputElement>("file");
  const acceptBtn = el<HTMLButtonElement>("accept");
  const undoBtn = el<HTMLButtonElement>("undo");
  const exportBtn = el<HTMLButtonElement>("export");
  const resetBtn = el<HTMLButtonElement>("reset");
  const panelForm = el<HTMLFormElement>("panel");

  const server = document.body.dataset.server ?? "";
  const client = new AnnotClient(server);
  const state = new AnnotationState();
  let view = new Viewport();
  let image: ImageBitmap | null = null;
  let dragging: number | null = null;

  const scheduler = new TrackScheduler<Required<MetricPatch>, TrackResponse>(
    (query) => client.requestTrack(state.imageId!, query.endpoints, query.params),
    (result: TrackResponse) => {
      state.applyTrack(result.track);
      report(`track: ${result.track.length} vertices`);
      redraw();
    },
    (error) => {
      if (error instanceof ApiError) {
        state.applyTrackFailure(error.status, error.detail);
        report(`track failed: ${error.detail.message}`);
      } else {
        report(`track failed: ${String(error)}`);
      }
      redraw();
    },
  );

  function report(text: string): void {
    status.textContent = text;
  }

  function requestTrack(): void {
    if (!state.readyToTrack()) return;
    const errors = validatePanel(state.panel);
    if (Object.keys(errors).length > 0) {
      report(`invalid parameters: ${JSON.stringify(errors)}`);
      return;
    }
    const [a, b] = state.endpoints;
    scheduler.request({
      endpoints: [[a!.x, a!.y], [b!.x, b!.y]],
      params: metricPatch(state.panel),
    });
  }

  function redraw(): void {
    ctx!.setTransform(1, 0, 0, 1, 0, 0);
    ctx!.clearRect(0, 0, canvas.width, canvas.height);
    if (image !== null) {
      ctx!.imageSmoothingEnabled = view.scale < 1;
      ctx!.setTransform(view.scale, 0, 0, view.scale, view.offsetX, view.offsetY);
      ctx!.drawImage(image, 0, 0);
      const composite = state.compositePixels();
      if (composite !== null) drawComposite(composite);
      ctx!.setTransform(1, 0, 0, 1, 0, 0);
    }
    if (state.showTrack()) drawTrack(ctx!, view, state.track!);
    drawEndpoints(ctx!, view, state.endpoints, state.trackFailure?.markerIndex ?? null);
  }

  function drawComposite(pixels: Uint8Array): void {
    const w = state.imageWidth;
    const h = state.imageHeight;
    const tint = new ImageData(w, h);
    for (let i = 0; i < pixels.length; i++) {
      if (pixels[i] === 1) {
        tint.data[i * 4] = 255;
        tint.data[i * 4 + 3] = 110;
      }
    }
    const off = new OffscreenCanvas(w, h);
    off.getContext("2d")!.putImageData(tint, 0, 0);
    ctx!.drawImage(off, 0, 0);
  }

  async function maskPixels(png: Uint8Array): Promise<Uint8Array> {
    const bitmap = await createImageBitmap(new Blob([png as BlobPart], { type: "image/png" }));
    const off = new OffscreenCanvas(bitmap.width, bitmap.height);
    const octx = off.getContext("2d")!;
    octx.drawImage(bitmap, 0, 0);
    const data = octx.getImageData(0, 0, bitmap.width, bitmap.height).data;
    const out = new Uint8Array(bitmap.width * bitmap.height);
    for (let i = 0; i < out.length; i++) out[i] = data[i * 4]! > 127 ? 1 : 0;
    return out;
  }

  fileInput.addEventListener("change", async () => {
    const file = fileInput.files?.[0];
    if (file === undefined) return;
    try {
      const png = new Uint8Array(await file.arrayBuffer());
      const uploaded = await client.uploadImage(png);
      state.loadImage(uploaded.image_id, uploaded.width, uploaded.height);
      image = await createImageBitmap(new Blob([png as BlobPart], { type: "image/png" }));
      view = Viewport.fit(uploaded.width, uploaded.height, canvas.width, canvas.height);
      report(`loaded ${uploaded.width}x${uploaded.height} as ${uploaded.image_id.slice(0, 12)}`);
      redraw();
    } catch (error) {
      report(`upload failed: ${String(error)}`);
    }
  });

  canvas.addEventListener("mousedown", (ev) => {
    if (state.imageId === null) return;
    const screen = { x: ev.offsetX, y: ev.offsetY };
    dragging = state.endpoints.findIndex((e) => {
      const p = view.imageToScreen(e);
      return Math.hypot(p.x - screen.x, p.y - screen.y) <= HIT_RADIUS_PX;
    });
    if (dragging < 0) dragging = null;
  });

  canvas.addEventListener("mousemove", (ev) => {
    if (dragging === null) return;
    const p = view.screenToImage({ x: ev.offsetX, y: ev.offsetY });
    if (state.moveEndpoint(dragging, p)) report("endpoint snapped back inside the image");
    requestTrack();
    redraw();
  });

  window.addEventListener("mouseup", () => {
    dragging = null;
  });

  canvas.addEventListener("click", (ev) => {
    if (dragging !== null || state.imageId === null || state.endpoints.length >= 2) return;
    const p = view.screenToImage({ x: ev.offsetX, y: ev.offsetY });
    if (state.placeEndpoint(p)) {
      requestTrack();
      redraw();
    }
  });

  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    view = view.zoomAt({ x: ev.offsetX, y: ev.offsetY }, ev.deltaY < 0 ? 1.25 : 0.8);
    redraw();
  });

  acceptBtn.addEventListener("click", async () => {
    if (!state.showTrack()) {
      report("nothing to accept: place both endpoints and wait for the track");
      return;
    }
    try {
      const res = await client.requestSegment(
        state.imageId!, state.track!, widthPatch(state.panel));
      const png = decodeBase64(res.mask_png_base64);
      state.accept(png, await maskPixels(png), res.widths);
      report(`accepted; composite holds ${state.acceptedCount()} mask(s)`);
      redraw();
    } catch (error) {
      report(`segment failed: ${String(error)}`);
    }
  });

  undoBtn.addEventListener("click", () => {
    report(state.undo() ? "undone" : "nothing to undo");
    redraw();
  });

  exportBtn.addEventListener("click", () => {
    try {
      const png = state.exportMask();
      const url = URL.createObjectURL(new Blob([png as BlobPart], { type: "image/png" }));
      const link = document.createElement("a");
      link.href = url;
      link.download = `${state.imageId!.slice(0, 12)}-mask.png`;
      link.click();
      URL.revokeObjectURL(url);
    } catch (error) {
      report(String(error));
    }
  });

  resetBtn.addEventListener("click", () => {
    state.setPanel(defaultPanel());
    syncPanelForm();
    requestTrack();
  });

  function syncPanelForm(): void {
    for (const [field, value] of Object.entries(state.panel)) {
      const input = panelForm.elements.namedItem(field) as HTMLInputElement | null;
      if (input === null) continue;
      if (input.type === "checkbox") input.checked = value as boolean;
      else input.value = String(value);
    }
  }

  panelForm.addEventListener("change", () => {
    const raw = { ...state.panel } as unknown as Record<string, number | boolean>;
    for (const field of Object.keys(raw) as PanelField[]) {
      const input = panelForm.elements.namedItem(field) as HTMLInputElement | null;
      if (input === null) continue;
      raw[field] = input.type === "checkbox" ? input.checked : Number(input.value);
    }
    const next = raw as unknown as PanelParams;
    const errors = validatePanel(next);
    if (Object.keys(errors).length > 0) {
      report(`invalid parameters: ${JSON.stringify(errors)}`);
      syncPanelForm();
      return;
    }
    state.setPanel(next);
    report("parameters updated");
    requestTrack();
    redraw();
  });

  syncPanelForm();
  report("load a PNG to begin");
}

main();
