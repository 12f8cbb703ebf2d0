/**
 * Scene drawing on top of the image canvas.
 *
 * Everything is handed image-space geometry and a Viewport; screen
 * coordinates exist only inside these functions.  The context argument is
 * the minimal slice of CanvasRenderingContext2D the overlay needs, which
 * lets tests substitute a recorder and assert exact draw coordinates.
 */

import type { TrackVertex } from "./api.js";
import type { Point, Viewport } from "./viewport.js";

export interface Stroke2D {
  strokeStyle: string | object;
  fillStyle: string | object;
  lineWidth: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
}

export const TRACK_STYLE = "#ff3b30";
export const MARKER_STYLE = "#0a84ff";
export const MARKER_WARN_STYLE = "#ffd60a";
export const MARKER_RADIUS = 5;

export function drawTrack(ctx: Stroke2D, view: Viewport, track: TrackVertex[]): void {
  if (track.length < 2) return;
  ctx.strokeStyle = TRACK_STYLE;
  ctx.lineWidth = 2;
  ctx.beginPath();
  const first = view.imageToScreen(track[0]!);
  ctx.moveTo(first.x, first.y);
  for (let i = 1; i < track.length; i++) {
    const p = view.imageToScreen(track[i]!);
    ctx.lineTo(p.x, p.y);
  }
  ctx.stroke();
}

export function drawEndpoints(
  ctx: Stroke2D,
  view: Viewport,
  endpoints: Point[],
  highlightIndex: number | null = null,
): void {
  endpoints.forEach((e, i) => {
    const p = view.imageToScreen(e);
    ctx.fillStyle = i === highlightIndex ? MARKER_WARN_STYLE : MARKER_STYLE;
    ctx.beginPath();
    ctx.arc(p.x, p.y, MARKER_RADIUS, 0, 2 * Math.PI);
    ctx.fill();
  });
}
