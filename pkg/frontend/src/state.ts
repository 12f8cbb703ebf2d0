/**
 * Annotation session state.
 *
 * Holds the loaded image's identity, the 0..2 endpoint markers, the current
 * track polyline, the parameter panel, and the stack of accepted
 * segmentations with their union composite.  Mask pixels are stored exactly
 * as the server produced them: accept() copies its inputs, the composite is
 * a pure union of accepted masks, and export hands back the last accepted
 * server PNG byte-for-byte.  Nothing in here re-encodes or edits mask data.
 *
 * The track is cleared whenever an endpoint or a metric parameter changes,
 * so an overlay is only ever drawn when both endpoints are placed and the
 * server has answered for exactly this configuration.
 */

import type { ErrorDetail, TrackVertex, WidthEntry } from "./api.js";
import type { PanelParams } from "./params.js";
import { defaultPanel } from "./params.js";
import type { Point } from "./viewport.js";

export interface TrackFailure {
  status: number;
  message: string;
  /** Index of the endpoint marker the server complained about, if any. */
  markerIndex: number | null;
}

interface AcceptRecord {
  png: Uint8Array;
  pixels: Uint8Array;
  widths: WidthEntry[];
  prevComposite: Uint8Array | null;
}

export class AnnotationState {
  imageId: string | null = null;
  imageWidth = 0;
  imageHeight = 0;

  endpoints: Point[] = [];
  track: TrackVertex[] | null = null;
  trackFailure: TrackFailure | null = null;
  panel: PanelParams = defaultPanel();

  private composite: Uint8Array | null = null;
  private accepted: AcceptRecord[] = [];

  loadImage(imageId: string, width: number, height: number): void {
    if (width < 1 || height < 1) throw new RangeError("image dimensions must be positive");
    this.imageId = imageId;
    this.imageWidth = width;
    this.imageHeight = height;
    this.endpoints = [];
    this.track = null;
    this.trackFailure = null;
    this.composite = null;
    this.accepted = [];
  }

  /** Add a marker when fewer than two exist; rejects out-of-bounds points. */
  placeEndpoint(p: Point): boolean {
    if (this.imageId === null || this.endpoints.length >= 2) return false;
    if (!this.inBounds(p)) return false;
    this.endpoints.push({ x: p.x, y: p.y });
    this.invalidateTrack();
    return true;
  }

  /** Move a marker, clamping into the image; returns true when it had to snap. */
  moveEndpoint(index: number, p: Point): boolean {
    const marker = this.endpoints[index];
    if (marker === undefined) throw new RangeError(`no endpoint ${index}`);
    const clamped = this.clamp(p);
    const snapped = clamped.x !== p.x || clamped.y !== p.y;
    this.endpoints[index] = clamped;
    this.invalidateTrack();
    return snapped;
  }

  removeEndpoints(): void {
    this.endpoints = [];
    this.invalidateTrack();
  }

  setPanel(panel: PanelParams): void {
    this.panel = { ...panel };
    this.invalidateTrack();
  }

  readyToTrack(): boolean {
    return this.imageId !== null && this.endpoints.length === 2;
  }

  /** Overlay gating: both markers placed and the server has responded. */
  showTrack(): boolean {
    return this.track !== null && this.endpoints.length === 2;
  }

  applyTrack(track: TrackVertex[]): void {
    this.track = track.map((v) => ({ ...v }));
    this.trackFailure = null;
  }

  applyTrackFailure(status: number, detail: ErrorDetail): void {
    this.track = null;
    this.trackFailure = {
      status,
      message: detail.message,
      markerIndex: detail.endpoint ? this.nearestMarker(detail.endpoint) : null,
    };
  }

  /** Merge an accepted server mask into the composite; inputs are copied,
   * never retained or modified.  Any nonzero pixel counts as crack. */
  accept(png: Uint8Array, pixels: Uint8Array, widths: WidthEntry[]): void {
    const n = this.imageWidth * this.imageHeight;
    if (this.imageId === null) throw new Error("no image loaded");
    if (pixels.length !== n) {
      throw new RangeError(`mask has ${pixels.length} pixels, image has ${n}`);
    }
    const binary = new Uint8Array(n);
    for (let i = 0; i < n; i++) binary[i] = pixels[i] !== 0 ? 1 : 0;
    const prev = this.composite === null ? null : this.composite.slice();
    const merged = this.composite === null ? new Uint8Array(n) : this.composite.slice();
    for (let i = 0; i < n; i++) {
      if (binary[i] === 1) merged[i] = 1;
    }
    this.accepted.push({
      png: png.slice(),
      pixels: binary,
      widths: widths.map((w) => ({ ...w })),
      prevComposite: prev,
    });
    this.composite = merged;
  }

  /** Revert the most recent accept, restoring its snapshot exactly. */
  undo(): boolean {
    const record = this.accepted.pop();
    if (record === undefined) return false;
    this.composite = record.prevComposite;
    return true;
  }

  acceptedCount(): number {
    return this.accepted.length;
  }

  /** 0/1 union of all accepted masks, or null before the first accept. */
  compositePixels(): Uint8Array | null {
    return this.composite === null ? null : this.composite.slice();
  }

  /** The last accepted server PNG, byte-for-byte. */
  exportMask(): Uint8Array {
    const last = this.accepted[this.accepted.length - 1];
    if (last === undefined) throw new Error("nothing accepted yet");
    return last.png.slice();
  }

  lastWidths(): WidthEntry[] | null {
    const last = this.accepted[this.accepted.length - 1];
    return last === undefined ? null : last.widths.map((w) => ({ ...w }));
  }

  private invalidateTrack(): void {
    this.track = null;
    this.trackFailure = null;
  }

  private inBounds(p: Point): boolean {
    return p.x >= 0 && p.x <= this.imageWidth - 1 && p.y >= 0 && p.y <= this.imageHeight - 1;
  }

  private clamp(p: Point): Point {
    return {
      x: Math.min(this.imageWidth - 1, Math.max(0, p.x)),
      y: Math.min(this.imageHeight - 1, Math.max(0, p.y)),
    };
  }

  private nearestMarker(target: [number, number]): number | null {
    let best: number | null = null;
    let bestDist = Infinity;
    this.endpoints.forEach((e, i) => {
      const d = (e.x - target[0]) ** 2 + (e.y - target[1]) ** 2;
      if (d < bestDist) {
        bestDist = d;
        best = i;
      }
    });
    return best;
  }
}
