/**
 * Zoom/pan mapping between screen and image pixel coordinates.
 *
 * A viewport is scale plus offset, immutable; interactions produce a new
 * one.  Both directions are closed-form inverses of each other, so a
 * round trip through them loses at most floating-point rounding, far
 * inside the half-pixel the annotation workflow can tolerate.
 */

export interface Point {
  x: number;
  y: number;
}

const MIN_SCALE = 1 / 32;
const MAX_SCALE = 64;

export class Viewport {
  constructor(
    readonly scale = 1,
    readonly offsetX = 0,
    readonly offsetY = 0,
  ) {
    if (!Number.isFinite(scale) || scale <= 0) {
      throw new RangeError(`scale must be positive, got ${scale}`);
    }
    if (!Number.isFinite(offsetX) || !Number.isFinite(offsetY)) {
      throw new RangeError("offsets must be finite");
    }
  }

  imageToScreen(p: Point): Point {
    return { x: p.x * this.scale + this.offsetX, y: p.y * this.scale + this.offsetY };
  }

  screenToImage(p: Point): Point {
    return { x: (p.x - this.offsetX) / this.scale, y: (p.y - this.offsetY) / this.scale };
  }

  panBy(dx: number, dy: number): Viewport {
    return new Viewport(this.scale, this.offsetX + dx, this.offsetY + dy);
  }

  /** Rescale by factor keeping the image point under the screen anchor fixed. */
  zoomAt(anchor: Point, factor: number): Viewport {
    const scale = Math.min(MAX_SCALE, Math.max(MIN_SCALE, this.scale * factor));
    const applied = scale / this.scale;
    return new Viewport(
      scale,
      anchor.x - (anchor.x - this.offsetX) * applied,
      anchor.y - (anchor.y - this.offsetY) * applied,
    );
  }

  /** Largest centered fit of an image inside a view rectangle. */
  static fit(imageW: number, imageH: number, viewW: number, viewH: number): Viewport {
    if (imageW <= 0 || imageH <= 0 || viewW <= 0 || viewH <= 0) {
      throw new RangeError("fit needs positive dimensions");
    }
    const scale = Math.min(viewW / imageW, viewH / imageH);
    return new Viewport(
      scale,
      (viewW - imageW * scale) / 2,
      (viewH - imageH * scale) / 2,
    );
  }
}
