/** Coordinate mapping between the displayed canvas and the underlying image.
 *
 * The viewport applies zoom about the image origin, then a pixel pan:
 *   display = image * zoom + pan
 * so the inverse used for hit-testing and box submission is algebraically
 * exact, and a display -> image -> display round trip is lossless up to
 * floating point.
 */

export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

export interface Size {
  width: number;
  height: number;
}

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface CanvasSelection {
  bbox: Box; // displayed-image coordinates
  viewport: Viewport;
}

export class NoImageError extends Error {
  constructor() {
    super("no image loaded");
    this.name = "NoImageError";
  }
}

export function imageToDisplay(box: Box, vp: Viewport): Box {
  return {
    x: box.x * vp.zoom + vp.panX,
    y: box.y * vp.zoom + vp.panY,
    w: box.w * vp.zoom,
    h: box.h * vp.zoom,
  };
}

export function displayToImage(box: Box, vp: Viewport): Box {
  if (!(vp.zoom > 0)) {
    throw new RangeError(`zoom must be positive, got ${vp.zoom}`);
  }
  return {
    x: (box.x - vp.panX) / vp.zoom,
    y: (box.y - vp.panY) / vp.zoom,
    w: box.w / vp.zoom,
    h: box.h / vp.zoom,
  };
}

export function displayPointToImage(
  x: number,
  y: number,
  vp: Viewport,
): { x: number; y: number } {
  const b = displayToImage({ x, y, w: 0, h: 0 }, vp);
  return { x: b.x, y: b.y };
}

/** Normalize a drag rectangle so w and h are non-negative. */
export function normalizeBox(box: Box): Box {
  const x = box.w < 0 ? box.x + box.w : box.x;
  const y = box.h < 0 ? box.y + box.h : box.y;
  return { x, y, w: Math.abs(box.w), h: Math.abs(box.h) };
}

/** Intersect an integer box with the image rectangle, keeping at least one
 * pixel of extent when any overlap remains. */
export function clampToImage(box: Box, image: Size): Box {
  const x = Math.min(Math.max(box.x, 0), Math.max(image.width - 1, 0));
  const y = Math.min(Math.max(box.y, 0), Math.max(image.height - 1, 0));
  const right = Math.min(Math.max(box.x + box.w, x + 1), image.width);
  const bottom = Math.min(Math.max(box.y + box.h, y + 1), image.height);
  return { x, y, w: Math.max(right - x, 1), h: Math.max(bottom - y, 1) };
}

/** Selection -> integer image-pixel bbox ready for a generate request.
 *
 * Corners are rounded independently so the integer box tracks the drawn
 * corners; the result is clamped inside the image.
 */
export function toImageCoords(
  selection: CanvasSelection,
  image: Size | null,
): Box {
  if (image === null || image.width <= 0 || image.height <= 0) {
    throw new NoImageError();
  }
  const raw = displayToImage(normalizeBox(selection.bbox), selection.viewport);
  const x0 = Math.round(raw.x);
  const y0 = Math.round(raw.y);
  const x1 = Math.round(raw.x + raw.w);
  const y1 = Math.round(raw.y + raw.h);
  return clampToImage({ x: x0, y: y0, w: x1 - x0, h: y1 - y0 }, image);
}
