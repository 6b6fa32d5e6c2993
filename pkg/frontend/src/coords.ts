/**
 * Displayed-image <-> native-pixel coordinate mapping.
 *
 * The image is contain-fitted into the viewport and multiplied by the user
 * zoom; selections always travel to the backend in native image pixels, so
 * this mapping is the single source of truth for both directions.
 */
import { DisplayPoint, ImageDims } from "./types.js";

export interface FitTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Contain-fit the image into the viewport, centered, scaled by zoom. */
export function fitTransform(
  dims: ImageDims,
  viewportWidth: number,
  viewportHeight: number,
  zoom = 1
): FitTransform {
  const base = Math.min(viewportWidth / dims.width, viewportHeight / dims.height);
  const scale = base * zoom;
  return {
    scale,
    offsetX: (viewportWidth - dims.width * scale) / 2,
    offsetY: (viewportHeight - dims.height * scale) / 2,
  };
}

export function nativeToDisplay(x: number, y: number, t: FitTransform): DisplayPoint {
  return { x: x * t.scale + t.offsetX, y: y * t.scale + t.offsetY };
}

/**
 * Map a display point back to native pixels, snapped to the integer grid and
 * clamped to the image frame. Snapping keeps the round trip exact for any
 * zoom: |displayToNative(nativeToDisplay(p)) - p| = 0 for integer p.
 */
export function displayToNative(
  x: number,
  y: number,
  t: FitTransform,
  dims: ImageDims
): DisplayPoint {
  const nx = Math.round((x - t.offsetX) / t.scale);
  const ny = Math.round((y - t.offsetY) / t.scale);
  return {
    x: Math.min(Math.max(nx, 0), dims.width),
    y: Math.min(Math.max(ny, 0), dims.height),
  };
}
