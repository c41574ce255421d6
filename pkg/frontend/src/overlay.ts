/**
 * Overlay rendering primitives, kept as pure functions over typed arrays so
 * they can be tested without a canvas. The mask PNG stores class index minus
 * one per pixel (0 = background), and the palette lists one RGB triple per
 * class, background first — both straight from the service.
 */

export interface OverlayOptions {
  /** 0..1 alpha applied to visible defect classes. */
  opacity: number;
  /** Visibility per class value (index 0 = background, normally hidden). */
  visible: boolean[];
}

/**
 * Convert stored mask values (class - 1) into an RGBA buffer.
 *
 * Background pixels are always transparent; a defect pixel of stored value v
 * gets palette[v] at the requested opacity unless its class is toggled off.
 * Returns a new buffer; never mutates its inputs.
 */
export function maskToRgba(
  mask: ArrayLike<number>,
  palette: number[][],
  options: OverlayOptions,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(mask.length * 4);
  const alpha = Math.round(Math.min(1, Math.max(0, options.opacity)) * 255);
  for (let p = 0; p < mask.length; p++) {
    const value = mask[p];
    if (value === 0) continue; // background stays transparent
    const color = palette[value] ?? [255, 0, 255];
    const shown = options.visible[value] ?? true;
    out[p * 4] = color[0];
    out[p * 4 + 1] = color[1];
    out[p * 4 + 2] = color[2];
    out[p * 4 + 3] = shown ? alpha : 0;
  }
  return out;
}

/**
 * Extract stored mask values from decoded RGBA pixels of the mask PNG.
 * The PNG is single-channel, so the red channel carries the value.
 */
export function rgbaToMaskValues(rgba: ArrayLike<number>): Uint8Array {
  const out = new Uint8Array(Math.floor(rgba.length / 4));
  for (let p = 0; p < out.length; p++) {
    out[p] = rgba[p * 4];
  }
  return out;
}

/** Count pixels per stored mask value (for per-class legend counts). */
export function classPixelCounts(mask: ArrayLike<number>, numClasses: number): number[] {
  const counts = new Array(numClasses).fill(0);
  for (let p = 0; p < mask.length; p++) {
    const value = mask[p];
    if (value >= 0 && value < numClasses) counts[value]++;
  }
  return counts;
}

export function cssColor(rgb: number[]): string {
  return `rgb(${rgb[0]}, ${rgb[1]}, ${rgb[2]})`;
}

/** Format a percentage badge; metrics can be absent when undefined. */
export function formatPct(value: number | null): string {
  return value === null ? 'n/a' : `${value.toFixed(1)}%`;
}
