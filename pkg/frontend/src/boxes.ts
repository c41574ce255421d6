/**
 * Client-side box model and drag-state transitions.
 *
 * Boxes live in image pixel space with inclusive integer corners, exactly as
 * the API expects them; the canvas merely renders a scaled view. All functions
 * here are pure so drawing behavior is unit-testable without a DOM.
 */

import type { BoxSpec } from './types.js';

export interface CanvasBox {
  classId: number;
  iMin: number;
  jMin: number;
  iMax: number;
  jMax: number;
}

/** A point in image pixel coordinates (fractional while dragging). */
export interface ImagePoint {
  i: number;
  j: number;
}

export type Handle = 'nw' | 'ne' | 'sw' | 'se' | 'n' | 's' | 'w' | 'e';

export type DragState =
  | { kind: 'draw'; classId: number; origin: ImagePoint; current: ImagePoint }
  | { kind: 'move'; index: number; origin: ImagePoint; current: ImagePoint; start: CanvasBox }
  | { kind: 'resize'; index: number; handle: Handle; current: ImagePoint; start: CanvasBox };

/** Swap corners so min <= max on both axes. */
export function normalizeBox(box: CanvasBox): CanvasBox {
  return {
    classId: box.classId,
    iMin: Math.min(box.iMin, box.iMax),
    jMin: Math.min(box.jMin, box.jMax),
    iMax: Math.max(box.iMin, box.iMax),
    jMax: Math.max(box.jMin, box.jMax),
  };
}

/** Round to integer pixels and clamp into the image bounds. */
export function clampBox(box: CanvasBox, height: number, width: number): CanvasBox {
  const clampI = (v: number) => Math.min(height - 1, Math.max(0, Math.round(v)));
  const clampJ = (v: number) => Math.min(width - 1, Math.max(0, Math.round(v)));
  const normalized = normalizeBox(box);
  return {
    classId: box.classId,
    iMin: clampI(normalized.iMin),
    jMin: clampJ(normalized.jMin),
    iMax: clampI(normalized.iMax),
    jMax: clampJ(normalized.jMax),
  };
}

/** Translate a box, keeping its size, clamped so it stays fully inside. */
export function moveBox(
  start: CanvasBox,
  di: number,
  dj: number,
  height: number,
  width: number,
): CanvasBox {
  const spanI = start.iMax - start.iMin;
  const spanJ = start.jMax - start.jMin;
  const iMin = Math.min(height - 1 - spanI, Math.max(0, Math.round(start.iMin + di)));
  const jMin = Math.min(width - 1 - spanJ, Math.max(0, Math.round(start.jMin + dj)));
  return { classId: start.classId, iMin, jMin, iMax: iMin + spanI, jMax: jMin + spanJ };
}

/** Apply a resize drag: the grabbed handle follows the pointer. */
export function resizeBox(start: CanvasBox, handle: Handle, to: ImagePoint): CanvasBox {
  let { iMin, jMin, iMax, jMax } = start;
  if (handle.includes('n')) iMin = to.i;
  if (handle.includes('s')) iMax = to.i;
  if (handle.includes('w')) jMin = to.j;
  if (handle.includes('e')) jMax = to.j;
  return { classId: start.classId, iMin, jMin, iMax, jMax };
}

const HANDLES: Array<{ handle: Handle; at: (b: CanvasBox) => ImagePoint }> = [
  { handle: 'nw', at: (b) => ({ i: b.iMin, j: b.jMin }) },
  { handle: 'ne', at: (b) => ({ i: b.iMin, j: b.jMax }) },
  { handle: 'sw', at: (b) => ({ i: b.iMax, j: b.jMin }) },
  { handle: 'se', at: (b) => ({ i: b.iMax, j: b.jMax }) },
  { handle: 'n', at: (b) => ({ i: b.iMin, j: (b.jMin + b.jMax) / 2 }) },
  { handle: 's', at: (b) => ({ i: b.iMax, j: (b.jMin + b.jMax) / 2 }) },
  { handle: 'w', at: (b) => ({ i: (b.iMin + b.iMax) / 2, j: b.jMin }) },
  { handle: 'e', at: (b) => ({ i: (b.iMin + b.iMax) / 2, j: b.jMax }) },
];

export interface HitResult {
  index: number;
  handle: Handle | null;
}

/**
 * Hit-test a pointer position against boxes, preferring resize handles of the
 * selected box, then box bodies from topmost (latest drawn) down.
 */
export function hitTest(
  boxes: CanvasBox[],
  point: ImagePoint,
  selected: number | null,
  tolerance: number,
): HitResult | null {
  if (selected !== null && selected >= 0 && selected < boxes.length) {
    const box = boxes[selected];
    for (const { handle, at } of HANDLES) {
      const p = at(box);
      if (Math.abs(p.i - point.i) <= tolerance && Math.abs(p.j - point.j) <= tolerance) {
        return { index: selected, handle };
      }
    }
  }
  for (let k = boxes.length - 1; k >= 0; k--) {
    const b = boxes[k];
    if (point.i >= b.iMin && point.i <= b.iMax && point.j >= b.jMin && point.j <= b.jMax) {
      return { index: k, handle: null };
    }
  }
  return null;
}

export function beginDrag(
  boxes: CanvasBox[],
  point: ImagePoint,
  selected: number | null,
  classId: number,
  tolerance: number,
): DragState {
  const hit = hitTest(boxes, point, selected, tolerance);
  if (hit && hit.handle) {
    return { kind: 'resize', index: hit.index, handle: hit.handle, current: point, start: boxes[hit.index] };
  }
  if (hit) {
    return { kind: 'move', index: hit.index, origin: point, current: point, start: boxes[hit.index] };
  }
  return { kind: 'draw', classId, origin: point, current: point };
}

export function updateDrag(drag: DragState, point: ImagePoint): DragState {
  return { ...drag, current: point };
}

/** The box a drag currently describes, before release rounding. */
export function dragPreview(drag: DragState, height: number, width: number): CanvasBox {
  switch (drag.kind) {
    case 'draw':
      return normalizeBox({
        classId: drag.classId,
        iMin: drag.origin.i,
        jMin: drag.origin.j,
        iMax: drag.current.i,
        jMax: drag.current.j,
      });
    case 'move':
      return moveBox(
        drag.start,
        drag.current.i - drag.origin.i,
        drag.current.j - drag.origin.j,
        height,
        width,
      );
    case 'resize':
      return normalizeBox(resizeBox(drag.start, drag.handle, drag.current));
  }
}

/**
 * Finish a drag: round + clamp, then append (draw) or replace (move/resize).
 * New boxes append at the end so drawing order is submission order.
 */
export function endDrag(
  boxes: CanvasBox[],
  drag: DragState,
  height: number,
  width: number,
): { boxes: CanvasBox[]; selected: number } {
  const finished = clampBox(dragPreview(drag, height, width), height, width);
  if (drag.kind === 'draw') {
    return { boxes: [...boxes, finished], selected: boxes.length };
  }
  const next = boxes.slice();
  next[drag.index] = finished;
  return { boxes: next, selected: drag.index };
}

export function deleteBox(boxes: CanvasBox[], index: number): CanvasBox[] {
  return boxes.filter((_, k) => k !== index);
}

/** Image-space boxes -> API payload, preserving list order. */
export function toBoxSpecs(boxes: CanvasBox[]): BoxSpec[] {
  return boxes.map((b) => ({
    class: b.classId,
    i_min: b.iMin,
    j_min: b.jMin,
    i_max: b.iMax,
    j_max: b.jMax,
  }));
}

export function fromBoxSpecs(specs: BoxSpec[]): CanvasBox[] {
  return specs.map((s) => ({
    classId: s.class,
    iMin: s.i_min,
    jMin: s.j_min,
    iMax: s.i_max,
    jMax: s.j_max,
  }));
}
