/**
 * DOM wiring for the annotator: canvas box editing on the left, generation
 * controls and session history on the right. All geometry/overlay logic is
 * delegated to the pure modules so this file is only event plumbing.
 */

import {
  CanvasBox,
  DragState,
  beginDrag,
  deleteBox,
  dragPreview,
  endDrag,
  fromBoxSpecs,
  toBoxSpecs,
  updateDrag,
} from './boxes.js';
import type { ApiClient } from './client.js';
import { ApiError } from './client.js';
import { HistoryEntry, describeEntry, pushEntry } from './history.js';
import { classPixelCounts, cssColor, formatPct, maskToRgba, rgbaToMaskValues } from './overlay.js';
import { SubmissionQueue } from './queue.js';
import type { GenerateRequest, JobResult, Meta } from './types.js';

const HANDLE_TOLERANCE_PX = 8;

interface AppState {
  meta: Meta;
  height: number;
  width: number;
  scale: number;
  boxes: CanvasBox[];
  selected: number | null;
  drag: DragState | null;
  seed: number;
  maskValues: Uint8Array | null;
  result: JobResult | null;
  opacity: number;
  visible: boolean[];
  history: HistoryEntry[];
}

function mustFind<T extends HTMLElement>(root: Document, id: string): T {
  const el = root.getElementById(id);
  if (!el) throw new Error(`missing #${id} in page`);
  return el as T;
}

async function decodePng(base64: string): Promise<HTMLImageElement> {
  const img = new Image();
  img.src = `data:image/png;base64,${base64}`;
  await img.decode();
  return img;
}

function imagePixels(img: HTMLImageElement): Uint8ClampedArray {
  const scratch = document.createElement('canvas');
  scratch.width = img.naturalWidth;
  scratch.height = img.naturalHeight;
  const ctx = scratch.getContext('2d')!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, scratch.width, scratch.height).data;
}

export async function initApp(root: Document, client: ApiClient): Promise<void> {
  const imageCanvas = mustFind<HTMLCanvasElement>(root, 'image-canvas');
  const overlayCanvas = mustFind<HTMLCanvasElement>(root, 'overlay-canvas');
  const boxesCanvas = mustFind<HTMLCanvasElement>(root, 'boxes-canvas');
  const classSelect = mustFind<HTMLSelectElement>(root, 'class-select');
  const seedInput = mustFind<HTMLInputElement>(root, 'seed-input');
  const stepsInput = mustFind<HTMLInputElement>(root, 'steps-input');
  const opacitySlider = mustFind<HTMLInputElement>(root, 'opacity-slider');
  const togglesDiv = mustFind<HTMLDivElement>(root, 'class-toggles');
  const generateBtn = mustFind<HTMLButtonElement>(root, 'generate-btn');
  const regenerateBtn = mustFind<HTMLButtonElement>(root, 'regenerate-btn');
  const clearBtn = mustFind<HTMLButtonElement>(root, 'clear-btn');
  const saeBadge = mustFind<HTMLSpanElement>(root, 'sae-badge');
  const ebrBadge = mustFind<HTMLSpanElement>(root, 'ebr-badge');
  const statusLine = mustFind<HTMLSpanElement>(root, 'status-line');
  const errorBanner = mustFind<HTMLDivElement>(root, 'error-banner');
  const errorText = mustFind<HTMLSpanElement>(root, 'error-text');
  const errorDismiss = mustFind<HTMLButtonElement>(root, 'error-dismiss');
  const historyList = mustFind<HTMLUListElement>(root, 'history-list');
  const metaLine = mustFind<HTMLSpanElement>(root, 'meta-line');

  let meta: Meta;
  try {
    meta = await client.fetchMeta();
  } catch (error) {
    errorText.textContent = `service unreachable: ${String(error)}`;
    errorBanner.hidden = false;
    return;
  }

  const height = meta.checkpoint.trained_height ?? 32;
  const width = meta.checkpoint.trained_width ?? 32;
  const state: AppState = {
    meta,
    height,
    width,
    scale: Math.max(4, Math.floor(512 / Math.max(height, width))),
    boxes: [],
    selected: null,
    drag: null,
    seed: Math.floor(Math.random() * 1_000_000),
    maskValues: null,
    result: null,
    opacity: 0.55,
    visible: meta.class_names.map(() => true),
    history: [],
  };
  const queue = new SubmissionQueue(client);

  metaLine.textContent =
    `${meta.class_names.length} classes · ${height}×${width} px · ` +
    `schedule ${meta.checkpoint.schedule_steps} steps · v${meta.service_version}`;
  seedInput.value = String(state.seed);

  // Class picker lists only defect classes; background is not drawable.
  meta.class_names.slice(1).forEach((name, k) => {
    const option = root.createElement('option');
    option.value = String(k + 1);
    option.textContent = `${k + 1}: ${name}`;
    classSelect.appendChild(option);
  });

  meta.class_names.forEach((name, value) => {
    if (value === 0) return; // background has no toggle
    const label = root.createElement('label');
    const checkbox = root.createElement('input');
    checkbox.type = 'checkbox';
    checkbox.checked = true;
    checkbox.addEventListener('change', () => {
      state.visible[value] = checkbox.checked;
      renderOverlay();
    });
    const swatch = root.createElement('span');
    swatch.className = 'swatch';
    swatch.style.backgroundColor = cssColor(meta.palette[value]);
    label.append(checkbox, swatch, name);
    togglesDiv.appendChild(label);
  });

  for (const canvas of [imageCanvas, overlayCanvas, boxesCanvas]) {
    canvas.width = state.width * state.scale;
    canvas.height = state.height * state.scale;
  }

  const pointToImage = (event: PointerEvent) => {
    const rect = boxesCanvas.getBoundingClientRect();
    return {
      i: (event.clientY - rect.top) / state.scale,
      j: (event.clientX - rect.left) / state.scale,
    };
  };

  function drawBoxes(): void {
    const ctx = boxesCanvas.getContext('2d')!;
    ctx.clearRect(0, 0, boxesCanvas.width, boxesCanvas.height);
    const s = state.scale;
    const paint = (box: CanvasBox, emphasized: boolean, dashed: boolean) => {
      ctx.lineWidth = emphasized ? 3 : 2;
      ctx.setLineDash(dashed ? [6, 4] : []);
      ctx.strokeStyle = cssColor(state.meta.palette[box.classId] ?? [255, 0, 255]);
      ctx.strokeRect(
        box.jMin * s,
        box.iMin * s,
        (box.jMax - box.jMin + 1) * s,
        (box.iMax - box.iMin + 1) * s,
      );
    };
    state.boxes.forEach((box, k) => paint(box, k === state.selected, false));
    if (state.selected !== null && state.boxes[state.selected]) {
      const b = state.boxes[state.selected];
      ctx.setLineDash([]);
      ctx.fillStyle = '#ffffff';
      ctx.strokeStyle = '#333333';
      ctx.lineWidth = 1;
      const corners = [
        [b.iMin, b.jMin], [b.iMin, b.jMax + 1], [b.iMax + 1, b.jMin], [b.iMax + 1, b.jMax + 1],
      ];
      for (const [ci, cj] of corners) {
        ctx.fillRect(cj * s - 4, ci * s - 4, 8, 8);
        ctx.strokeRect(cj * s - 4, ci * s - 4, 8, 8);
      }
    }
    if (state.drag) paint(dragPreview(state.drag, state.height, state.width), true, true);
  }

  function renderOverlay(): void {
    const ctx = overlayCanvas.getContext('2d')!;
    ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
    if (!state.maskValues || !state.result) return;
    const rgba = maskToRgba(state.maskValues, state.result.palette, {
      opacity: state.opacity,
      visible: state.visible,
    });
    const scratch = document.createElement('canvas');
    scratch.width = state.width;
    scratch.height = state.height;
    scratch.getContext('2d')!.putImageData(
      new ImageData(new Uint8ClampedArray(rgba), state.width, state.height), 0, 0,
    );
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(scratch, 0, 0, overlayCanvas.width, overlayCanvas.height);
  }

  async function showResult(result: JobResult): Promise<void> {
    state.result = result;
    const [image, mask] = await Promise.all([
      decodePng(result.image_png_base64),
      decodePng(result.mask_png_base64),
    ]);
    const ctx = imageCanvas.getContext('2d')!;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, imageCanvas.width, imageCanvas.height);
    ctx.drawImage(image, 0, 0, imageCanvas.width, imageCanvas.height);
    state.maskValues = rgbaToMaskValues(imagePixels(mask));
    renderOverlay();
    saeBadge.textContent = `SAE ${formatPct(result.sae)}`;
    ebrBadge.textContent = `EBR ${formatPct(result.ebr)}`;
    const counts = classPixelCounts(state.maskValues, state.meta.class_names.length);
    statusLine.textContent = `done · ${counts.slice(1).reduce((a, b) => a + b, 0)} defect px`;
  }

  function renderHistory(): void {
    historyList.replaceChildren();
    for (const entry of state.history) {
      const item = root.createElement('li');
      const button = root.createElement('button');
      button.textContent = `${describeEntry(entry)} · SAE ${formatPct(entry.result.sae)}`;
      button.addEventListener('click', () => {
        state.boxes = fromBoxSpecs(entry.request.boxes);
        state.selected = null;
        state.seed = entry.request.seed;
        seedInput.value = String(entry.request.seed);
        void showResult(entry.result);
        drawBoxes();
      });
      item.appendChild(button);
      historyList.appendChild(item);
    }
  }

  function showError(message: string): void {
    errorText.textContent = message;
    errorBanner.hidden = false;
  }

  async function generate(seed: number): Promise<void> {
    state.seed = seed;
    seedInput.value = String(seed);
    const request: GenerateRequest = {
      height: state.height,
      width: state.width,
      boxes: toBoxSpecs(state.boxes),
      seed,
    };
    const steps = Number(stepsInput.value);
    if (Number.isFinite(steps) && steps >= 1) request.steps = steps;
    statusLine.textContent = `generating (queue depth ${queue.depth + 1})…`;
    try {
      const job = await queue.submit(request);
      if (job.status === 'failed' || !job.result) {
        showError(job.error ?? 'generation failed');
        statusLine.textContent = 'failed';
        return;
      }
      await showResult(job.result);
      state.history = pushEntry(state.history, {
        jobId: job.job_id,
        request: job.request,
        result: job.result,
        finishedAt: job.finished_at ?? Date.now() / 1000,
      });
      renderHistory();
    } catch (error) {
      // Boxes and the current view stay untouched; surface and move on.
      const message = error instanceof ApiError ? error.message : String(error);
      showError(message);
      statusLine.textContent = 'error';
    }
  }

  boxesCanvas.addEventListener('pointerdown', (event) => {
    boxesCanvas.setPointerCapture(event.pointerId);
    const point = pointToImage(event);
    state.drag = beginDrag(
      state.boxes,
      point,
      state.selected,
      Number(classSelect.value) || 1,
      HANDLE_TOLERANCE_PX / state.scale,
    );
    if (state.drag.kind !== 'draw') state.selected = state.drag.index;
    drawBoxes();
  });

  boxesCanvas.addEventListener('pointermove', (event) => {
    if (!state.drag) return;
    state.drag = updateDrag(state.drag, pointToImage(event));
    drawBoxes();
  });

  boxesCanvas.addEventListener('pointerup', () => {
    if (!state.drag) return;
    const drag = state.drag;
    state.drag = null;
    if (
      drag.kind === 'draw' &&
      Math.abs(drag.current.i - drag.origin.i) < 0.5 &&
      Math.abs(drag.current.j - drag.origin.j) < 0.5
    ) {
      state.selected = null; // bare click on empty space deselects
      drawBoxes();
      return;
    }
    const next = endDrag(state.boxes, drag, state.height, state.width);
    state.boxes = next.boxes;
    state.selected = next.selected;
    drawBoxes();
  });

  root.addEventListener('keydown', (event) => {
    const target = event.target as HTMLElement | null;
    if (target && (target.tagName === 'INPUT' || target.tagName === 'SELECT')) return;
    if ((event.key === 'Delete' || event.key === 'Backspace') && state.selected !== null) {
      state.boxes = deleteBox(state.boxes, state.selected);
      state.selected = null;
      drawBoxes();
      event.preventDefault();
    }
  });

  generateBtn.addEventListener('click', () => {
    void generate(Math.floor(Math.random() * 1_000_000));
  });
  regenerateBtn.addEventListener('click', () => {
    void generate(Number(seedInput.value) || 0);
  });
  clearBtn.addEventListener('click', () => {
    state.boxes = [];
    state.selected = null;
    drawBoxes();
  });
  seedInput.addEventListener('change', () => {
    state.seed = Number(seedInput.value) || 0;
  });
  opacitySlider.addEventListener('input', () => {
    state.opacity = Number(opacitySlider.value) / 100;
    renderOverlay();
  });
  errorDismiss.addEventListener('click', () => {
    errorBanner.hidden = true;
  });

  drawBoxes();
  statusLine.textContent = 'ready — draw boxes, then generate';
}
