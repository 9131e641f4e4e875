// Stroke capture model and its rasterization to the service's sketch format
// (binary grid, 1 = stroke, exported as white-on-black grayscale PNG).

import { encodeGrayPng, decodeGrayPng, GrayImage } from "./png.js";
import { bytesToBase64, base64ToBytes } from "./base64.js";

export interface StrokePoint {
  x: number; // normalized 0..1
  y: number;
}

export interface Stroke {
  points: StrokePoint[];
  width: number; // brush width in normalized units (fraction of canvas side)
}

export interface CanvasState {
  strokes: Stroke[];
}

export function emptyCanvas(): CanvasState {
  return { strokes: [] };
}

function stamp(grid: Uint8Array, size: number, cx: number, cy: number, radiusPx: number): void {
  const r = Math.max(0, radiusPx);
  const x0 = Math.max(0, Math.floor(cx - r));
  const x1 = Math.min(size - 1, Math.ceil(cx + r));
  const y0 = Math.max(0, Math.floor(cy - r));
  const y1 = Math.min(size - 1, Math.ceil(cy + r));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r * r + 1e-9) {
        grid[y * size + x] = 1;
      }
    }
  }
}

/** Rasterize strokes onto a binary size x size grid. */
export function rasterizeStrokes(state: CanvasState, size: number): Uint8Array {
  const grid = new Uint8Array(size * size);
  for (const stroke of state.strokes) {
    const radius = (stroke.width * size) / 2;
    const pts = stroke.points;
    if (pts.length === 0) continue;
    if (pts.length === 1) {
      stamp(grid, size, pts[0].x * size, pts[0].y * size, radius);
      continue;
    }
    for (let i = 1; i < pts.length; i++) {
      const ax = pts[i - 1].x * size;
      const ay = pts[i - 1].y * size;
      const bx = pts[i].x * size;
      const by = pts[i].y * size;
      const steps = Math.max(1, Math.ceil(2 * Math.max(Math.abs(bx - ax), Math.abs(by - ay))));
      for (let s = 0; s <= steps; s++) {
        const t = s / steps;
        stamp(grid, size, ax + (bx - ax) * t, ay + (by - ay) * t, radius);
      }
    }
  }
  return grid;
}

/** Binary grid -> white-on-black grayscale PNG, base64-encoded. */
export function gridToPngBase64(grid: Uint8Array, size: number): string {
  const pixels = new Uint8Array(grid.length);
  for (let i = 0; i < grid.length; i++) pixels[i] = grid[i] ? 255 : 0;
  return bytesToBase64(encodeGrayPng({ width: size, height: size, pixels }));
}

/** Inverse of gridToPngBase64 for sketch PNGs this app exported. */
export function pngBase64ToGrid(b64: string): { grid: Uint8Array; size: number } {
  const img: GrayImage = decodeGrayPng(base64ToBytes(b64));
  if (img.width !== img.height) throw new Error("sketch PNGs are square");
  const grid = new Uint8Array(img.pixels.length);
  for (let i = 0; i < img.pixels.length; i++) grid[i] = img.pixels[i] >= 128 ? 1 : 0;
  return { grid, size: img.width };
}

/** Full export: strokes -> binary raster at the model resolution -> base64 PNG. */
export function exportSketch(state: CanvasState, size: number): string {
  return gridToPngBase64(rasterizeStrokes(state, size), size);
}

export function strokeCount(state: CanvasState): number {
  return state.strokes.length;
}
