/**
 * The approximation-error panel: binned correlation error against distance,
 * with the previous curve kept as a ghost so an adjustment can be judged
 * against what it replaced.
 */

import type { AssessResponse, Point } from "./api.js";
import type { DrawContext } from "./meshview.js";

export interface ErrorCurve {
  centers: number[];
  values: (number | null)[];
}

/** Bin error above this is flagged as "mesh too coarse for this range".
 * A display heuristic, not a server quantity; labeled as such in the page. */
export const COARSE_WARNING_THRESHOLD = 0.1;

export function curveFromAssess(resp: AssessResponse): ErrorCurve {
  return {
    centers: resp.bins.centers.slice(),
    values: resp.bins.mean_abs_error.slice(),
  };
}

/**
 * Share of bins where `next` is at or below `prev`, among bins populated in
 * both curves. Returns NaN when no bin is comparable.
 */
export function dominatedShare(next: ErrorCurve, prev: ErrorCurve): number {
  let comparable = 0;
  let dominated = 0;
  const n = Math.min(next.values.length, prev.values.length);
  for (let i = 0; i < n; i++) {
    const a = next.values[i];
    const b = prev.values[i];
    if (a === null || b === null) {
      continue;
    }
    comparable += 1;
    if (a <= b) {
      dominated += 1;
    }
  }
  return comparable === 0 ? NaN : dominated / comparable;
}

export function maxBinError(curve: ErrorCurve): number | null {
  let worst: number | null = null;
  for (const v of curve.values) {
    if (v !== null && (worst === null || v > worst)) {
      worst = v;
    }
  }
  return worst;
}

export function isTooCoarse(
  curve: ErrorCurve,
  threshold = COARSE_WARNING_THRESHOLD,
): boolean {
  const worst = maxBinError(curve);
  return worst !== null && worst > threshold;
}

interface CurveLayout {
  width: number;
  height: number;
  margin: number;
  maxX: number;
  maxY: number;
}

function curvePoints(curve: ErrorCurve, layout: CurveLayout): Point[] {
  const { width, height, margin, maxX, maxY } = layout;
  const pts: Point[] = [];
  for (let i = 0; i < curve.centers.length; i++) {
    const v = curve.values[i];
    if (v === null) {
      continue;
    }
    pts.push([
      margin + (curve.centers[i] / maxX) * (width - 2 * margin),
      height - margin - (v / maxY) * (height - 2 * margin),
    ]);
  }
  return pts;
}

function strokePolyline(ctx: DrawContext, pts: Point[]): void {
  if (pts.length === 0) {
    return;
  }
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  for (let i = 1; i < pts.length; i++) {
    ctx.lineTo(pts[i][0], pts[i][1]);
  }
  ctx.stroke();
}

/**
 * Draw current and ghost curves on a shared scale. The warning threshold is
 * drawn as a dashed-looking reference line (two thin strokes).
 */
export function drawErrorCurves(
  ctx: DrawContext,
  width: number,
  height: number,
  current: ErrorCurve | null,
  ghost: ErrorCurve | null,
  threshold = COARSE_WARNING_THRESHOLD,
): void {
  ctx.clearRect(0, 0, width, height);
  const margin = 28;
  let maxX = 1;
  let maxY = threshold * 1.2;
  for (const curve of [current, ghost]) {
    if (!curve) {
      continue;
    }
    for (let i = 0; i < curve.centers.length; i++) {
      if (curve.values[i] !== null) {
        maxX = Math.max(maxX, curve.centers[i]);
        maxY = Math.max(maxY, curve.values[i] as number);
      }
    }
  }
  const layout: CurveLayout = { width, height, margin, maxX, maxY };

  // axes
  ctx.strokeStyle = "#888";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(margin, margin / 2);
  ctx.lineTo(margin, height - margin);
  ctx.lineTo(width - margin / 2, height - margin);
  ctx.stroke();

  // threshold reference
  const ty = height - margin - (threshold / maxY) * (height - 2 * margin);
  ctx.strokeStyle = "#c0392b";
  ctx.globalAlpha = 0.5;
  ctx.beginPath();
  ctx.moveTo(margin, ty);
  ctx.lineTo(width - margin / 2, ty);
  ctx.stroke();
  ctx.globalAlpha = 1.0;

  if (ghost) {
    ctx.strokeStyle = "#b0b8c0";
    ctx.lineWidth = 1.5;
    strokePolyline(ctx, curvePoints(ghost, layout));
  }
  if (current) {
    ctx.strokeStyle = "#1f6f8b";
    ctx.lineWidth = 2;
    strokePolyline(ctx, curvePoints(current, layout));
  }
}
