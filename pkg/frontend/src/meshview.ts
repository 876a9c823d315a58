/**
 * Canvas rendering of a mesh: triangles colored by their smallest angle,
 * inner and extension zones distinguished, vertices on request.
 */

import type { MeshDto, MeshQuality, Point } from "./api.js";

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Fit a bounding box into a canvas, preserving aspect ratio. */
export function computeTransform(
  vertices: Point[],
  width: number,
  height: number,
  margin = 10,
): ViewTransform {
  if (vertices.length === 0) {
    return { scale: 1, offsetX: 0, offsetY: 0 };
  }
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  for (const [x, y] of vertices) {
    minX = Math.min(minX, x);
    minY = Math.min(minY, y);
    maxX = Math.max(maxX, x);
    maxY = Math.max(maxY, y);
  }
  const spanX = maxX - minX || 1;
  const spanY = maxY - minY || 1;
  const scale = Math.min(
    (width - 2 * margin) / spanX,
    (height - 2 * margin) / spanY,
  );
  return {
    scale,
    offsetX: margin - minX * scale + (width - 2 * margin - spanX * scale) / 2,
    // canvas y grows downward
    offsetY: height - margin + minY * scale - (height - 2 * margin - spanY * scale) / 2,
  };
}

export function toCanvas(p: Point, t: ViewTransform): Point {
  return [p[0] * t.scale + t.offsetX, t.offsetY - p[1] * t.scale];
}

/**
 * Heat color for a triangle's smallest angle: red at degenerate, through
 * yellow, to green at the equilateral 60 degrees.
 */
export function angleHeatColor(angleDeg: number): string {
  const quality = Math.max(0, Math.min(1, angleDeg / 60));
  const hue = Math.round(120 * quality);
  return `hsl(${hue}, 75%, 55%)`;
}

/** Color ramp for per-node values (marginal sd, sampled field). */
export function valueColor(value: number, lo: number, hi: number): string {
  const span = hi - lo || 1;
  const unit = Math.max(0, Math.min(1, (value - lo) / span));
  // dark blue to warm yellow
  const hue = Math.round(240 - 190 * unit);
  return `hsl(${hue}, 70%, ${Math.round(35 + 25 * unit)}%)`;
}

/** Subset of CanvasRenderingContext2D the renderers touch. */
export interface DrawContext {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  globalAlpha: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  fill(): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
}

function tracePath(ctx: DrawContext, corners: Point[]): void {
  ctx.beginPath();
  ctx.moveTo(corners[0][0], corners[0][1]);
  for (let i = 1; i < corners.length; i++) {
    ctx.lineTo(corners[i][0], corners[i][1]);
  }
  ctx.closePath();
}

export interface MeshDrawOptions {
  width: number;
  height: number;
  showVertices?: boolean;
  /** per-vertex values to fill with instead of angle heat */
  nodeValues?: number[] | null;
}

/**
 * Draw the mesh. Triangles carry angle-heat fill; triangles with any vertex
 * outside the inner zone are faded to show the boundary extension.
 */
export function drawMesh(
  ctx: DrawContext,
  mesh: MeshDto,
  quality: MeshQuality,
  opts: MeshDrawOptions,
): void {
  const { width, height } = opts;
  ctx.clearRect(0, 0, width, height);
  const t = computeTransform(mesh.vertices, width, height);
  const corners: Point[] = [
    [0, 0],
    [0, 0],
    [0, 0],
  ];

  let lo = 0;
  let hi = 1;
  if (opts.nodeValues && opts.nodeValues.length > 0) {
    lo = Math.min(...opts.nodeValues);
    hi = Math.max(...opts.nodeValues);
  }

  for (let k = 0; k < mesh.triangles.length; k++) {
    const tri = mesh.triangles[k];
    for (let i = 0; i < 3; i++) {
      corners[i] = toCanvas(mesh.vertices[tri[i]], t);
    }
    const inner =
      quality.vertex_inner[tri[0]] &&
      quality.vertex_inner[tri[1]] &&
      quality.vertex_inner[tri[2]];
    if (opts.nodeValues) {
      const mid =
        (opts.nodeValues[tri[0]] +
          opts.nodeValues[tri[1]] +
          opts.nodeValues[tri[2]]) /
        3;
      ctx.fillStyle = valueColor(mid, lo, hi);
    } else {
      ctx.fillStyle = angleHeatColor(quality.triangle_min_angle[k]);
    }
    ctx.globalAlpha = inner ? 1.0 : 0.35;
    tracePath(ctx, corners);
    ctx.fill();
    ctx.strokeStyle = "rgba(40, 40, 40, 0.45)";
    ctx.lineWidth = 0.6;
    ctx.stroke();
  }
  ctx.globalAlpha = 1.0;

  if (opts.showVertices) {
    ctx.fillStyle = "#1a1a1a";
    for (const v of mesh.vertices) {
      const [x, y] = toCanvas(v, t);
      ctx.beginPath();
      ctx.arc(x, y, 1.5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}

/** Draw input points and the boundary polygon before any mesh exists. */
export function drawPoints(
  ctx: DrawContext,
  points: Point[],
  boundary: Point[] | null,
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  const all = boundary ? points.concat(boundary) : points;
  if (all.length === 0) {
    return;
  }
  const t = computeTransform(all, width, height);
  if (boundary && boundary.length >= 2) {
    tracePath(
      ctx,
      boundary.map((p) => toCanvas(p, t)),
    );
    ctx.strokeStyle = "#b3541e";
    ctx.lineWidth = 1.5;
    ctx.stroke();
  }
  ctx.fillStyle = "#2a4d69";
  for (const p of points) {
    const [x, y] = toCanvas(p, t);
    ctx.beginPath();
    ctx.arc(x, y, 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
}
