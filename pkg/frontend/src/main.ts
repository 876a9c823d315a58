/**
 * Page wiring: point upload, boundary drawing, sliders, and the
 * build/assess loop against the local service. Server calls fire on slider
 * release, one request in flight per panel, newest wins.
 */

import {
  ApiError,
  assessMesh,
  buildMesh,
  LatestWinsChannel,
  type AssessRequest,
  type AssessResponse,
  type MeshRequest,
  type MeshResponse,
  type Point,
} from "./api.js";
import {
  COARSE_WARNING_THRESHOLD,
  curveFromAssess,
  dominatedShare,
  drawErrorCurves,
  isTooCoarse,
  maxBinError,
  type ErrorCurve,
} from "./curves.js";
import { drawMesh, drawPoints } from "./meshview.js";
import {
  clamp,
  decodeState,
  defaultState,
  encodeState,
  SLIDER_LIMITS,
  type SessionState,
} from "./state.js";

const SERVICE_BASE = "";

interface PageElements {
  meshCanvas: HTMLCanvasElement;
  sdCanvas: HTMLCanvasElement;
  curveCanvas: HTMLCanvasElement;
  stats: HTMLElement;
  curveNote: HTMLElement;
  warning: HTMLElement;
  errors: HTMLElement;
  status: HTMLElement;
  pointsFile: HTMLInputElement;
  demoButton: HTMLButtonElement;
  drawToggle: HTMLButtonElement;
  clearBoundary: HTMLButtonElement;
  shareLink: HTMLAnchorElement;
  sliders: Record<string, HTMLInputElement>;
}

interface PageRuntime {
  state: SessionState;
  lastMesh: MeshResponse | null;
  lastCurve: ErrorCurve | null;
  ghostCurve: ErrorCurve | null;
  drawingBoundary: boolean;
}

function grab(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing page element: ${id}`);
  }
  return el;
}

function collectElements(): PageElements {
  const sliders: Record<string, HTMLInputElement> = {};
  for (const name of Object.keys(SLIDER_LIMITS)) {
    sliders[name] = grab(`slider-${name}`) as HTMLInputElement;
  }
  return {
    meshCanvas: grab("mesh-canvas") as HTMLCanvasElement,
    sdCanvas: grab("sd-canvas") as HTMLCanvasElement,
    curveCanvas: grab("curve-canvas") as HTMLCanvasElement,
    stats: grab("mesh-stats"),
    curveNote: grab("curve-note"),
    warning: grab("coarse-warning"),
    errors: grab("error-panel"),
    status: grab("status-line"),
    pointsFile: grab("points-file") as HTMLInputElement,
    demoButton: grab("demo-points") as HTMLButtonElement,
    drawToggle: grab("draw-boundary") as HTMLButtonElement,
    clearBoundary: grab("clear-boundary") as HTMLButtonElement,
    shareLink: grab("share-link") as HTMLAnchorElement,
    sliders,
  };
}

/** Parse an x,y CSV with a header line; bad rows are reported, not fatal. */
export function parsePointsCsv(text: string): { points: Point[]; errors: string[] } {
  const points: Point[] = [];
  const errors: string[] = [];
  const lines = text.split(/\r?\n/);
  let start = 0;
  if (lines.length > 0 && /[a-df-wyz]/i.test(lines[0])) {
    start = 1; // header
  }
  for (let i = start; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "") {
      continue;
    }
    const parts = line.split(",");
    const x = Number(parts[0]);
    const y = Number(parts[1]);
    if (parts.length < 2 || !Number.isFinite(x) || !Number.isFinite(y)) {
      errors.push(`line ${i + 1}: expected two numbers, got "${line}"`);
      continue;
    }
    points.push([x, y]);
  }
  return { points, errors };
}

function formatStats(resp: MeshResponse): string {
  const q = resp.quality;
  const hist = q.edge_histogram;
  const bars = hist.counts
    .map((c) => {
      const peak = Math.max(...hist.counts, 1);
      const h = Math.round((c / peak) * 8);
      return "▁▂▃▄▅▆▇█"[Math.max(0, h - 1)] ?? "▁";
    })
    .join("");
  return [
    `${q.n_vertices} vertices, ${q.n_triangles} triangles`,
    `min angle ${q.min_angle_deg.toFixed(1)}°`,
    `edges ${q.edge_min.toFixed(3)} – ${q.edge_max.toFixed(3)} (mean ${q.edge_mean.toFixed(3)})`,
    `edge histogram ${bars}`,
  ].join("\n");
}

function init(): void {
  const els = collectElements();
  const runtime: PageRuntime = {
    state: defaultState(),
    lastMesh: null,
    lastCurve: null,
    ghostCurve: null,
    drawingBoundary: false,
  };

  if (window.location.hash.length > 1) {
    runtime.state = decodeState(window.location.hash.slice(1));
  }

  const showErrors = (lines: string[]): void => {
    els.errors.textContent = lines.join("\n");
    els.errors.hidden = lines.length === 0;
  };

  const reportFailure = (err: unknown): void => {
    if (err instanceof ApiError) {
      showErrors(err.describe());
    } else {
      showErrors([String(err)]);
    }
    els.status.textContent = "request failed";
  };

  const assessChannel = new LatestWinsChannel<AssessRequest, AssessResponse>(
    (req) => assessMesh(SERVICE_BASE, req),
    (resp) => {
      showErrors([]);
      runtime.ghostCurve = runtime.lastCurve;
      runtime.lastCurve = curveFromAssess(resp);
      redrawCurves();
      drawSdSurface(resp);
      els.status.textContent = `assessed with ${resp.n_sources} probe nodes`;
    },
    reportFailure,
  );

  const meshChannel = new LatestWinsChannel<MeshRequest, MeshResponse>(
    (req) => buildMesh(SERVICE_BASE, req),
    (resp) => {
      showErrors([]);
      runtime.lastMesh = resp;
      els.stats.textContent = formatStats(resp);
      redrawMesh();
      els.status.textContent = "mesh rebuilt, assessing";
      requestAssess();
    },
    reportFailure,
  );

  function redrawMesh(): void {
    const ctx = els.meshCanvas.getContext("2d");
    if (!ctx) {
      return;
    }
    if (runtime.lastMesh) {
      drawMesh(ctx, runtime.lastMesh.mesh, runtime.lastMesh.quality, {
        width: els.meshCanvas.width,
        height: els.meshCanvas.height,
      });
    } else {
      drawPoints(
        ctx,
        runtime.state.points,
        runtime.state.boundary,
        els.meshCanvas.width,
        els.meshCanvas.height,
      );
    }
  }

  function drawSdSurface(resp: AssessResponse): void {
    const ctx = els.sdCanvas.getContext("2d");
    if (!ctx || !runtime.lastMesh) {
      return;
    }
    drawMesh(ctx, runtime.lastMesh.mesh, runtime.lastMesh.quality, {
      width: els.sdCanvas.width,
      height: els.sdCanvas.height,
      nodeValues: resp.marginal_sd,
    });
    const lo = Math.min(...resp.marginal_sd);
    const hi = Math.max(...resp.marginal_sd);
    els.curveNote.textContent =
      `marginal sd ${lo.toFixed(3)} – ${hi.toFixed(3)}` +
      (runtime.ghostCurve && runtime.lastCurve
        ? `; improved ${(dominatedShare(runtime.lastCurve, runtime.ghostCurve) * 100).toFixed(0)}% of bins vs previous`
        : "");
  }

  function redrawCurves(): void {
    const ctx = els.curveCanvas.getContext("2d");
    if (!ctx) {
      return;
    }
    drawErrorCurves(
      ctx,
      els.curveCanvas.width,
      els.curveCanvas.height,
      runtime.lastCurve,
      runtime.ghostCurve,
    );
    if (runtime.lastCurve && isTooCoarse(runtime.lastCurve)) {
      const worst = maxBinError(runtime.lastCurve);
      els.warning.textContent =
        `mesh too coarse for this range: bin error ${worst?.toFixed(3)} ` +
        `exceeds ${COARSE_WARNING_THRESHOLD} (display heuristic)`;
      els.warning.hidden = false;
    } else {
      els.warning.hidden = true;
    }
  }

  function syncUrl(): void {
    const encoded = encodeState(runtime.state);
    window.history.replaceState(null, "", `#${encoded}`);
    els.shareLink.href = `#${encoded}`;
  }

  function requestAssess(): void {
    if (!runtime.lastMesh) {
      return;
    }
    assessChannel.request({
      mesh: runtime.lastMesh.mesh,
      matern_params: {
        range: runtime.state.matern.range,
        sigma: runtime.state.matern.sigma,
      },
    });
  }

  function requestMesh(): void {
    if (runtime.state.points.length < 3) {
      els.status.textContent = "need at least 3 points";
      return;
    }
    const cfg = runtime.state.config;
    const req: MeshRequest = {
      points: runtime.state.points,
      config: {
        max_edge_inner: cfg.max_edge_inner,
        extension_distance: cfg.extension_distance,
        min_angle: cfg.min_angle,
      },
    };
    if (cfg.max_edge_outer !== null) {
      req.config.max_edge_outer = cfg.max_edge_outer;
    }
    if (runtime.state.boundary && runtime.state.boundary.length >= 3) {
      req.boundary = runtime.state.boundary;
    }
    els.status.textContent = "building mesh";
    meshChannel.request(req);
  }

  function setSlidersFromState(): void {
    const values: Record<string, number | null> = {
      max_edge_inner: runtime.state.config.max_edge_inner,
      max_edge_outer: runtime.state.config.max_edge_outer,
      extension_distance: runtime.state.config.extension_distance,
      min_angle: runtime.state.config.min_angle,
      range: runtime.state.matern.range,
      sigma: runtime.state.matern.sigma,
    };
    for (const [name, input] of Object.entries(els.sliders)) {
      const lim = SLIDER_LIMITS[name];
      input.min = String(lim.min);
      input.max = String(lim.max);
      input.step = String(lim.step);
      const v = values[name];
      input.value = String(v ?? lim.max);
      const label = document.getElementById(`value-${name}`);
      if (label) {
        label.textContent = v === null ? "auto" : String(v);
      }
    }
  }

  function applySlider(name: string, value: number): void {
    const v = clamp(name, value);
    switch (name) {
      case "max_edge_inner":
        runtime.state.config.max_edge_inner = v;
        break;
      case "max_edge_outer":
        runtime.state.config.max_edge_outer = v;
        break;
      case "extension_distance":
        runtime.state.config.extension_distance = v;
        break;
      case "min_angle":
        runtime.state.config.min_angle = v;
        break;
      case "range":
        runtime.state.matern.range = v;
        break;
      case "sigma":
        runtime.state.matern.sigma = v;
        break;
      default:
        return;
    }
    syncUrl();
    if (name === "range" || name === "sigma") {
      requestAssess();
    } else {
      requestMesh();
    }
  }

  for (const [name, input] of Object.entries(els.sliders)) {
    // label tracks the drag; the server call waits for release
    input.addEventListener("input", () => {
      const label = document.getElementById(`value-${name}`);
      if (label) {
        label.textContent = input.value;
      }
    });
    input.addEventListener("change", () => {
      applySlider(name, Number(input.value));
    });
  }

  els.pointsFile.addEventListener("change", () => {
    const file = els.pointsFile.files?.[0];
    if (!file) {
      return;
    }
    void file.text().then((text) => {
      const { points, errors } = parsePointsCsv(text);
      showErrors(errors);
      if (points.length >= 3) {
        runtime.state.points = points;
        runtime.lastMesh = null;
        syncUrl();
        redrawMesh();
        requestMesh();
      } else {
        els.status.textContent = "file has fewer than 3 usable points";
      }
    });
  });

  els.demoButton.addEventListener("click", () => {
    // deterministic demo cloud on [0, 6]^2
    const pts: Point[] = [];
    let u = 11;
    for (let i = 0; i < 36; i++) {
      u = (u * 48271) % 2147483647;
      const x = (u / 2147483647) * 6;
      u = (u * 48271) % 2147483647;
      const y = (u / 2147483647) * 6;
      pts.push([Number(x.toFixed(3)), Number(y.toFixed(3))]);
    }
    runtime.state.points = pts;
    runtime.state.boundary = null;
    runtime.lastMesh = null;
    syncUrl();
    redrawMesh();
    requestMesh();
  });

  els.drawToggle.addEventListener("click", () => {
    runtime.drawingBoundary = !runtime.drawingBoundary;
    if (runtime.drawingBoundary) {
      runtime.state.boundary = [];
      runtime.lastMesh = null;
      redrawMesh();
    }
    els.drawToggle.textContent = runtime.drawingBoundary
      ? "finish boundary"
      : "draw boundary";
    if (!runtime.drawingBoundary) {
      syncUrl();
      requestMesh();
    }
  });

  els.clearBoundary.addEventListener("click", () => {
    runtime.state.boundary = null;
    runtime.drawingBoundary = false;
    els.drawToggle.textContent = "draw boundary";
    syncUrl();
    redrawMesh();
    requestMesh();
  });

  els.meshCanvas.addEventListener("click", (ev) => {
    if (!runtime.drawingBoundary) {
      return;
    }
    // invert the fit transform used for the current drawing
    const all = runtime.state.boundary
      ? runtime.state.points.concat(runtime.state.boundary)
      : runtime.state.points;
    if (all.length === 0) {
      return;
    }
    const rect = els.meshCanvas.getBoundingClientRect();
    const cx = ((ev.clientX - rect.left) / rect.width) * els.meshCanvas.width;
    const cy = ((ev.clientY - rect.top) / rect.height) * els.meshCanvas.height;
    const t = computeInverse(all, els.meshCanvas.width, els.meshCanvas.height);
    runtime.state.boundary = (runtime.state.boundary ?? []).concat([
      [t.x(cx), t.y(cy)],
    ]);
    redrawMesh();
  });

  setSlidersFromState();
  syncUrl();
  redrawMesh();
  if (runtime.state.points.length >= 3) {
    requestMesh();
  } else {
    els.status.textContent = "upload points or use the demo cloud";
  }
}

function computeInverse(
  pts: Point[],
  width: number,
  height: number,
): { x: (c: number) => number; y: (c: number) => number } {
  // mirror of the forward fit in meshview.computeTransform
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  for (const [x, y] of pts) {
    minX = Math.min(minX, x);
    minY = Math.min(minY, y);
    maxX = Math.max(maxX, x);
    maxY = Math.max(maxY, y);
  }
  const margin = 10;
  const spanX = maxX - minX || 1;
  const spanY = maxY - minY || 1;
  const scale = Math.min(
    (width - 2 * margin) / spanX,
    (height - 2 * margin) / spanY,
  );
  const offsetX = margin - minX * scale + (width - 2 * margin - spanX * scale) / 2;
  const offsetY =
    height - margin + minY * scale - (height - 2 * margin - spanY * scale) / 2;
  return {
    x: (c) => (c - offsetX) / scale,
    y: (c) => (offsetY - c) / scale,
  };
}

if (typeof document !== "undefined" && document.getElementById("mesh-canvas")) {
  init();
}
