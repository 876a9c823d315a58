import { describe, expect, it } from "vitest";

import type { MeshDto, MeshQuality } from "../src/api.js";
import {
  angleHeatColor,
  computeTransform,
  drawMesh,
  drawPoints,
  toCanvas,
  valueColor,
} from "../src/meshview.js";
import { makeRecorder } from "./recorder.js";

const squareMesh: MeshDto = {
  vertices: [
    [0, 0],
    [1, 0],
    [1, 1],
    [0, 1],
  ],
  triangles: [
    [0, 1, 2],
    [0, 2, 3],
  ],
  boundary_loops: [[0, 1, 2, 3]],
};

function squareQuality(vertexInner: boolean[]): MeshQuality {
  return {
    n_vertices: 4,
    n_triangles: 2,
    total_area: 1,
    edge_min: 1,
    edge_mean: 1.08,
    edge_max: Math.SQRT2,
    min_angle_deg: 45,
    edge_histogram: { edges: [1, Math.SQRT2], counts: [5] },
    vertex_inner: vertexInner,
    triangle_min_angle: [45, 45],
  };
}

describe("computeTransform", () => {
  it("fits a unit square with margins", () => {
    const t = computeTransform(squareMesh.vertices, 120, 120);
    expect(t.scale).toBe(100);
    expect(toCanvas([0, 0], t)).toEqual([10, 110]);
    expect(toCanvas([1, 1], t)).toEqual([110, 10]);
  });

  it("preserves aspect ratio and centers the short side", () => {
    const t = computeTransform(
      [
        [0, 0],
        [2, 1],
      ],
      120,
      120,
    );
    expect(t.scale).toBe(50);
    // vertical slack split evenly
    expect(toCanvas([0, 0], t)).toEqual([10, 85]);
    expect(toCanvas([2, 1], t)).toEqual([110, 35]);
  });

  it("tolerates a single point and no points", () => {
    const t = computeTransform([[3, 3]], 100, 100);
    expect(Number.isFinite(t.scale)).toBe(true);
    expect(computeTransform([], 100, 100)).toEqual({
      scale: 1,
      offsetX: 0,
      offsetY: 0,
    });
  });
});

describe("color ramps", () => {
  it("runs red to green over the angle range", () => {
    expect(angleHeatColor(0)).toBe("hsl(0, 75%, 55%)");
    expect(angleHeatColor(30)).toBe("hsl(60, 75%, 55%)");
    expect(angleHeatColor(60)).toBe("hsl(120, 75%, 55%)");
    expect(angleHeatColor(90)).toBe(angleHeatColor(60));
  });

  it("maps node values between its endpoints", () => {
    expect(valueColor(0, 0, 1)).toBe("hsl(240, 70%, 35%)");
    expect(valueColor(1, 0, 1)).toBe("hsl(50, 70%, 60%)");
    expect(valueColor(5, 5, 5)).toBe(valueColor(0, 0, 1));
  });
});

describe("drawMesh", () => {
  it("fills and strokes every triangle once", () => {
    const rec = makeRecorder();
    drawMesh(rec.ctx, squareMesh, squareQuality([true, true, true, true]), {
      width: 120,
      height: 120,
    });
    expect(rec.calls.filter((c) => c.op === "clearRect")).toHaveLength(1);
    expect(rec.calls.filter((c) => c.op === "fill")).toHaveLength(2);
    expect(rec.calls.filter((c) => c.op === "stroke")).toHaveLength(2);
    expect(rec.sets("fillStyle")).toEqual([
      angleHeatColor(45),
      angleHeatColor(45),
    ]);
    expect(rec.sets("globalAlpha")).toEqual([1, 1, 1]);
  });

  it("fades triangles that touch the extension zone", () => {
    const rec = makeRecorder();
    drawMesh(rec.ctx, squareMesh, squareQuality([true, true, true, false]), {
      width: 120,
      height: 120,
    });
    // second triangle uses vertex 3, which sits outside the inner zone
    expect(rec.sets("globalAlpha")).toEqual([1, 0.35, 1]);
  });

  it("fills from node values when given them", () => {
    const rec = makeRecorder();
    drawMesh(rec.ctx, squareMesh, squareQuality([true, true, true, true]), {
      width: 120,
      height: 120,
      nodeValues: [0, 0, 0, 3],
    });
    expect(rec.sets("fillStyle")).toEqual([
      valueColor(0, 0, 3),
      valueColor(1, 0, 3),
    ]);
  });

  it("marks vertices on request", () => {
    const rec = makeRecorder();
    drawMesh(rec.ctx, squareMesh, squareQuality([true, true, true, true]), {
      width: 120,
      height: 120,
      showVertices: true,
    });
    expect(rec.calls.filter((c) => c.op === "arc")).toHaveLength(4);
    expect(rec.calls.filter((c) => c.op === "fill")).toHaveLength(6);
  });
});

describe("drawPoints", () => {
  it("draws the cloud and the boundary polygon", () => {
    const rec = makeRecorder();
    drawPoints(
      rec.ctx,
      [
        [0.5, 0.5],
        [1.5, 0.5],
      ],
      [
        [0, 0],
        [2, 0],
        [2, 1],
        [0, 1],
      ],
      200,
      200,
    );
    expect(rec.calls.filter((c) => c.op === "arc")).toHaveLength(2);
    expect(rec.calls.filter((c) => c.op === "stroke")).toHaveLength(1);
  });

  it("only clears when there is nothing to draw", () => {
    const rec = makeRecorder();
    drawPoints(rec.ctx, [], null, 200, 200);
    expect(rec.calls).toEqual([{ op: "clearRect", args: [0, 0, 200, 200] }]);
  });
});
