/**
 * End-to-end drive of the page's data flow against a real server process:
 * load points, build a mesh, tighten the max-edge limit, and check that the
 * refreshed error curve improves; verify stale responses cannot land after
 * newer ones; confirm replaying a request reproduces the response.
 *
 * The server binary defaults to `spdefield` on PATH; override with
 * SPDEFIELD_CMD (split on whitespace) if it lives elsewhere.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

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
} from "../src/api.js";
import { curveFromAssess, dominatedShare, type ErrorCurve } from "../src/curves.js";
import { drawMesh } from "../src/meshview.js";
import { makeRecorder } from "./recorder.js";

let server: ChildProcess;
let base = "";

async function until(cond: () => boolean, ms = 60000): Promise<void> {
  const start = Date.now();
  while (!cond()) {
    if (Date.now() - start > ms) {
      throw new Error("condition not reached in time");
    }
    await new Promise((r) => setTimeout(r, 10));
  }
}

beforeAll(async () => {
  const parts = (process.env.SPDEFIELD_CMD ?? "spdefield").split(/\s+/);
  server = spawn(parts[0], [...parts.slice(1), "serve", "--port", "0"], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  base = await new Promise<string>((resolve, reject) => {
    let out = "";
    const fail = (why: string) => reject(new Error(`${why}\n${out}`));
    const timer = setTimeout(() => fail("server did not announce itself"), 30000);
    server.stdout?.on("data", (chunk: Buffer) => {
      out += chunk.toString();
      for (const line of out.split("\n")) {
        if (line.includes("serving")) {
          clearTimeout(timer);
          resolve(JSON.parse(line).serving as string);
          return;
        }
      }
    });
    server.stderr?.on("data", (chunk: Buffer) => {
      out += chunk.toString();
    });
    server.on("exit", (code) => {
      clearTimeout(timer);
      fail(`server exited with ${code}`);
    });
  });
}, 45000);

afterAll(() => {
  server?.kill("SIGTERM");
});

const cloud: Point[] = [
  [0, 0],
  [6, 0],
  [6, 6],
  [0, 6],
  [3, 3],
];
const square: Point[] = [
  [0, 0],
  [6, 0],
  [6, 6],
  [0, 6],
];

function meshRequest(maxEdge: number): MeshRequest {
  return {
    points: cloud,
    boundary: square,
    config: {
      max_edge_inner: maxEdge,
      extension_distance: 1.5,
      min_angle: 21,
    },
  };
}

describe("mesh building", () => {
  it("meshes four corners into two right triangles", async () => {
    const resp = await buildMesh(base, {
      points: [
        [0, 0],
        [1, 0],
        [1, 1],
        [0, 1],
      ],
      config: { max_edge_inner: 2.0 },
    });
    expect(resp.quality.n_triangles).toBe(2);
    expect(resp.quality.min_angle_deg).toBeCloseTo(45, 6);
    expect(resp.quality.triangle_min_angle).toHaveLength(2);
    expect(resp.quality.vertex_inner).toEqual([true, true, true, true]);
  }, 30000);

  it("reports field-level messages for unusable input", async () => {
    const bad = buildMesh(base, {
      points: [
        [0, 0],
        [1, 0],
      ],
      config: { max_edge_inner: 0 },
    });
    const err = (await bad.then(
      () => null,
      (e) => e,
    )) as ApiError;
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    const lines = err.describe();
    expect(lines.some((l) => l.startsWith("points:"))).toBe(true);
    expect(lines.some((l) => l.startsWith("config.max_edge_inner:"))).toBe(true);
  }, 30000);
});

describe("slider adjustment", () => {
  it("tightening max_edge refreshes the curve and improves most bins", async () => {
    const curves: ErrorCurve[] = [];
    const meshes: MeshResponse[] = [];
    const failures: unknown[] = [];
    const assessChannel = new LatestWinsChannel<AssessRequest, AssessResponse>(
      (req) => assessMesh(base, req),
      (resp) => curves.push(curveFromAssess(resp)),
      (err) => failures.push(err),
    );
    const meshChannel = new LatestWinsChannel<MeshRequest, MeshResponse>(
      (req) => buildMesh(base, req),
      (resp) => {
        meshes.push(resp);
        assessChannel.request({
          mesh: resp.mesh,
          matern_params: { range: 2, sigma: 1 },
        });
      },
      (err) => failures.push(err),
    );

    meshChannel.request(meshRequest(1.2));
    await until(() => curves.length === 1 && !assessChannel.busy, 120000);
    const before = curves[0];

    // the max_edge slider released at a finer limit
    meshChannel.request(meshRequest(0.6));
    await until(() => curves.length === 2 && !assessChannel.busy, 120000);
    const after = curves[1];

    expect(failures).toEqual([]);
    expect(meshes[1].quality.n_triangles).toBeGreaterThan(
      meshes[0].quality.n_triangles,
    );
    expect(after.values).not.toEqual(before.values);

    const share = dominatedShare(after, before);
    expect(share).toBeGreaterThanOrEqual(0.8);
  }, 240000);
});

describe("response ordering", () => {
  it("never lets a stale response overwrite a newer one", async () => {
    const meshResp = await buildMesh(base, meshRequest(1.2));
    const applied: { resp: AssessResponse; sent: AssessRequest }[] = [];
    const dropped: AssessRequest[] = [];
    const failures: unknown[] = [];
    const channel = new LatestWinsChannel<AssessRequest, AssessResponse>(
      (req) => assessMesh(base, req),
      (resp, sent) => applied.push({ resp, sent }),
      (err) => failures.push(err),
      (req) => dropped.push(req),
    );

    const paramsFor = (range: number): AssessRequest => ({
      mesh: meshResp.mesh,
      matern_params: { range, sigma: 1 },
    });

    // second request issued while the first is still in flight
    channel.request(paramsFor(2));
    channel.request(paramsFor(3));
    await until(() => !channel.busy, 120000);

    expect(failures).toEqual([]);
    expect(dropped).toHaveLength(1);
    expect(dropped[0].matern_params.range).toBe(2);
    expect(applied).toHaveLength(1);
    expect(applied[0].sent.matern_params.range).toBe(3);
    // the server echo agrees with what the panel believes it shows
    const echo = applied[0].resp.request as AssessRequest;
    expect(echo.matern_params.range).toBe(3);
  }, 240000);

  it("replaying a request reproduces the response exactly", async () => {
    const meshResp = await buildMesh(base, meshRequest(1.2));
    const req: AssessRequest = {
      mesh: meshResp.mesh,
      matern_params: { range: 2, sigma: 1 },
    };
    const first = await assessMesh(base, req);
    const second = await assessMesh(base, req);
    expect(second.bins).toEqual(first.bins);
    expect(second.marginal_sd).toEqual(first.marginal_sd);
  }, 240000);
});

describe("render cost", () => {
  it("walks a 500+ triangle mesh through the renderer", async () => {
    const resp = await buildMesh(base, {
      points: square,
      config: { max_edge_inner: 0.35 },
    });
    expect(resp.quality.n_triangles).toBeGreaterThanOrEqual(500);
    const rec = makeRecorder();
    const start = performance.now();
    drawMesh(rec.ctx, resp.mesh, resp.quality, { width: 560, height: 460 });
    const elapsed = performance.now() - start;
    expect(
      rec.calls.filter((c) => c.op === "fill").length,
    ).toBe(resp.quality.n_triangles);
    // informational: stub context, so geometry + color cost only
    console.log(
      `drawMesh over ${resp.quality.n_triangles} triangles: ${elapsed.toFixed(1)} ms`,
    );
  }, 120000);
});
