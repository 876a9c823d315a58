/**
 * Typed client for the local field service. All numbers shown in the page
 * come from these responses; the page itself never re-derives them.
 */

export type Point = [number, number];

export interface MeshConfigDto {
  max_edge_inner: number;
  max_edge_outer?: number | null;
  extension_distance?: number;
  min_angle?: number;
}

export interface MaternParams {
  range: number;
  sigma: number;
  alpha?: number;
}

export interface MeshDto {
  vertices: Point[];
  triangles: [number, number, number][];
  boundary_loops: number[][];
}

export interface EdgeHistogram {
  edges: number[];
  counts: number[];
}

export interface MeshQuality {
  n_vertices: number;
  n_triangles: number;
  total_area: number;
  edge_min: number;
  edge_mean: number;
  edge_max: number;
  min_angle_deg: number;
  edge_histogram: EdgeHistogram;
  vertex_inner: boolean[];
  triangle_min_angle: number[];
}

export interface MeshResponse {
  mesh: MeshDto;
  quality: MeshQuality;
  request: unknown;
}

export interface AssessBins {
  edges: number[];
  centers: number[];
  mean_abs_error: (number | null)[];
  count: number[];
}

export interface AssessResponse {
  bins: AssessBins;
  marginal_sd: number[];
  n_sources: number;
  request: unknown;
}

export interface SampleResponse {
  field: number[];
  request: unknown;
}

export interface MeshRequest {
  points: Point[];
  boundary?: Point[];
  config: MeshConfigDto;
}

export interface AssessRequest {
  mesh: MeshDto;
  matern_params: MaternParams;
}

export interface SampleRequest extends AssessRequest {
  seed: number;
}

/** Error payload the service returns with 400/422 statuses. */
export interface ErrorBody {
  error: string;
  message?: string;
  fields?: Record<string, string>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: ErrorBody,
  ) {
    super(body.message ?? body.error);
    this.name = "ApiError";
  }

  /** One line per offending field, or the single server message. */
  describe(): string[] {
    if (this.body.fields) {
      return Object.entries(this.body.fields).map(([k, v]) => `${k}: ${v}`);
    }
    return [this.body.message ?? this.body.error];
  }
}

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

export async function postJson<T>(
  base: string,
  path: string,
  payload: unknown,
  fetchFn: FetchLike = fetch,
): Promise<T> {
  const resp = await fetchFn(base + path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
  const body = await resp.json();
  if (!resp.ok) {
    throw new ApiError(resp.status, body as ErrorBody);
  }
  return body as T;
}

export function buildMesh(
  base: string,
  req: MeshRequest,
  fetchFn: FetchLike = fetch,
): Promise<MeshResponse> {
  return postJson<MeshResponse>(base, "/api/mesh", req, fetchFn);
}

export function assessMesh(
  base: string,
  req: AssessRequest,
  fetchFn: FetchLike = fetch,
): Promise<AssessResponse> {
  return postJson<AssessResponse>(base, "/api/assess", req, fetchFn);
}

export function sampleField(
  base: string,
  req: SampleRequest,
  fetchFn: FetchLike = fetch,
): Promise<SampleResponse> {
  return postJson<SampleResponse>(base, "/api/sample", req, fetchFn);
}

/**
 * Serializes requests for one panel.
 *
 * At most one request is in flight; while it runs, newer requests replace
 * each other so only the newest waits. A response is applied only if no
 * newer request has been issued since, so a stale response can never
 * overwrite the panel after a newer one.
 */
export class LatestWinsChannel<TReq, TResp> {
  private seq = 0;
  private appliedSeq = 0;
  private inFlight = false;
  private queued: { seq: number; payload: TReq } | null = null;

  constructor(
    private readonly send: (payload: TReq) => Promise<TResp>,
    private readonly apply: (resp: TResp, payload: TReq) => void,
    private readonly onError: (err: unknown) => void = () => undefined,
    private readonly onDrop: (payload: TReq) => void = () => undefined,
  ) {}

  request(payload: TReq): void {
    this.seq += 1;
    this.queued = { seq: this.seq, payload };
    void this.pump();
  }

  get busy(): boolean {
    return this.inFlight || this.queued !== null;
  }

  private async pump(): Promise<void> {
    if (this.inFlight || this.queued === null) {
      return;
    }
    const job = this.queued;
    this.queued = null;
    this.inFlight = true;
    try {
      const resp = await this.send(job.payload);
      if (job.seq === this.seq && job.seq > this.appliedSeq) {
        this.appliedSeq = job.seq;
        this.apply(resp, job.payload);
      } else {
        this.onDrop(job.payload);
      }
    } catch (err) {
      // errors for superseded requests are stale too
      if (job.seq === this.seq) {
        this.onError(err);
      }
    } finally {
      this.inFlight = false;
      void this.pump();
    }
  }
}
