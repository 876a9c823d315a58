/**
 * Typed client for the local field service. All numbers shown in the page
 * come from these responses; the page itself never re-derives them.
 */
export class ApiError extends Error {
    constructor(status, body) {
        super(body.message ?? body.error);
        this.status = status;
        this.body = body;
        this.name = "ApiError";
    }
    /** One line per offending field, or the single server message. */
    describe() {
        if (this.body.fields) {
            return Object.entries(this.body.fields).map(([k, v]) => `${k}: ${v}`);
        }
        return [this.body.message ?? this.body.error];
    }
}
export async function postJson(base, path, payload, fetchFn = fetch) {
    const resp = await fetchFn(base + path, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
    });
    const body = await resp.json();
    if (!resp.ok) {
        throw new ApiError(resp.status, body);
    }
    return body;
}
export function buildMesh(base, req, fetchFn = fetch) {
    return postJson(base, "/api/mesh", req, fetchFn);
}
export function assessMesh(base, req, fetchFn = fetch) {
    return postJson(base, "/api/assess", req, fetchFn);
}
export function sampleField(base, req, fetchFn = fetch) {
    return postJson(base, "/api/sample", req, fetchFn);
}
/**
 * Serializes requests for one panel.
 *
 * At most one request is in flight; while it runs, newer requests replace
 * each other so only the newest waits. A response is applied only if no
 * newer request has been issued since, so a stale response can never
 * overwrite the panel after a newer one.
 */
export class LatestWinsChannel {
    constructor(send, apply, onError = () => undefined, onDrop = () => undefined) {
        this.send = send;
        this.apply = apply;
        this.onError = onError;
        this.onDrop = onDrop;
        this.seq = 0;
        this.appliedSeq = 0;
        this.inFlight = false;
        this.queued = null;
    }
    request(payload) {
        this.seq += 1;
        this.queued = { seq: this.seq, payload };
        void this.pump();
    }
    get busy() {
        return this.inFlight || this.queued !== null;
    }
    async pump() {
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
            }
            else {
                this.onDrop(job.payload);
            }
        }
        catch (err) {
            // errors for superseded requests are stale too
            if (job.seq === this.seq) {
                this.onError(err);
            }
        }
        finally {
            this.inFlight = false;
            void this.pump();
        }
    }
}
