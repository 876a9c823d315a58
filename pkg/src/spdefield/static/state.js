/**
 * Session state and its URL encoding.
 *
 * The state holds everything needed to reproduce a session: the uploaded
 * points, the optional boundary polygon, and the slider values. Server
 * responses are not part of it -- the service is stateless, so replaying
 * the encoded requests reproduces them exactly.
 */
/** Bounds mirror what the server accepts; the page clamps before sending. */
export const SLIDER_LIMITS = {
    max_edge_inner: { min: 0.05, max: 5.0, step: 0.05 },
    max_edge_outer: { min: 0.05, max: 10.0, step: 0.05 },
    extension_distance: { min: 0.0, max: 5.0, step: 0.1 },
    min_angle: { min: 10, max: 33, step: 1 },
    range: { min: 0.1, max: 10.0, step: 0.1 },
    sigma: { min: 0.1, max: 5.0, step: 0.1 },
};
export function defaultState() {
    return {
        points: [],
        boundary: null,
        config: {
            max_edge_inner: 0.5,
            max_edge_outer: null,
            extension_distance: 1.0,
            min_angle: 21,
        },
        matern: { range: 2.0, sigma: 1.0 },
    };
}
export function clamp(name, value) {
    const lim = SLIDER_LIMITS[name];
    if (!lim) {
        return 0;
    }
    if (Number.isNaN(value)) {
        return lim.min;
    }
    return Math.min(lim.max, Math.max(lim.min, value));
}
export function clampState(state) {
    return {
        points: state.points,
        boundary: state.boundary,
        config: {
            max_edge_inner: clamp("max_edge_inner", state.config.max_edge_inner),
            max_edge_outer: state.config.max_edge_outer === null
                ? null
                : clamp("max_edge_outer", state.config.max_edge_outer),
            extension_distance: clamp("extension_distance", state.config.extension_distance),
            min_angle: clamp("min_angle", state.config.min_angle),
        },
        matern: {
            range: clamp("range", state.matern.range),
            sigma: clamp("sigma", state.matern.sigma),
        },
    };
}
function toBase64Url(text) {
    return btoa(text).replace(/\+/g, "-").replace(/\//g, "_").replace(/=+$/, "");
}
function fromBase64Url(text) {
    const padded = text.replace(/-/g, "+").replace(/_/g, "/");
    return atob(padded + "=".repeat((4 - (padded.length % 4)) % 4));
}
export function encodeState(state) {
    return toBase64Url(JSON.stringify(state));
}
function isPointList(value) {
    return (Array.isArray(value) &&
        value.every((p) => Array.isArray(p) &&
            p.length === 2 &&
            typeof p[0] === "number" &&
            typeof p[1] === "number"));
}
/** Decode a shared URL fragment; malformed input falls back to defaults. */
export function decodeState(encoded) {
    let raw;
    try {
        raw = JSON.parse(fromBase64Url(encoded));
    }
    catch {
        return defaultState();
    }
    const base = defaultState();
    if (typeof raw !== "object" || raw === null) {
        return base;
    }
    const data = raw;
    if (isPointList(data.points)) {
        base.points = data.points;
    }
    if (isPointList(data.boundary)) {
        base.boundary = data.boundary;
    }
    const config = (data.config ?? {});
    for (const key of [
        "max_edge_inner",
        "extension_distance",
        "min_angle",
    ]) {
        if (typeof config[key] === "number") {
            base.config[key] = config[key];
        }
    }
    if (typeof config.max_edge_outer === "number") {
        base.config.max_edge_outer = config.max_edge_outer;
    }
    const matern = (data.matern ?? {});
    if (typeof matern.range === "number") {
        base.matern.range = matern.range;
    }
    if (typeof matern.sigma === "number") {
        base.matern.sigma = matern.sigma;
    }
    return clampState(base);
}
