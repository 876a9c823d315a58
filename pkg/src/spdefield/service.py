"""Local HTTP service behind the mesh-builder UI.

Endpoints: POST /api/mesh (build + quality stats), POST /api/assess (binned
covariance-approximation error against the closed-form model), POST
/api/sample (one seeded realization), GET / (static UI). Responses echo the
request body so any screen value can be traced back to its inputs; errors
return 400 with field-level messages for bad input and 422 for numerical
failures. Handlers share nothing except a bounded factorization cache, so
identical requests always produce identical responses.
"""

from __future__ import annotations

import hashlib
import json
import pathlib
import threading
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from matplotlib.path import Path as MplPath
from scipy.spatial import ConvexHull, cKDTree

from . import fem
from .errors import InputError, NumericalError
from .gmrf import CholeskyFactor, as_rng
from .mesh import Mesh, MeshConfig, build_mesh

__all__ = ["assess", "make_server", "run_server"]

STATIC_DIR = pathlib.Path(__file__).parent / "static"
CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}
N_BINS = 20
MAX_SOURCES = 25


class ValidationError(Exception):
    """Per-field request problems, rendered as a 400 with a fields map."""

    def __init__(self, fields):
        self.fields = fields
        super().__init__("; ".join(f"{k}: {v}" for k, v in fields.items()))


class _LruCache:
    """Bounded cache with single-writer insertion."""

    def __init__(self, maxsize=8):
        self.maxsize = maxsize
        self._lock = threading.Lock()
        self._data = OrderedDict()

    def get(self, key):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
            return None

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)


_FACTOR_CACHE = _LruCache(maxsize=8)


def _mesh_hash(mesh_dict):
    canonical = json.dumps(mesh_dict, sort_keys=True).encode()
    return hashlib.sha256(canonical).hexdigest()


def _field_engine(mesh_dict, spatial_range, sigma, alpha):
    """Precision, factor, and marginal variances for the mesh/parameter
    combination, cached by content hash."""
    key = (_mesh_hash(mesh_dict), float(spatial_range), float(sigma), int(alpha))
    hit = _FACTOR_CACHE.get(key)
    if hit is not None:
        return hit
    mesh = Mesh.from_dict(mesh_dict)
    kappa, tau = fem.matern_to_spde(spatial_range, sigma, alpha=alpha)
    Q = fem.spde_precision(mesh, alpha, kappa, tau)
    factor = CholeskyFactor.factorize(Q)
    variances = factor.partial_inverse_diag()
    value = (mesh, Q, factor, variances)
    _FACTOR_CACHE.put(key, value)
    return value


def _select_sources(mesh, limit=MAX_SOURCES):
    """Deterministic spread of interior probe nodes.

    Interior means far from the mesh boundary (outer half of the
    boundary-distance distribution is excluded); spatial spread comes from
    snapping a uniform probe grid to the nearest eligible vertex.
    """
    v = mesh.vertices
    loops = [np.asarray(l, dtype=np.int64) for l in mesh.boundary_loops]
    if loops:
        boundary = np.unique(np.concatenate(loops))
        d_boundary = cKDTree(v[boundary]).query(v)[0]
    else:
        d_boundary = np.ones(len(v))
    eligible = np.nonzero(d_boundary >= 0.5 * d_boundary.max())[0]
    if eligible.size == 0:
        eligible = np.arange(len(v))
    side = max(2, int(np.ceil(np.sqrt(limit))))
    lo = v[eligible].min(axis=0)
    hi = v[eligible].max(axis=0)
    tree = cKDTree(v[eligible])
    chosen = set()
    for px in np.linspace(lo[0], hi[0], side):
        for py in np.linspace(lo[1], hi[1], side):
            chosen.add(int(eligible[tree.query([px, py])[1]]))
            if len(chosen) >= limit:
                break
    return np.asarray(sorted(chosen), dtype=np.int64)


def assess(mesh_dict, spatial_range, sigma, alpha=2):
    """Binned covariance-approximation error plus the marginal-sd map.

    Correlations from exact precision solves at a deterministic set of
    interior source nodes are compared against the closed-form model
    correlation; absolute errors are averaged in 20 distance bins up to
    three times the range.
    """
    mesh, Q, factor, variances = _field_engine(
        mesh_dict, spatial_range, sigma, alpha
    )
    sd = np.sqrt(variances)
    sources = _select_sources(mesh)
    edges = np.linspace(0.0, 3.0 * spatial_range, N_BINS + 1)
    sums = np.zeros(N_BINS)
    counts = np.zeros(N_BINS, dtype=np.int64)
    nu = alpha - 1.0
    for s in sources:
        e = np.zeros(mesh.n_vertices)
        e[s] = 1.0
        cov = factor.solve(e)
        corr = cov / (sd * sd[s])
        d = np.linalg.norm(mesh.vertices - mesh.vertices[s], axis=1)
        mask = (d > 0) & (d <= edges[-1])
        exact = fem.matern_covariance(d[mask], spatial_range, sigma, nu) / sigma**2
        err = np.abs(corr[mask] - exact)
        idx = np.minimum(
            np.digitize(d[mask], edges) - 1, N_BINS - 1
        )
        np.add.at(sums, idx, err)
        np.add.at(counts, idx, 1)
    mean_error = [
        (float(sums[i] / counts[i]) if counts[i] else None) for i in range(N_BINS)
    ]
    centers = 0.5 * (edges[:-1] + edges[1:])
    return {
        "bins": {
            "edges": edges.tolist(),
            "centers": centers.tolist(),
            "mean_abs_error": mean_error,
            "count": counts.tolist(),
        },
        "marginal_sd": sd.tolist(),
        "n_sources": int(sources.size),
    }


# ---------------------------------------------------------------------------
# request handling


def _as_points(value, field, errors, min_rows=3):
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        errors[field] = "must be a list of [x, y] pairs"
        return None
    if arr.ndim != 2 or arr.shape[1] != 2:
        errors[field] = "must be a list of [x, y] pairs"
        return None
    if not np.all(np.isfinite(arr)):
        errors[field] = "contains non-finite coordinates"
        return None
    if len(arr) < min_rows:
        errors[field] = f"needs at least {min_rows} rows"
        return None
    return arr


def _as_number(value, field, errors, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors[field] = "must be a number"
        return None
    value = float(value)
    if not np.isfinite(value):
        errors[field] = "must be finite"
        return None
    if positive and value <= 0:
        errors[field] = "must be positive"
        return None
    return value


def _matern_params(body, errors):
    params = body.get("matern_params")
    if not isinstance(params, dict):
        errors["matern_params"] = "required object with range and sigma"
        return None, None, None
    r = _as_number(params.get("range"), "matern_params.range", errors, positive=True)
    s = _as_number(params.get("sigma"), "matern_params.sigma", errors, positive=True)
    alpha = params.get("alpha", 2)
    if alpha not in (2, 3, 4):
        errors["matern_params.alpha"] = "must be 2, 3, or 4"
        alpha = None
    return r, s, alpha


def _mesh_payload(body, errors):
    mesh_dict = body.get("mesh")
    if not isinstance(mesh_dict, dict):
        errors["mesh"] = "required mesh object"
        return None
    return mesh_dict


def handle_mesh(body):
    errors = {}
    if body.get("points") is None:
        errors["points"] = "required"
        points = None
    else:
        points = _as_points(body["points"], "points", errors)
    boundary = None
    if body.get("boundary") is not None:
        boundary = _as_points(body["boundary"], "boundary", errors)
    config_body = body.get("config")
    if not isinstance(config_body, dict):
        errors["config"] = "required object with max_edge_inner"
        config_body = {}
    max_edge = _as_number(
        config_body.get("max_edge_inner"), "config.max_edge_inner", errors,
        positive=True,
    )
    max_edge_outer = None
    if config_body.get("max_edge_outer") is not None:
        max_edge_outer = _as_number(
            config_body["max_edge_outer"], "config.max_edge_outer", errors,
            positive=True,
        )
    extension = 0.0
    if config_body.get("extension_distance") is not None:
        extension = _as_number(
            config_body["extension_distance"], "config.extension_distance", errors
        )
    min_angle = 21.0
    if config_body.get("min_angle") is not None:
        min_angle = _as_number(config_body["min_angle"], "config.min_angle", errors)
    if errors:
        raise ValidationError(errors)
    try:
        config = MeshConfig(
            max_edge_inner=max_edge,
            max_edge_outer=max_edge_outer,
            extension_distance=extension,
            min_angle=min_angle,
        )
    except InputError as exc:
        raise ValidationError({"config": str(exc)}) from exc
    mesh = build_mesh(points, config, boundary=boundary)

    lengths = mesh.edge_lengths()
    hist, hist_edges = np.histogram(lengths, bins=12)
    if boundary is not None:
        inner_poly = boundary
    else:
        inner_poly = points[ConvexHull(points).vertices]
    inner_mask = MplPath(inner_poly).contains_points(
        mesh.vertices, radius=1e-9
    )
    quality = dict(mesh.stats())
    quality["edge_histogram"] = {
        "edges": hist_edges.tolist(),
        "counts": hist.tolist(),
    }
    quality["vertex_inner"] = [bool(b) for b in inner_mask]
    # per-triangle angles so the page never re-derives geometry
    quality["triangle_min_angle"] = mesh.min_angles_deg().tolist()
    return {"mesh": mesh.to_dict(), "quality": quality}


def handle_assess(body):
    errors = {}
    mesh_dict = _mesh_payload(body, errors)
    r, s, alpha = _matern_params(body, errors)
    if errors:
        raise ValidationError(errors)
    return assess(mesh_dict, r, s, alpha=alpha)


def handle_sample(body):
    errors = {}
    mesh_dict = _mesh_payload(body, errors)
    r, s, alpha = _matern_params(body, errors)
    seed = body.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        errors["seed"] = "required integer"
    if errors:
        raise ValidationError(errors)
    mesh, Q, factor, _ = _field_engine(mesh_dict, r, s, alpha)
    rng = as_rng(seed)
    z = rng.standard_normal((mesh.n_vertices, 1))
    field = factor.sample_whitened(z)[:, 0]
    return {"field": field.tolist()}


ROUTES = {
    "/api/mesh": handle_mesh,
    "/api/assess": handle_assess,
    "/api/sample": handle_sample,
}


class Handler(BaseHTTPRequestHandler):
    server_version = "spdefield"
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):  # quiet by default
        pass

    def _send_json(self, status, payload):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        handler = ROUTES.get(self.path)
        if handler is None:
            self._send_json(404, {"error": "NotFound", "message": self.path})
            return
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode() or "{}")
            if not isinstance(body, dict):
                raise ValueError("body must be a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            self._send_json(
                400,
                {"error": "ValidationError", "fields": {"body": str(exc)}},
            )
            return
        try:
            result = handler(body)
        except ValidationError as exc:
            self._send_json(
                400,
                {
                    "error": "ValidationError",
                    "fields": exc.fields,
                    "request": body,
                },
            )
            return
        except InputError as exc:
            self._send_json(
                400,
                {
                    "error": type(exc).__name__,
                    "message": str(exc),
                    "request": body,
                },
            )
            return
        except NumericalError as exc:
            self._send_json(
                422,
                {
                    "error": type(exc).__name__,
                    "message": str(exc),
                    "request": body,
                },
            )
            return
        result["request"] = body
        self._send_json(200, result)

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path == "/":
            path = "/index.html"
        candidate = (STATIC_DIR / path.lstrip("/")).resolve()
        if not str(candidate).startswith(str(STATIC_DIR.resolve())):
            self._send_json(404, {"error": "NotFound", "message": self.path})
            return
        if not candidate.is_file():
            self._send_json(404, {"error": "NotFound", "message": self.path})
            return
        data = candidate.read_bytes()
        self.send_response(200)
        self.send_header(
            "Content-Type",
            CONTENT_TYPES.get(candidate.suffix, "application/octet-stream"),
        )
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def make_server(host="127.0.0.1", port=0):
    """Bound but not yet serving; port 0 picks a free ephemeral port."""
    return ThreadingHTTPServer((host, port), Handler)


def run_server(host="127.0.0.1", port=8731):
    server = make_server(host, port)
    actual = server.server_address[1]
    print(json.dumps({"serving": f"http://{host}:{actual}"}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
