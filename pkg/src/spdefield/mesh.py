"""Triangulations for SPDE fields.

Builds two-zone refined Delaunay meshes (a data zone with a tight edge-length
budget plus an optional coarser extension ring that pushes the boundary away
from the data), evaluates barycentric projection matrices, and integrates hat
functions over polygon regions for areal observation models.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from matplotlib.path import Path
from scipy.spatial import ConvexHull, Delaunay, QhullError, cKDTree

from .errors import CollinearInput, DegeneratePolygon, InputError

__all__ = [
    "Mesh",
    "MeshConfig",
    "build_mesh",
    "projection_matrix",
    "region_average_matrix",
    "read_mesh",
    "write_mesh",
]


# ---------------------------------------------------------------------------
# geometry helpers


def _polygon_area(poly):
    """Signed area (positive for counter-clockwise orientation)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_properly_intersect(p1, p2, q1, q2):
    """True if segments p1p2 and q1q2 cross, touch, or overlap."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        scale = max(
            abs(b[0] - a[0]), abs(b[1] - a[1]), abs(c[0] - a[0]), abs(c[1] - a[1]), 1.0
        )
        if abs(v) <= 1e-14 * scale * scale:
            return 0
        return 1 if v > 0 else -1

    def on_segment(a, b, c):
        return (
            min(a[0], b[0]) - 1e-14 <= c[0] <= max(a[0], b[0]) + 1e-14
            and min(a[1], b[1]) - 1e-14 <= c[1] <= max(a[1], b[1]) + 1e-14
        )

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_segment(p1, p2, q1):
        return True
    if o2 == 0 and on_segment(p1, p2, q2):
        return True
    if o3 == 0 and on_segment(q1, q2, p1):
        return True
    if o4 == 0 and on_segment(q1, q2, p2):
        return True
    return False


def validate_polygon(poly):
    """Check that a polygon ring is simple with non-trivial area.

    Accepts an (s, 2) array, with or without a repeated closing vertex;
    returns the ring oriented counter-clockwise.
    """
    poly = np.asarray(poly, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise DegeneratePolygon("polygon needs at least 3 two-dimensional vertices")
    if not np.all(np.isfinite(poly)):
        raise DegeneratePolygon("polygon has non-finite coordinates")
    if np.allclose(poly[0], poly[-1]):
        poly = poly[:-1]
    keep = [0]
    for i in range(1, len(poly)):
        if not np.allclose(poly[i], poly[keep[-1]]):
            keep.append(i)
    poly = poly[keep]
    s = len(poly)
    if s < 3:
        raise DegeneratePolygon("polygon needs at least 3 distinct vertices")
    scale = float(np.ptp(poly, axis=0).max())
    if scale == 0.0:
        raise DegeneratePolygon("polygon vertices coincide")
    area = _polygon_area(poly)
    if abs(area) < 1e-12 * scale * scale:
        raise DegeneratePolygon("polygon area is numerically zero")
    for i in range(s):
        a1, a2 = poly[i], poly[(i + 1) % s]
        for j in range(i + 1, s):
            if (j + 1) % s == i or (i + 1) % s == j:
                continue
            b1, b2 = poly[j], poly[(j + 1) % s]
            if _segments_properly_intersect(a1, a2, b1, b2):
                raise DegeneratePolygon(f"polygon edges {i} and {j} intersect")
    if area < 0:
        poly = poly[::-1].copy()
    return poly


def _path_of(poly):
    return Path(np.vstack([poly, poly[:1]]), closed=True)


def _subdivide_ring(poly, max_len):
    """Insert evenly spaced points so no ring edge exceeds max_len."""
    out = []
    s = len(poly)
    for i in range(s):
        a, b = poly[i], poly[(i + 1) % s]
        out.append(a)
        length = float(np.hypot(*(b - a)))
        pieces = int(np.ceil(length / max_len))
        for t in range(1, pieces):
            out.append(a + (b - a) * (t / pieces))
    return np.asarray(out)


def _offset_convex_ring(points, distance, arc_step_deg=22.5):
    """Convex ring at a fixed offset outward from the hull of ``points``.

    Straight hull edges translate along their outward normals; corners are
    rounded with short arcs, so the ring is the hull inflated by ``distance``
    and stays convex.
    """
    hull = ConvexHull(points)
    verts = points[hull.vertices]
    s = len(verts)
    out = []
    for i in range(s):
        prev_v, v, next_v = verts[i - 1], verts[i], verts[(i + 1) % s]
        e_in = v - prev_v
        e_out = next_v - v
        n_in = np.array([e_in[1], -e_in[0]]) / np.hypot(*e_in)
        n_out = np.array([e_out[1], -e_out[0]]) / np.hypot(*e_out)
        a_in = np.arctan2(n_in[1], n_in[0])
        a_out = np.arctan2(n_out[1], n_out[0])
        sweep = (a_out - a_in) % (2.0 * np.pi)
        steps = max(1, int(np.ceil(sweep / np.radians(arc_step_deg))))
        for t in range(steps + 1):
            ang = a_in + sweep * t / steps
            out.append(v + distance * np.array([np.cos(ang), np.sin(ang)]))
    ring = np.asarray(out)
    return ring[ConvexHull(ring).vertices]


def _dedupe_points(points, tol):
    """Drop near-duplicate rows, keeping first occurrences in order.

    Returns the deduplicated array and the indices of the surviving rows.
    """
    kept = []
    kept_idx = []
    cell = {}
    inv_tol = 1.0 / tol
    for i, p in enumerate(points):
        key = (int(np.floor(p[0] * inv_tol)), int(np.floor(p[1] * inv_tol)))
        dup = False
        for dx in (-1, 0, 1):
            if dup:
                break
            for dy in (-1, 0, 1):
                for q in cell.get((key[0] + dx, key[1] + dy), ()):
                    if np.hypot(p[0] - q[0], p[1] - q[1]) < tol:
                        dup = True
                        break
                if dup:
                    break
        if not dup:
            cell.setdefault(key, []).append(p)
            kept.append(p)
            kept_idx.append(i)
    return np.asarray(kept), np.asarray(kept_idx, dtype=np.int64)


# ---------------------------------------------------------------------------
# mesh containers


@dataclass
class MeshConfig:
    """Refinement budget for :func:`build_mesh`.

    Parameters
    ----------
    max_edge_inner : float
        Edge-length cap inside the data region (hull of the input points or
        the explicit boundary polygon).
    max_edge_outer : float, optional
        Edge cap in the extension ring; twice the inner cap if omitted.
    extension_distance : float
        Width of a coarse ring pushed out beyond the data region, which
        blunts the boundary effect of the SPDE discretisation. Zero disables
        the ring; for a Matérn model a ring of about one spatial range is a
        sensible choice (see :meth:`for_range`).
    min_angle : float
        Triangle quality floor in degrees. Values above 33 are rejected
        because circumcenter refinement is not guaranteed to terminate there.
    """

    max_edge_inner: float
    max_edge_outer: float | None = None
    extension_distance: float = 0.0
    min_angle: float = 21.0
    max_rounds: int = 100

    def __post_init__(self):
        if self.max_edge_inner <= 0:
            raise InputError("max_edge_inner must be positive")
        if self.max_edge_outer is None:
            self.max_edge_outer = 2.0 * self.max_edge_inner
        if self.max_edge_outer <= 0:
            raise InputError("max_edge_outer must be positive")
        if self.extension_distance < 0:
            raise InputError("extension_distance must be non-negative")
        if not 0 < self.min_angle <= 33.0:
            raise InputError("min_angle must be in (0, 33] degrees")

    @classmethod
    def for_range(cls, spatial_range, **kwargs):
        """Preset tied to a Matérn range: edges of range/5, ring of one range."""
        return cls(
            max_edge_inner=spatial_range / 5.0,
            extension_distance=spatial_range,
            **kwargs,
        )


@dataclass
class Mesh:
    """Conforming triangulation with counter-clockwise triangles.

    ``boundary_loops`` lists the closed vertex chains along the mesh
    boundary (edges that belong to exactly one triangle).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loops: list = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise InputError("vertices must have shape (n, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise InputError("triangles must have shape (m, 3)")
        if not np.all(np.isfinite(self.vertices)):
            raise InputError("vertex coordinates must be finite")
        n = len(self.vertices)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= n
        ):
            raise InputError("triangle indices out of range")
        self._orient_ccw()
        if np.any(self.signed_areas() <= 0):
            raise InputError("mesh contains a degenerate (zero-area) triangle")
        used = np.zeros(n, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise InputError("mesh contains vertices not used by any triangle")
        counts = self._edge_counts()
        if counts and max(counts.values()) > 2:
            raise InputError("an edge is shared by more than two triangles")
        if not self.boundary_loops:
            self.boundary_loops = self._trace_boundary(counts)
        else:
            self.boundary_loops = [
                np.asarray(l, dtype=np.int32) for l in self.boundary_loops
            ]

    def _orient_ccw(self):
        v = self.vertices
        t = self.triangles
        cross = (v[t[:, 1], 0] - v[t[:, 0], 0]) * (v[t[:, 2], 1] - v[t[:, 0], 1]) - (
            v[t[:, 1], 1] - v[t[:, 0], 1]
        ) * (v[t[:, 2], 0] - v[t[:, 0], 0])
        flip = cross < 0
        if flip.any():
            t[flip] = t[flip][:, [0, 2, 1]]

    def _edge_counts(self):
        counts = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(a), int(b)) if a < b else (int(b), int(a))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def _trace_boundary(self, counts=None):
        counts = counts or self._edge_counts()
        boundary = [e for e, c in counts.items() if c == 1]
        nxt = {}
        for a, b in boundary:
            nxt.setdefault(a, []).append(b)
            nxt.setdefault(b, []).append(a)
        loops = []
        seen = set()
        for a, b in boundary:
            if (a, b) in seen:
                continue
            loop = [a, b]
            seen.add((a, b))
            while True:
                cur, prev = loop[-1], loop[-2]
                cands = [x for x in nxt[cur] if x != prev]
                if not cands:
                    break
                step = cands[0]
                edge = (min(cur, step), max(cur, step))
                if edge in seen:
                    break
                seen.add(edge)
                if step == loop[0]:
                    break
                loop.append(step)
            loops.append(np.asarray(loop, dtype=np.int32))
        return loops

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        v, t = self.vertices, self.triangles
        return 0.5 * (
            (v[t[:, 1], 0] - v[t[:, 0], 0]) * (v[t[:, 2], 1] - v[t[:, 0], 1])
            - (v[t[:, 1], 1] - v[t[:, 0], 1]) * (v[t[:, 2], 0] - v[t[:, 0], 0])
        )

    def edges(self):
        """Unique undirected edges, shape (E, 2), lexicographically sorted."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]).astype(np.int64)
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self):
        e = self.edges()
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])

    def min_angles_deg(self):
        """Smallest interior angle of each triangle, degrees."""
        v, t = self.vertices, self.triangles
        p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        a = np.linalg.norm(p1 - p2, axis=1)
        b = np.linalg.norm(p0 - p2, axis=1)
        c = np.linalg.norm(p0 - p1, axis=1)
        angles = []
        for opp, s1, s2 in ((a, b, c), (b, a, c), (c, a, b)):
            cosv = np.clip((s1**2 + s2**2 - opp**2) / (2 * s1 * s2), -1.0, 1.0)
            angles.append(np.degrees(np.arccos(cosv)))
        return np.min(angles, axis=0)

    def stats(self):
        lengths = self.edge_lengths()
        return {
            "n_vertices": int(self.n_vertices),
            "n_triangles": int(self.n_triangles),
            "total_area": float(self.signed_areas().sum()),
            "edge_min": float(lengths.min()),
            "edge_mean": float(lengths.mean()),
            "edge_max": float(lengths.max()),
            "min_angle_deg": float(self.min_angles_deg().min()),
            "boundary_loops": len(self.boundary_loops),
        }

    def to_dict(self):
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_loops": [l.tolist() for l in self.boundary_loops],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            vertices = np.asarray(data["vertices"], dtype=np.float64)
            triangles = np.asarray(data["triangles"], dtype=np.int64)
            loops = data.get("boundary_loops", [])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed mesh payload: {exc}") from exc
        return cls(vertices, triangles, [np.asarray(l) for l in loops])


def write_mesh(mesh, path):
    with open(path, "w") as fh:
        json.dump(mesh.to_dict(), fh)
        fh.write("\n")


def read_mesh(path):
    with open(path) as fh:
        return Mesh.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# refinement


def _circumcenters(v, t):
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    d = 2.0 * (
        p0[:, 0] * (p1[:, 1] - p2[:, 1])
        + p1[:, 0] * (p2[:, 1] - p0[:, 1])
        + p2[:, 0] * (p0[:, 1] - p1[:, 1])
    )
    s0 = (p0**2).sum(axis=1)
    s1 = (p1**2).sum(axis=1)
    s2 = (p2**2).sum(axis=1)
    ux = (
        s0 * (p1[:, 1] - p2[:, 1])
        + s1 * (p2[:, 1] - p0[:, 1])
        + s2 * (p0[:, 1] - p1[:, 1])
    ) / d
    uy = (
        s0 * (p2[:, 0] - p1[:, 0])
        + s1 * (p0[:, 0] - p2[:, 0])
        + s2 * (p1[:, 0] - p0[:, 0])
    ) / d
    cc = np.column_stack([ux, uy])
    radius = np.linalg.norm(cc - p0, axis=1)
    return cc, radius


class _Segments:
    """Constrained chain segments, stored by coordinates.

    A segment is encroached when a vertex other than its endpoints lies
    strictly inside its diametral circle. Encroached segments split at their
    midpoint, which keeps every segment a Delaunay (Gabriel) edge at
    convergence, so the final triangulation conforms to the chain. Chain
    points themselves never trigger splits (that would ping-pong at sharp
    chain corners), and segments shorter than ``floor`` are left alone.
    """

    def __init__(self, ring_points, floor):
        self.segs = [
            (ring_points[i].copy(), ring_points[(i + 1) % len(ring_points)].copy())
            for i in range(len(ring_points))
        ]
        self.floor = floor

    def split_encroached(self, all_points, is_chain):
        """Split every segment encroached by a free vertex; return midpoints."""
        mids = []
        new_segs = []
        free = ~is_chain
        for pa, pb in self.segs:
            length = np.hypot(*(pb - pa))
            if length < self.floor:
                new_segs.append((pa, pb))
                continue
            mid = 0.5 * (pa + pb)
            rad = 0.5 * length
            d = np.hypot(all_points[:, 0] - mid[0], all_points[:, 1] - mid[1])
            if np.any(free & (d < rad * (1.0 - 1e-12))):
                mids.append(mid)
                new_segs.append((pa, mid))
                new_segs.append((mid, pb))
            else:
                new_segs.append((pa, pb))
        self.segs = new_segs
        return mids

    def probe_encroach(self, p):
        """Index of a splittable segment whose diametral circle contains p."""
        for si, (pa, pb) in enumerate(self.segs):
            length = np.hypot(*(pb - pa))
            if length < self.floor:
                continue
            mid = 0.5 * (pa + pb)
            if np.hypot(p[0] - mid[0], p[1] - mid[1]) < 0.5 * length * (1.0 - 1e-12):
                return si
        return None

    def probe_nearest(self, p):
        """Index of the splittable segment whose midpoint is nearest to p."""
        best, best_d = None, np.inf
        for si, (pa, pb) in enumerate(self.segs):
            if np.hypot(*(pb - pa)) < self.floor:
                continue
            mid = 0.5 * (pa + pb)
            d = np.hypot(p[0] - mid[0], p[1] - mid[1])
            if d < best_d:
                best, best_d = si, d
        return best

    def commit(self, si):
        """Split segment si at its midpoint and return the midpoint."""
        pa, pb = self.segs[si]
        mid = 0.5 * (pa + pb)
        self.segs[si] = (pa, mid)
        self.segs.insert(si + 1, (mid, pb))
        return mid


def build_mesh(points, config, boundary=None):
    """Refined two-zone triangulation around scattered locations.

    Parameters
    ----------
    points : array_like, shape (k, 2)
        Locations that must appear as mesh vertices.
    config : MeshConfig
    boundary : array_like, optional
        Simple polygon enclosing all points. Without it the data region is
        the convex hull of the points.

    Returns
    -------
    Mesh
        Triangulation whose data-zone edges respect ``max_edge_inner``,
        whose ring edges respect ``max_edge_outer``, and whose triangles
        meet the ``min_angle`` floor (short of input corners sharper than
        the floor, which no refinement can fix).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        points = points.reshape(0, 2)
    if points.ndim != 2 or points.shape[1] != 2:
        raise InputError("points must have shape (k, 2)")
    if not np.all(np.isfinite(points)):
        raise InputError("points contain non-finite coordinates")
    if len(points) < 3 and boundary is None:
        raise CollinearInput("need at least 3 points to span a region")
    scale = float(np.ptp(points, axis=0).max()) if len(points) else 1.0

    if boundary is not None:
        inner_poly = validate_polygon(boundary)
        scale = max(scale, float(np.ptp(inner_poly, axis=0).max()))
        if len(points):
            inside = _path_of(inner_poly).contains_points(
                points, radius=1e-9 * max(scale, 1.0)
            )
            if not inside.all():
                raise InputError(
                    f"{int((~inside).sum())} locations fall outside the boundary polygon"
                )
        hull_seed = np.vstack([points, inner_poly]) if len(points) else inner_poly
    else:
        try:
            hull = ConvexHull(points)
        except QhullError as exc:
            raise CollinearInput("input locations are collinear or coincident") from exc
        inner_poly = points[hull.vertices].astype(np.float64)
        hull_seed = points

    tol = 1e-9 * max(scale, 1.0)

    ring_inner = _subdivide_ring(inner_poly, config.max_edge_inner)
    if config.extension_distance > 0:
        domain_poly = _offset_convex_ring(hull_seed, config.extension_distance)
        ring_domain = _subdivide_ring(domain_poly, config.max_edge_outer)
    else:
        domain_poly = inner_poly
        ring_domain = None

    seed_list = [points] if len(points) else []
    seed_flags = [np.zeros(len(points), dtype=bool)] if len(points) else []
    seed_list.append(ring_inner)
    seed_flags.append(np.ones(len(ring_inner), dtype=bool))
    if ring_domain is not None:
        seed_list.append(ring_domain)
        seed_flags.append(np.ones(len(ring_domain), dtype=bool))
    pts, kept_idx = _dedupe_points(np.vstack(seed_list), tol)
    is_chain = np.concatenate(seed_flags)[kept_idx]

    # Constrained chains keep the triangulation conforming: the data-region
    # ring always, plus the domain boundary when an extension ring exists.
    chains = [_Segments(ring_inner, 0.02 * config.max_edge_inner)]
    if ring_domain is not None:
        chains.append(_Segments(ring_domain, 0.02 * config.max_edge_outer))
    domain_chain = chains[-1]

    inner_path = _path_of(inner_poly)
    domain_path = _path_of(domain_poly)

    def _kept_simplices(tri_obj, v):
        """Simplices inside the domain, excluding zero-area slivers."""
        simp = tri_obj.simplices
        p0, p1, p2 = v[simp[:, 0]], v[simp[:, 1]], v[simp[:, 2]]
        area2 = np.abs(
            (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
            - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
        )
        lmax2 = np.maximum(
            ((p1 - p0) ** 2).sum(axis=1),
            np.maximum(((p2 - p1) ** 2).sum(axis=1), ((p0 - p2) ** 2).sum(axis=1)),
        )
        solid = area2 > 1e-12 * lmax2
        centroids = v[simp].mean(axis=1)
        inside = domain_path.contains_points(centroids, radius=tol)
        return simp[solid & inside]

    min_sep = 1e-7 * max(scale, 1.0)
    tri = None
    for _ in range(config.max_rounds):
        tri = Delaunay(pts)
        v = pts
        keep = _kept_simplices(tri, v)
        if len(keep) == 0:
            raise InputError("refinement emptied the domain; check the polygon")

        kd = cKDTree(pts)
        mids = []
        for chain in chains:
            for mid in chain.split_encroached(pts, is_chain):
                if kd.query(mid)[0] > min_sep:
                    mids.append(mid)
        if mids:
            pts = np.vstack([pts, np.asarray(mids)])
            is_chain = np.concatenate([is_chain, np.ones(len(mids), dtype=bool)])
            continue

        inner_zone = inner_path.contains_points(v[keep].mean(axis=1), radius=tol)
        limits = np.where(inner_zone, config.max_edge_inner, config.max_edge_outer)

        p0, p1, p2 = v[keep[:, 0]], v[keep[:, 1]], v[keep[:, 2]]
        e01 = np.linalg.norm(p0 - p1, axis=1)
        e12 = np.linalg.norm(p1 - p2, axis=1)
        e20 = np.linalg.norm(p2 - p0, axis=1)
        longest = np.maximum(np.maximum(e01, e12), e20)
        too_long = longest > limits * (1.0 + 1e-9)

        cosmax = np.full(len(keep), -1.0)
        for opp, s1, s2 in ((e12, e20, e01), (e20, e12, e01), (e01, e12, e20)):
            c = (s1**2 + s2**2 - opp**2) / (2 * s1 * s2)
            cosmax = np.maximum(cosmax, np.clip(c, -1.0, 1.0))
        min_angle = np.degrees(np.arccos(cosmax))
        too_sharp = min_angle < config.min_angle - 1e-9

        bad = np.flatnonzero(too_long | too_sharp)
        if len(bad) == 0:
            break

        with np.errstate(divide="ignore", invalid="ignore"):
            cc, radius = _circumcenters(v, keep[bad])
        order = np.argsort(-radius, kind="stable")
        accepted = []
        acc_radius = []
        acc_chain = []
        for oi in order:
            cand = cc[oi]
            rad = radius[oi]
            limit_here = limits[bad[oi]]
            # Radius floor: triangles tinier than this are corner artifacts
            # that further insertion cannot improve.
            if not np.isfinite(rad) or rad < 0.05 * limit_here:
                continue
            chained = False
            if not np.all(np.isfinite(cand)) or not domain_path.contains_point(
                cand, radius=tol
            ):
                si = domain_chain.probe_nearest(cand)
                if si is None:
                    continue
                cand = domain_chain.commit(si)
                rad = 0.25 * limit_here
                chained = True
            else:
                for chain in chains:
                    si = chain.probe_encroach(cand)
                    if si is not None:
                        cand = chain.commit(si)
                        rad = 0.25 * limit_here
                        chained = True
                        break
            if kd.query(cand)[0] < min_sep:
                continue
            sep = 0.35 * rad
            ok = chained  # committed chain splits must be honored
            if not ok:
                ok = True
                for q, qs in zip(accepted, acc_radius):
                    if np.hypot(cand[0] - q[0], cand[1] - q[1]) < max(sep, qs):
                        ok = False
                        break
            if ok:
                accepted.append(cand)
                acc_radius.append(sep)
                acc_chain.append(chained)
        if not accepted:
            warnings.warn("mesh refinement stalled before meeting its targets")
            break
        pts = np.vstack([pts, np.asarray(accepted)])
        is_chain = np.concatenate([is_chain, np.asarray(acc_chain, dtype=bool)])
    else:
        warnings.warn("mesh refinement hit the round budget before converging")
        tri = Delaunay(pts)

    keep = _kept_simplices(tri, pts)
    used = np.unique(keep)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(pts[used], remap[keep])

# ---------------------------------------------------------------------------
# projection and areal integration


def _barycentric(vertices, triangle, points):
    p0, p1, p2 = vertices[triangle[0]], vertices[triangle[1]], vertices[triangle[2]]
    d = (p1[1] - p2[1]) * (p0[0] - p2[0]) + (p2[0] - p1[0]) * (p0[1] - p2[1])
    w0 = (
        (p1[1] - p2[1]) * (points[:, 0] - p2[0])
        + (p2[0] - p1[0]) * (points[:, 1] - p2[1])
    ) / d
    w1 = (
        (p2[1] - p0[1]) * (points[:, 0] - p2[0])
        + (p0[0] - p2[0]) * (points[:, 1] - p2[1])
    ) / d
    return np.column_stack([w0, w1, 1.0 - w0 - w1])


def projection_matrix(mesh, points):
    """Sparse barycentric interpolation from mesh nodes to point locations.

    Each row holds the barycentric weights of one query point in its
    containing triangle, so rows sum to one for interior points. Points
    outside the mesh get an all-zero row; the boolean mask of interior
    points is returned alongside. A point on a shared edge resolves to the
    lowest containing triangle index, so rows are reproducible.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != 2:
        raise InputError("points must have shape (k, 2)")
    n_pts = len(points)
    v, t = mesh.vertices, mesh.triangles
    tol = 1e-10 * max(float(np.ptp(v, axis=0).max()), 1.0)

    # Uniform-grid buckets over triangle bounding boxes for point location.
    lo = v.min(axis=0)
    span = np.maximum(v.max(axis=0) - lo, 1e-12)
    ncell = max(4, int(np.sqrt(max(len(t), 1))))
    cell = span / ncell
    tv = v[t]
    tmin = np.clip(((tv.min(axis=1) - lo) / cell).astype(int), 0, ncell - 1)
    tmax = np.clip(((tv.max(axis=1) - lo) / cell).astype(int), 0, ncell - 1)
    buckets = {}
    for ti in range(len(t)):
        for cx in range(tmin[ti, 0], tmax[ti, 0] + 1):
            for cy in range(tmin[ti, 1], tmax[ti, 1] + 1):
                buckets.setdefault((cx, cy), []).append(ti)

    rows, cols, vals = [], [], []
    inside = np.zeros(n_pts, dtype=bool)
    cells = np.clip(np.floor((points - lo) / cell).astype(int), 0, ncell - 1)
    for pi in range(n_pts):
        best = None
        for ti in buckets.get((cells[pi, 0], cells[pi, 1]), ()):
            w = _barycentric(v, t[ti], points[pi : pi + 1])[0]
            if w.min() >= -tol:
                best = (ti, w)
                break
        if best is None:
            continue
        ti, w = best
        w = np.clip(w, 0.0, None)
        w = w / w.sum()
        inside[pi] = True
        rows.extend([pi] * 3)
        cols.extend(int(c) for c in t[ti])
        vals.extend(float(x) for x in w)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n_pts, mesh.n_vertices))
    A.sum_duplicates()
    A.sort_indices()
    return A, inside


def _clip_convex(subject, clipper):
    """Sutherland-Hodgman clip of polygon ``subject`` by convex CCW ``clipper``."""
    output = [tuple(p) for p in subject]
    s = len(clipper)
    for i in range(s):
        a, b = clipper[i], clipper[(i + 1) % s]
        ex, ey = b[0] - a[0], b[1] - a[1]
        if not output:
            return []
        inp = output
        output = []
        prev = inp[-1]
        prev_in = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0]) >= -1e-14
        for cur in inp:
            cur_in = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0]) >= -1e-14
            if cur_in != prev_in:
                den = ex * (cur[1] - prev[1]) - ey * (cur[0] - prev[0])
                if abs(den) > 1e-300:
                    s_t = (ex * (a[1] - prev[1]) - ey * (a[0] - prev[0])) / den
                    output.append(
                        (
                            prev[0] + s_t * (cur[0] - prev[0]),
                            prev[1] + s_t * (cur[1] - prev[1]),
                        )
                    )
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return output


def _ear_clip(poly):
    """Triangulate a simple CCW polygon into index triples by ear clipping."""
    n = len(poly)
    idx = list(range(n))
    tris = []
    guard = 0
    while len(idx) > 3 and guard < 10 * n * n:
        guard += 1
        n_cur = len(idx)
        found = False
        for k in range(n_cur):
            i0, i1, i2 = idx[(k - 1) % n_cur], idx[k], idx[(k + 1) % n_cur]
            a, b, c = poly[i0], poly[i1], poly[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 1e-14 * max(float(np.abs([a, b, c]).max()), 1.0) ** 2:
                continue
            ear = np.array([a, b, c])
            others = np.array([poly[j] for j in idx if j not in (i0, i1, i2)])
            if len(others) and _path_of(ear).contains_points(others, radius=-1e-12).any():
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            found = True
            break
        if not found:
            raise DegeneratePolygon("ear clipping failed; polygon may self-intersect")
    if len(idx) == 3:
        tris.append(tuple(idx))
    return tris


def region_average_matrix(mesh, regions, coverage_warn=0.999):
    """Rows mapping node values to exact polygon-average values.

    For each region polygon, every hat function is integrated over the part
    of the region covered by the mesh (the piecewise-linear integrand is
    exact: each triangle-triangle clip contributes area times the value at
    its centroid) and the row is normalised by the covered area, so rows sum
    to one. A region barely covered by the mesh triggers a warning.
    """
    rows, cols, vals = [], [], []
    v, t = mesh.vertices, mesh.triangles
    tv = v[t]
    tri_min = tv.min(axis=1)
    tri_max = tv.max(axis=1)
    for ri, poly in enumerate(regions):
        poly = validate_polygon(np.asarray(poly, dtype=np.float64))
        area_region = abs(_polygon_area(poly))
        acc = {}
        covered = 0.0
        for i0, i1, i2 in _ear_clip(poly):
            clip_tri = np.array([poly[i0], poly[i1], poly[i2]])
            cmin, cmax = clip_tri.min(axis=0), clip_tri.max(axis=0)
            cand = np.flatnonzero(
                (tri_min[:, 0] <= cmax[0])
                & (tri_max[:, 0] >= cmin[0])
                & (tri_min[:, 1] <= cmax[1])
                & (tri_max[:, 1] >= cmin[1])
            )
            for ti in cand:
                piece = _clip_convex(tv[ti], clip_tri)
                if len(piece) < 3:
                    continue
                parr = np.asarray(piece)
                for k in range(1, len(parr) - 1):
                    tri_piece = np.array([parr[0], parr[k], parr[k + 1]])
                    a2 = _polygon_area(tri_piece)
                    if abs(a2) < 1e-300:
                        continue
                    centroid = tri_piece.mean(axis=0)
                    w = _barycentric(v, t[ti], centroid[None, :])[0]
                    covered += a2
                    for local in range(3):
                        node = int(t[ti, local])
                        acc[node] = acc.get(node, 0.0) + a2 * w[local]
        if covered <= 0:
            raise InputError(f"region {ri} does not intersect the mesh")
        if covered < coverage_warn * area_region:
            warnings.warn(
                f"region {ri} is only {covered / area_region:.1%} covered by the mesh"
            )
        for node, val in sorted(acc.items()):
            rows.append(ri)
            cols.append(node)
            vals.append(val / covered)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(regions), mesh.n_vertices))
    A.sum_duplicates()
    A.sort_indices()
    return A
