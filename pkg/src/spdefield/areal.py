"""Discretely indexed field models on adjacency graphs and time indices.

Covers the ASCII/JSON adjacency graph formats, intrinsic Besag precisions
with per-component sum-to-zero constraints and variance scaling, the BYM2
reparametrisation, simple temporal precisions (iid, ar1, rw1, rw2), and
sparse Kronecker space-time products with combined constraints.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    AsymmetricGraph,
    GraphFormatError,
    InputError,
    SingletonComponentWarning,
)
from .gmrf import GMRF, Constraints, mirror_upper

__all__ = [
    "AdjacencyGraph",
    "parse_graph",
    "format_graph",
    "graph_to_json",
    "graph_from_json",
    "besag_precision",
    "scale_besag",
    "bym2_precision",
    "temporal_precision",
    "kronecker_precision",
]


class AdjacencyGraph:
    """Symmetric region adjacency without self-loops.

    Parameters
    ----------
    neighbours : sequence of int sequences
        Zero-based neighbour lists, one per region. Validated for range,
        self-loops, duplicates and symmetry; stored sorted.
    """

    def __init__(self, neighbours):
        n = len(neighbours)
        if n == 0:
            raise InputError("graph must contain at least one region")
        clean = []
        nb_sets = []
        for i, nbrs in enumerate(neighbours):
            arr = np.asarray(sorted(int(j) for j in nbrs), dtype=np.int64)
            if arr.size:
                if arr.min() < 0 or arr.max() >= n:
                    raise GraphFormatError(
                        f"region {i} lists a neighbour outside 0..{n - 1}"
                    )
                if np.any(arr == i):
                    raise GraphFormatError(f"region {i} lists itself as neighbour")
                if np.any(np.diff(arr) == 0):
                    raise GraphFormatError(f"region {i} lists a neighbour twice")
            clean.append(arr)
            nb_sets.append(set(arr.tolist()))
        for i, s in enumerate(nb_sets):
            for j in s:
                if i not in nb_sets[j]:
                    raise AsymmetricGraph(
                        f"region {i} lists {j} but {j} does not list {i}"
                    )
        self.n = n
        self.neighbours = clean

    @property
    def degrees(self):
        return np.array([len(nb) for nb in self.neighbours], dtype=np.int64)

    @property
    def n_edges(self):
        return int(self.degrees.sum()) // 2

    def adjacency_matrix(self):
        """Binary adjacency as a csr matrix."""
        rows = np.repeat(np.arange(self.n), self.degrees)
        cols = np.concatenate([nb for nb in self.neighbours]) if self.n_edges else np.empty(0, dtype=np.int64)
        return sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n)
        )

    def components(self):
        """Connected component labels, one int per region."""
        _, labels = connected_components(self.adjacency_matrix(), directed=False)
        return labels

    def __eq__(self, other):
        return (
            isinstance(other, AdjacencyGraph)
            and self.n == other.n
            and all(np.array_equal(a, b) for a, b in zip(self.neighbours, other.neighbours))
        )

    def __repr__(self):
        return f"AdjacencyGraph(n={self.n}, edges={self.n_edges})"


def parse_graph(text, zero_based=False):
    """Parse the ASCII adjacency format.

    First line: region count n. Then one line per region, in any order:
    region index, neighbour count, neighbour indices. Indices are 1-based
    unless ``zero_based``. Blank lines are ignored.

    Raises
    ------
    GraphFormatError
        Malformed or out-of-range line (carries the 1-based line number).
    AsymmetricGraph
        If i lists j but j does not list i.
    """
    lines = text.splitlines()
    entries = []
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            tokens = [int(t) for t in stripped.split()]
        except ValueError:
            raise GraphFormatError("non-integer token", line=lineno) from None
        entries.append((lineno, tokens))
    if not entries:
        raise GraphFormatError("empty graph file")
    first_line, head = entries[0]
    if len(head) != 1 or head[0] < 1:
        raise GraphFormatError(
            "first line must hold the region count alone", line=first_line
        )
    n = head[0]
    base = 0 if zero_based else 1
    neighbours: list = [None] * n
    for lineno, tokens in entries[1:]:
        if len(tokens) < 2:
            raise GraphFormatError(
                "expected: region, neighbour count, neighbours", line=lineno
            )
        idx, count, nbrs = tokens[0] - base, tokens[1], tokens[2:]
        if not 0 <= idx < n:
            raise GraphFormatError(
                f"region index {tokens[0]} outside the declared range", line=lineno
            )
        if count < 0 or len(nbrs) != count:
            raise GraphFormatError(
                f"declared {count} neighbours, found {len(nbrs)}", line=lineno
            )
        if neighbours[idx] is not None:
            raise GraphFormatError(f"region {tokens[0]} listed twice", line=lineno)
        shifted = [j - base for j in nbrs]
        if any(not 0 <= j < n for j in shifted):
            raise GraphFormatError("neighbour index out of range", line=lineno)
        neighbours[idx] = shifted
    missing = [i for i, nb in enumerate(neighbours) if nb is None]
    if missing:
        raise GraphFormatError(f"region {missing[0] + base} has no line")
    return AdjacencyGraph(neighbours)


def format_graph(graph, zero_based=False):
    """Render a graph back to the ASCII format (inverse of parse_graph)."""
    base = 0 if zero_based else 1
    out = [str(graph.n)]
    for i, nb in enumerate(graph.neighbours):
        parts = [str(i + base), str(len(nb))] + [str(j + base) for j in nb]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def graph_to_json(graph):
    """Mesh-free JSON form {"n": ..., "nb": [[...], ...]} with 0-based lists."""
    return {"n": graph.n, "nb": [nb.tolist() for nb in graph.neighbours]}


def graph_from_json(obj):
    if not isinstance(obj, dict) or "n" not in obj or "nb" not in obj:
        raise GraphFormatError('expected an object with keys "n" and "nb"')
    nb = obj["nb"]
    if not isinstance(nb, list) or len(nb) != int(obj["n"]):
        raise GraphFormatError('"nb" must list neighbours for every region')
    return AdjacencyGraph(nb)


def _edge_weight_matrix(graph, weights):
    """Symmetric positive edge-weight matrix; unit weights where unspecified."""
    A = graph.adjacency_matrix().tolil()
    if weights:
        seen = {}
        for key, w in weights.items():
            i, j = int(key[0]), int(key[1])
            pair = (min(i, j), max(i, j))
            if not 0 <= i < graph.n or j not in graph.neighbours[i].tolist():
                raise InputError(f"weight given for non-edge {pair}")
            if w <= 0:
                raise InputError(f"edge weight for {pair} must be positive")
            if pair in seen and seen[pair] != w:
                raise InputError(f"conflicting weights for edge {pair}")
            seen[pair] = float(w)
        for (i, j), w in seen.items():
            A[i, j] = w
            A[j, i] = w
    return A.tocsr()


def besag_precision(graph, weights=None):
    """Intrinsic conditional autoregression on an adjacency graph.

    Q has the weighted degree on the diagonal and minus the edge weight on
    adjacent pairs, so Q 1 = 0 per connected component; one sum-to-zero
    constraint row per component makes the model proper on its manifold.

    Parameters
    ----------
    graph : AdjacencyGraph
    weights : dict, optional
        Per-edge weights keyed by (i, j) region pairs; default 1 per edge.
    """
    A = _edge_weight_matrix(graph, weights)
    deg = np.asarray(A.sum(axis=1)).ravel()
    Q = mirror_upper((sp.diags(deg) - A).tocsr())
    labels = graph.components()
    groups = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    cons = Constraints.sum_to_zero(graph.n, groups) if graph.n > 1 else None
    return GMRF(Q, constraints=cons, label="besag")


def _component_groups(Q):
    """Connected components of the precision's off-diagonal pattern."""
    pattern = Q.copy().tocoo()
    off = pattern.row != pattern.col
    adj = sp.csr_matrix(
        (np.ones(off.sum()), (pattern.row[off], pattern.col[off])), shape=Q.shape
    )
    _, labels = connected_components(adj, directed=False)
    return [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]


def _sum_to_zero_variances(sub):
    """Marginal variances of an intrinsic block under its sum-to-zero rule.

    Uses the exact anchor identity: with P = 11^T/m spanning the null
    space, (Q + aP)^{-1} = Q^+ + P/a for any a > 0, so the generalized
    inverse diagonal is dense-invertible without any jitter bias. Dense
    inversion bounds the usable size; areal graphs in scope stay far below
    the cap.
    """
    m = sub.shape[0]
    if m > 4000:
        model = GMRF(sub.tocsc(), constraints=Constraints.sum_to_zero(m))
        return model.marginal_variances()
    Qd = sub.toarray()
    a = float(np.mean(np.diag(Qd)))
    anchored = Qd + a / m
    return np.diag(np.linalg.inv(anchored)) - 1.0 / (a * m)


def scale_besag(model):
    """Rescale an intrinsic model so marginal variances centre on one.

    Each connected component's block is multiplied by the geometric mean
    of its constrained marginal variances, making exp(mean(log Var(u_i)))
    equal one per component. Singleton components cannot be scaled this
    way; they are flagged and given unit iid variance instead (their
    sum-to-zero row would pin them to zero, so it is dropped).
    """
    groups = _component_groups(model.Q)
    Q = model.Q.tocoo().copy()
    factor = np.ones(model.n)
    kept_groups = []
    for idx in groups:
        if len(idx) == 1:
            warnings.warn(
                f"component of region {idx[0]} is a singleton; left iid with unit variance",
                SingletonComponentWarning,
            )
            continue
        sub = model.Q.tocsr()[idx][:, idx]
        variances = _sum_to_zero_variances(sub)
        gm = float(np.exp(np.mean(np.log(variances))))
        factor[idx] = gm
        kept_groups.append(idx)
    vals = Q.data * factor[Q.row]
    Q_scaled = sp.csr_matrix((vals, (Q.row, Q.col)), shape=Q.shape).tolil()
    for idx in groups:
        if len(idx) == 1:
            Q_scaled[idx[0], idx[0]] = 1.0
    Q_scaled = mirror_upper(Q_scaled.tocsr())
    cons = (
        Constraints.sum_to_zero(model.n, kept_groups) if kept_groups else None
    )
    return GMRF(Q_scaled, constraints=cons, label="besag_scaled")


def bym2_precision(graph, tau, w):
    """Joint precision of the variance-partitioned sum of iid and spatial parts.

    The field is b = (1/sqrt(tau)) (sqrt(1-w) v + sqrt(w) u*) with v iid
    standard normal and u* the scaled intrinsic model, so tau controls the
    overall precision and w the share of spatial structure. Returns the
    joint model over (b, u*) of size 2n for interior w; the degenerate
    endpoints return the n-dimensional b-marginal directly (iid at w=0,
    scaled intrinsic at w=1).
    """
    if tau <= 0:
        raise InputError("tau must be positive")
    if not 0.0 <= w <= 1.0:
        raise InputError("w must lie in [0, 1]")
    n = graph.n
    if w == 0.0:
        return GMRF(sp.identity(n, format="csc") * tau, label="bym2")
    scaled = scale_besag(besag_precision(graph))
    if w == 1.0:
        return GMRF(
            (tau * scaled.Q).tocsc(), constraints=scaled.constraints, label="bym2"
        )
    eye = sp.identity(n, format="csc")
    Q = sp.bmat(
        [
            [tau / (1.0 - w) * eye, -np.sqrt(tau * w) / (1.0 - w) * eye],
            [None, scaled.Q + w / (1.0 - w) * eye],
        ],
        format="csr",
    )
    Q = mirror_upper(sp.triu(Q).tocsr())
    cons = None
    if scaled.constraints is not None:
        C_u = scaled.constraints.C
        C = sp.hstack([sp.csr_matrix((C_u.shape[0], n)), C_u], format="csr")
        cons = Constraints(C)
    return GMRF(Q, constraints=cons, label="bym2")


def temporal_precision(kind, T, rho=None):
    """Precision of a simple temporal component.

    Parameters
    ----------
    kind : {"iid", "ar1", "rw1", "rw2"}
        ar1 is scaled to unit marginal variance and needs ``rho`` with
        \\|rho\\| < 1; rw1 is the path-graph intrinsic model (sum-to-zero);
        rw2 penalises second differences (sum-to-zero and zero linear
        drift).
    T : int
        Series length; at least 2 for ar1/rw1 and 3 for rw2.
    """
    if kind == "iid":
        if T < 1:
            raise InputError("iid needs T >= 1")
        return GMRF(sp.identity(T, format="csc"), label="iid")
    if kind == "ar1":
        if T < 2:
            raise InputError("ar1 needs T >= 2")
        if rho is None or not -1.0 < rho < 1.0:
            raise InputError("ar1 needs |rho| < 1")
        s = 1.0 / (1.0 - rho**2)
        diag = np.full(T, (1.0 + rho**2) * s)
        diag[0] = diag[-1] = s
        off = np.full(T - 1, -rho * s)
        Q = sp.diags([off, diag, off], offsets=[-1, 0, 1], format="csr")
        return GMRF(mirror_upper(Q), label="ar1")
    if kind == "rw1":
        if T < 2:
            raise InputError("rw1 needs T >= 2")
        path = AdjacencyGraph(
            [[j for j in (i - 1, i + 1) if 0 <= j < T] for i in range(T)]
        )
        model = besag_precision(path)
        model.label = "rw1"
        return model
    if kind == "rw2":
        if T < 3:
            raise InputError("rw2 needs T >= 3")
        D = sp.diags(
            [np.ones(T - 2), -2.0 * np.ones(T - 2), np.ones(T - 2)],
            offsets=[0, 1, 2],
            shape=(T - 2, T),
            format="csr",
        )
        Q = mirror_upper((D.T @ D).tocsr())
        t = np.arange(T, dtype=np.float64)
        C = np.vstack([np.ones(T), t - t.mean()])
        return GMRF(Q, constraints=Constraints(C), label="rw2")
    raise InputError(f"unknown temporal kind {kind!r}")


def kronecker_precision(time_model, space_model):
    """Space-time interaction precision Q_time x Q_space (Kronecker product).

    The joint vector is time-major: entry t * n + s is time slice t, region
    s. Constraints of the factors are expanded as (C_t x I_n) and
    (I_T x C_s), stacked, and reduced to a full-rank set; both factors must
    carry zero-valued constraints for the combination to be well defined.
    """
    if np.any(time_model.mean) or np.any(space_model.mean):
        raise InputError("kronecker products require zero-mean factors")
    T, n = time_model.n, space_model.n
    Q = sp.kron(time_model.Q, space_model.Q, format="csr")
    Q = mirror_upper(Q)
    rows = []
    for factor_model, expand in (
        (time_model, lambda C: sp.kron(C, sp.identity(n, format="csr"))),
        (space_model, lambda C: sp.kron(sp.identity(T, format="csr"), C)),
    ):
        cons = factor_model.constraints
        if cons is None:
            continue
        if np.any(cons.e):
            raise InputError("only zero-valued constraints combine across factors")
        rows.append(expand(cons.C))
    cons = None
    if rows:
        cons = Constraints.dedup_full_rank(sp.vstack(rows, format="csr"))
    return GMRF(Q, constraints=cons, label="kronecker")
