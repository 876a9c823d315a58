"""Finite-difference grid operators: periodic CAR stencils and the 1D
second-difference demonstration.

The grid operator realises (kappa^2 - Laplacian) on a regular M x N torus
with the classic 5-point cross stencil; a precision bridge mirrors the
alpha = 2 composition of the FEM path with the trivial grid mass h^2 I.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import InputError
from .gmrf import mirror_upper

__all__ = ["grid_operator", "second_derivative", "grid_precision"]


def _circulant_laplacian(m, h):
    """1D periodic second-difference operator (negative Laplacian)."""
    main = np.full(m, 2.0 / h**2)
    off = np.full(m - 1, -1.0 / h**2)
    D = sp.diags([off, main, off], offsets=[-1, 0, 1], format="lil")
    D[0, m - 1] = -1.0 / h**2
    D[m - 1, 0] = -1.0 / h**2
    return D.tocsr()


def _validate_grid(rows, cols, h):
    if rows < 3 or cols < 3:
        raise InputError("grid needs at least 3 rows and 3 columns")
    if h <= 0:
        raise InputError("grid spacing must be positive")


def grid_operator(rows, cols, h=1.0, kappa=0.0):
    """Periodic cross-stencil operator kappa^2 I + D on an M x N torus.

    Row-major indexing (node = i * cols + j). The diagonal holds
    kappa^2 + 4/h^2 and the four wraparound neighbours -1/h^2, so with
    kappa = 0 constants are annihilated exactly.
    """
    _validate_grid(rows, cols, h)
    if kappa < 0:
        raise InputError("kappa must be nonnegative")
    L = sp.kron(_circulant_laplacian(rows, h), sp.identity(cols)) + sp.kron(
        sp.identity(rows), _circulant_laplacian(cols, h)
    )
    L = L + kappa**2 * sp.identity(rows * cols)
    return mirror_upper(L.tocsr())


def second_derivative(values, h):
    """Central second differences (f_{i-1} - 2 f_i + f_{i+1}) / h^2.

    Returns the interior values only (two shorter than the input). Exact
    for quadratics; fourth-order Taylor remainder h^2 max|f''''|/12
    otherwise.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 3:
        raise InputError("need at least 3 values")
    if h <= 0:
        raise InputError("spacing must be positive")
    return (values[:-2] - 2.0 * values[1:-1] + values[2:]) / h**2


def grid_precision(rows, cols, h=1.0, kappa=0.0):
    """Grid-field precision L^T C^{-1} L with the grid mass C = h^2 I.

    Mirrors the alpha = 2 composition of the mesh path on the torus; with
    kappa > 0 the result is positive definite.
    """
    L = grid_operator(rows, cols, h=h, kappa=kappa)
    Q = (L.T @ L) / h**2
    return mirror_upper(Q.tocsr())
