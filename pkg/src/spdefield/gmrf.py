"""Gaussian Markov random field core.

Sparse LDL^T factorisation with a fill-reducing symmetric ordering, Takahashi
partial inverses for marginal variances, and hard linear constraints handled
by conditioning (kriging corrections), including the constrained normalising
constant for intrinsic models.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve_triangular

from .errors import ConstraintRankError, InputError, NotPositiveDefinite

__all__ = [
    "CholeskyFactor",
    "Constraints",
    "GMRF",
    "as_rng",
    "condition_gaussian",
    "is_exactly_symmetric",
    "mirror_upper",
]

LOG_2PI = float(np.log(2.0 * np.pi))


def as_rng(seed):
    """Return a numpy Generator from a Generator, an integer seed, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def mirror_upper(A):
    """Exactly symmetric copy of an almost-symmetric sparse matrix.

    Keeps the upper triangle (diagonal included) and mirrors it below so that
    A[i, j] == A[j, i] holds bitwise. Sparse products of symmetric matrices
    are symmetric only to rounding; storage and factorisation want exactness.
    """
    U = sp.triu(A, k=0, format="csr")
    S = (U + sp.triu(A, k=1, format="csr").T).tocsr()
    S.sort_indices()
    return S


def is_exactly_symmetric(A):
    """True if the sparse matrix equals its transpose bitwise."""
    D = (A != A.T)
    return D.nnz == 0


def _as_csc(Q):
    if not sp.issparse(Q):
        raise InputError("precision must be a scipy sparse matrix")
    if Q.shape[0] != Q.shape[1]:
        raise InputError(f"precision must be square, got {Q.shape}")
    Q = sp.csc_matrix(Q).astype(np.float64)
    Q.eliminate_zeros()
    Q.sort_indices()
    if not np.all(np.isfinite(Q.data)):
        raise InputError("precision contains non-finite entries")
    return Q


class CholeskyFactor:
    """LDL^T factorisation of a sparse symmetric positive definite matrix.

    The factorisation uses a minimum-degree ordering on the symmetric
    pattern; ``perm`` maps factor index to original index, so that
    ``Q[perm][:, perm] == L @ diag(d) @ L.T`` with L unit lower triangular
    and d > 0.
    """

    def __init__(self, lu, perm, L, d):
        self.n = len(d)
        self._lu = lu
        self.perm = perm
        self.L = L
        self.d = d
        self._Lt_csr = L.T.tocsr()
        self.logdet = float(np.sum(np.log(d)))
        self._partial_diag = None

    @classmethod
    def factorize(cls, Q):
        """Factorise a symmetric positive definite sparse matrix.

        Raises
        ------
        NotPositiveDefinite
            If a pivot is non-positive or the matrix is structurally
            singular. No symmetric pivoting is performed, so indefinite
            input surfaces here rather than as a wrong answer.
        """
        Q = _as_csc(Q)
        n = Q.shape[0]
        try:
            lu = splu(
                Q,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        d = np.asarray(lu.U.diagonal(), dtype=np.float64)
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise NotPositiveDefinite("non-positive pivot in LDL^T factor")
        perm = np.empty(n, dtype=np.int64)
        perm[lu.perm_c] = np.arange(n)
        L = lu.L.tocsc()
        L.sort_indices()
        return cls(lu, perm, L, d)

    def solve(self, b):
        """Solve Q x = b for dense b of shape (n,) or (n, k)."""
        b = np.asarray(b, dtype=np.float64)
        if b.ndim == 1:
            return self._lu.solve(b)
        return self._lu.solve(np.ascontiguousarray(b))

    def sample_whitened(self, z):
        """Map iid standard normals z of shape (n, k) to draws with covariance Q^{-1}."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        w = z / np.sqrt(self.d)[:, None]
        xo = spsolve_triangular(
            self._Lt_csr, w, lower=False, unit_diagonal=True
        )
        x = np.empty_like(xo)
        x[self.perm] = xo
        return x

    def partial_inverse_diag(self):
        """diag(Q^{-1}) by the Takahashi recursion, in original ordering.

        The recursion runs over the filled pattern of L, which is closed
        under the elimination tree, so every entry it references is computed
        exactly; the returned diagonal is exact up to rounding.
        """
        if self._partial_diag is not None:
            return self._partial_diag
        n = self.n
        indptr = self.L.indptr
        indices = self.L.indices
        ldata = self.L.data
        d = self.d
        zdata = np.zeros_like(ldata)
        for j in range(n - 1, -1, -1):
            c0, c1 = indptr[j], indptr[j + 1]
            rows = indices[c0:c1]
            if rows[0] != j:
                raise NotPositiveDefinite("factor misses an explicit diagonal")
            P = rows[1:]
            lv = ldata[c0 + 1 : c1]
            m = len(P)
            if m == 0:
                zdata[c0] = 1.0 / d[j]
                continue
            M = np.empty((m, m))
            for a in range(m):
                k = P[a]
                k0, k1 = indptr[k], indptr[k + 1]
                kr = indices[k0:k1]
                pos = np.searchsorted(kr, P[a:])
                if pos[-1] >= k1 - k0 or not np.array_equal(kr[pos], P[a:]):
                    raise NotPositiveDefinite("partial inverse pattern mismatch")
                M[a:, a] = zdata[k0 + pos]
                M[a, a:] = M[a:, a]
            zcol = -(M @ lv)
            zdata[c0] = 1.0 / d[j] - lv @ zcol
            zdata[c0 + 1 : c1] = zcol
        diag_factor = zdata[indptr[:-1]]
        var = np.empty(n)
        var[self.perm] = diag_factor
        self._partial_diag = var
        return var

class Constraints:
    """Hard linear constraints C x = e with full-row-rank C.

    Parameters
    ----------
    C : sparse or dense matrix, shape (k, n)
    e : array_like, shape (k,), optional
        Right-hand sides; zeros if omitted.
    """

    def __init__(self, C, e=None):
        C = sp.csr_matrix(C).astype(np.float64)
        C.eliminate_zeros()
        C.sort_indices()
        k, n = C.shape
        if k == 0:
            raise InputError("constraint set must contain at least one row")
        if k >= n:
            raise ConstraintRankError(
                f"{k} constraints on {n} variables leave no freedom"
            )
        if e is None:
            e = np.zeros(k)
        e = np.asarray(e, dtype=np.float64).ravel()
        if e.shape != (k,):
            raise InputError(f"expected {k} constraint values, got {e.shape}")
        if not np.all(np.isfinite(C.data)) or not np.all(np.isfinite(e)):
            raise InputError("constraints contain non-finite entries")
        CCt = (C @ C.T).toarray()
        sign, logdet = np.linalg.slogdet(CCt)
        eig_ok = sign > 0 and np.isfinite(logdet)
        if not eig_ok or np.linalg.matrix_rank(CCt) < k:
            raise ConstraintRankError("constraint rows are rank deficient")
        self.C = C
        self.e = e
        self.k = k
        self.n = n
        self.logdet_cct = float(logdet)

    @classmethod
    def sum_to_zero(cls, n, groups=None):
        """Sum-to-zero constraints, one row per group of indices.

        ``groups`` is an iterable of index arrays; the whole vector if omitted.
        """
        if groups is None:
            groups = [np.arange(n)]
        rows, cols = [], []
        for r, idx in enumerate(groups):
            idx = np.asarray(idx, dtype=np.int64)
            rows.extend([r] * len(idx))
            cols.extend(idx.tolist())
        C = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(groups), n)
        )
        return cls(C)

    @classmethod
    def dedup_full_rank(cls, C, e=None, tol=1e-10):
        """Reduce rows of C to a full-row-rank subset (pivoted QR on C^T)."""
        C = sp.csr_matrix(C).astype(np.float64)
        dense = C.toarray()
        if dense.shape[0] == 0:
            raise InputError("constraint set must contain at least one row")
        _, R, piv = scipy.linalg.qr(dense.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > tol * max(diag[0], 1.0)))
        keep = np.sort(piv[:rank])
        if e is None:
            e = np.zeros(C.shape[0])
        e = np.asarray(e, dtype=np.float64).ravel()
        return cls(C[keep], e[keep])


class GMRF:
    """Gaussian field with sparse precision, optional mean and constraints.

    Parameters
    ----------
    Q : sparse matrix, shape (n, n)
        Symmetric precision. May be intrinsic (rank deficient) when the
        constraints remove its null space; a relative jitter of
        ``jitter * mean(diag(Q))`` is then added before factorising.
    mean : array_like, optional
        Unconstrained mean; zeros if omitted.
    constraints : Constraints, optional
    label : str, optional
        Provenance tag naming the builder that produced this model.
    """

    def __init__(self, Q, mean=None, constraints=None, jitter=1e-9, label=""):
        Q = _as_csc(Q)
        n = Q.shape[0]
        if mean is None:
            mean = np.zeros(n)
        mean = np.asarray(mean, dtype=np.float64).ravel()
        if mean.shape != (n,):
            raise InputError(f"mean has shape {mean.shape}, expected ({n},)")
        if constraints is not None and constraints.n != n:
            raise InputError(
                f"constraints act on {constraints.n} variables, precision has {n}"
            )
        self.Q = Q
        self.n = n
        self.mean = mean
        self.constraints = constraints
        self.label = label
        self.jitter_value = 0.0
        Qf = Q
        if constraints is not None:
            self.jitter_value = float(jitter * Q.diagonal().mean())
            Qf = (Q + self.jitter_value * sp.identity(n, format="csc")).tocsc()
        self.factor = CholeskyFactor.factorize(Qf)
        self._Qf = Qf
        self._aux = None

    def _constraint_aux(self):
        """Kriging auxiliaries: W = Qf^{-1} C^T, S = C W, chol(S)."""
        if self._aux is None:
            C = self.constraints.C
            W = self.factor.solve(C.T.toarray())
            if W.ndim == 1:
                W = W[:, None]
            S = C @ W
            try:
                cho = scipy.linalg.cho_factor(S)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(
                    "constraint Schur complement is not positive definite"
                ) from exc
            logdet_S = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
            self._aux = (W, cho, logdet_S)
        return self._aux

    def _krige(self, X):
        """Project columns-as-draws X onto the constraint manifold.

        Intrinsic models sample huge null-space amplitudes (variance about
        1/jitter), so one correction pass leaves a violation of order
        amplitude * solver error; re-kriging the residual drives it to
        machine level.
        """
        W, cho, _ = self._constraint_aux()
        C, e = self.constraints.C, self.constraints.e
        for _ in range(3):
            B = C @ X - e[:, None]
            scale = max(1.0, float(np.abs(X).max()))
            if np.abs(B).max() <= 1e-13 * scale:
                break
            X = X - W @ scipy.linalg.cho_solve(cho, B)
        return X

    @property
    def logdet(self):
        """Log determinant of the (possibly jittered) precision.

        With constraints this is the constrained normalising determinant
        logdet(Q_j) + logdet(C Q_j^{-1} C^T) - logdet(C C^T); the jitter
        contributions of the first two terms cancel to first order.
        """
        if self.constraints is None:
            return self.factor.logdet
        _, _, logdet_S = self._constraint_aux()
        return self.factor.logdet + logdet_S - self.constraints.logdet_cct

    def constrained_mean(self):
        """Mean under the constraints (kriging-corrected)."""
        if self.constraints is None:
            return self.mean.copy()
        return self._krige(self.mean[:, None])[:, 0]

    def log_density(self, x, violation_tol=1e-6):
        """Log density at x; under constraints, density on the constraint
        manifold with the constrained normalising constant."""
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.shape != (self.n,):
            raise InputError(f"x has shape {x.shape}, expected ({self.n},)")
        if self.constraints is None:
            r = x - self.mean
            quad = float(r @ (self.Q @ r))
            return 0.5 * (-self.n * LOG_2PI + self.logdet - quad)
        C, e = self.constraints.C, self.constraints.e
        scale = max(1.0, float(np.abs(e).max()), float(np.abs(x).max()))
        if np.abs(C @ x - e).max() > violation_tol * scale:
            raise InputError("x violates the constraints")
        r = x - self.constrained_mean()
        quad = float(r @ (self._Qf @ r))
        k = self.constraints.k
        return 0.5 * (-(self.n - k) * LOG_2PI + self.logdet - quad)

    def sample(self, n_draws=1, rng=None):
        """Draws of shape (n_draws, n); constrained draws satisfy C x = e
        exactly (to solver accuracy) via conditioning by kriging."""
        rng = as_rng(rng)
        z = rng.standard_normal((self.n, n_draws))
        X = self.factor.sample_whitened(z) + self.mean[:, None]
        if self.constraints is not None:
            X = self._krige(X)
        return X.T

    def marginal_variances(self):
        """Per-node marginal variances.

        Unconstrained: exact diag(Q^{-1}) by the Takahashi recursion.
        Constrained: Takahashi diagonal of the jittered precision minus the
        kriging correction diag(W S^{-1} W^T).
        """
        base = self.factor.partial_inverse_diag()
        if self.constraints is None:
            return base.copy()
        W, cho, _ = self._constraint_aux()
        corr = np.einsum(
            "ij,ij->i", scipy.linalg.cho_solve(cho, W.T).T, W
        )
        return base - corr


def condition_gaussian(model, A, y, noise_precision):
    """Posterior field after observing y = A x + noise.

    Standard Gaussian conditioning on the precision scale: the posterior
    precision is Q + p A^T A and the posterior mean solves it against
    Q mean + p A^T y. Constraints carry over unchanged (conditioning and
    kriging commute for linear equality constraints).

    Parameters
    ----------
    model : GMRF
    A : sparse or dense matrix, shape (n_obs, n)
        Observation rows mapping the latent field to the data.
    y : array_like, shape (n_obs,)
    noise_precision : float
        Observation noise precision, > 0.

    Returns
    -------
    GMRF
        Posterior model with updated precision and mean.
    """
    if noise_precision <= 0:
        raise InputError("noise_precision must be positive")
    A = sp.csr_matrix(A)
    y = np.asarray(y, dtype=np.float64).ravel()
    if A.shape[1] != model.n:
        raise InputError(f"A has {A.shape[1]} columns, latent dimension is {model.n}")
    if y.shape != (A.shape[0],):
        raise InputError(f"y has shape {y.shape}, expected ({A.shape[0]},)")
    if y.size == 0:
        return GMRF(
            model.Q, model.mean, model.constraints, label=model.label or "posterior"
        )
    Q_post = mirror_upper((model.Q + noise_precision * (A.T @ A)).tocsc())
    rhs = model.Q @ model.mean + noise_precision * (A.T @ y)
    post = GMRF(Q_post, constraints=model.constraints, label=model.label or "posterior")
    post.mean = post.factor.solve(rhs)
    return post
