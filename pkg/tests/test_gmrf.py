"""Dense-oracle tests for the sparse GMRF core.

Every sparse quantity (solves, log determinants, Takahashi marginal
variances, constrained means/variances/densities) is checked against a dense
numpy computation on matrices small enough to invert directly.
"""

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from spdefield.errors import (
    ConstraintRankError,
    InputError,
    NotPositiveDefinite,
)
from spdefield.gmrf import (
    GMRF,
    CholeskyFactor,
    Constraints,
    as_rng,
    condition_gaussian,
    is_exactly_symmetric,
    mirror_upper,
)


def random_spd(n, seed, density=0.08):
    """Well-conditioned sparse SPD matrix with an irregular pattern."""
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr")
    A = A + A.T
    Q = A.T @ A + sp.diags(1.0 + rng.random(n))
    return mirror_upper(Q).tocsc()


def dense_constrained_oracle(Q, C, e, mu):
    """Constrained mean, marginal variances and logdet via a null-space basis."""
    Qd = Q.toarray()
    Sig = np.linalg.inv(Qd)
    S = C @ Sig @ C.T
    mu_c = mu - Sig @ C.T @ np.linalg.solve(S, C @ mu - e)
    V = scipy.linalg.null_space(C)
    Qv = V.T @ Qd @ V
    var = np.einsum("ij,ij->i", V @ np.linalg.inv(Qv), V)
    _, logdet = np.linalg.slogdet(Qv)
    return mu_c, var, logdet


class TestCholeskyFactor:
    @pytest.mark.parametrize("n,seed", [(5, 0), (37, 1), (120, 2), (200, 3)])
    def test_matches_dense_oracle(self, n, seed):
        Q = random_spd(n, seed)
        Qd = Q.toarray()
        fac = CholeskyFactor.factorize(Q)

        _, logdet_ref = np.linalg.slogdet(Qd)
        np.testing.assert_allclose(fac.logdet, logdet_ref, rtol=1e-10)

        rng = np.random.default_rng(seed + 100)
        B = rng.standard_normal((n, 3))
        np.testing.assert_allclose(
            fac.solve(B), np.linalg.solve(Qd, B), rtol=1e-8, atol=1e-10
        )
        np.testing.assert_allclose(
            fac.partial_inverse_diag(),
            np.diag(np.linalg.inv(Qd)),
            rtol=1e-8,
        )

    def test_permuted_reconstruction(self):
        Q = random_spd(60, 7)
        fac = CholeskyFactor.factorize(Q)
        Qo = Q[fac.perm][:, fac.perm].toarray()
        L = fac.L.toarray()
        np.testing.assert_allclose(Qo, L @ np.diag(fac.d) @ L.T, atol=1e-10)

    def test_whitened_draws_have_target_covariance(self):
        Q = random_spd(12, 4, density=0.3)
        fac = CholeskyFactor.factorize(Q)
        z = as_rng(11).standard_normal((12, 60000))
        X = fac.sample_whitened(z)
        emp = np.cov(X)
        np.testing.assert_allclose(emp, np.linalg.inv(Q.toarray()), atol=0.06)

    def test_indefinite_matrix_rejected(self):
        Q = sp.diags([1.0, -1.0, 2.0]).tocsc()
        with pytest.raises(NotPositiveDefinite):
            CholeskyFactor.factorize(Q)

    def test_singular_matrix_rejected(self):
        Q = sp.csc_matrix((4, 4))
        Q[0, 0] = 1.0
        with pytest.raises(NotPositiveDefinite):
            CholeskyFactor.factorize(Q.tocsc())

    def test_non_square_rejected(self):
        with pytest.raises(InputError):
            CholeskyFactor.factorize(sp.random(3, 4, format="csc"))


class TestSymmetryHelpers:
    def test_mirror_upper_is_bitwise_symmetric(self):
        rng = np.random.default_rng(0)
        A = sp.random(40, 40, density=0.2, random_state=rng)
        A = A + A.T
        A = A + sp.random(40, 40, density=0.05, random_state=rng) * 1e-15
        assert not is_exactly_symmetric(A.tocsr())
        M = mirror_upper(A)
        assert is_exactly_symmetric(M)
        np.testing.assert_allclose(M.toarray(), A.toarray(), atol=1e-14)


class TestConstraints:
    def test_rank_deficient_rows_rejected(self):
        C = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]])
        with pytest.raises(ConstraintRankError):
            Constraints(C)

    def test_too_many_rows_rejected(self):
        with pytest.raises(ConstraintRankError):
            Constraints(np.eye(3))

    def test_dedup_keeps_a_full_rank_subset(self):
        C = np.array(
            [
                [1.0, 1.0, 1.0, 1.0],
                [1.0, 1.0, 1.0, 1.0],
                [1.0, 0.0, 0.0, 0.0],
            ]
        )
        kept = Constraints.dedup_full_rank(C, e=[0.0, 0.0, 2.0])
        assert kept.k == 2

    def test_sum_to_zero_groups(self):
        c = Constraints.sum_to_zero(5, groups=[[0, 1], [2, 3, 4]])
        assert c.k == 2
        np.testing.assert_array_equal(
            c.C.toarray(), [[1, 1, 0, 0, 0], [0, 0, 1, 1, 1]]
        )


class TestConstrainedGMRF:
    @pytest.mark.parametrize("n,k,seed", [(30, 1, 0), (80, 3, 1), (200, 2, 2)])
    def test_matches_dense_oracle(self, n, k, seed):
        rng = np.random.default_rng(seed)
        Q = random_spd(n, seed + 10)
        C = rng.standard_normal((k, n))
        e = rng.standard_normal(k)
        mu = rng.standard_normal(n)
        model = GMRF(Q, mean=mu, constraints=Constraints(C, e))

        mu_ref, var_ref, logdet_ref = dense_constrained_oracle(Q, C, e, mu)
        np.testing.assert_allclose(model.constrained_mean(), mu_ref, atol=1e-8)
        np.testing.assert_allclose(model.marginal_variances(), var_ref, atol=1e-8)
        np.testing.assert_allclose(model.logdet, logdet_ref, atol=1e-6)

        x = model.sample(1, rng=3)[0]
        quad = (x - mu_ref) @ Q.toarray() @ (x - mu_ref)
        ref_logpdf = 0.5 * (-(n - k) * np.log(2 * np.pi) + logdet_ref - quad)
        np.testing.assert_allclose(model.log_density(x), ref_logpdf, atol=1e-5)

    def test_intrinsic_precision_with_nullspace_constraint(self):
        # Path-graph structure matrix: rank n-1, null space = constants.
        n = 25
        D = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], (n, n)).tolil()
        D[0, 0] = 1.0
        D[-1, -1] = 1.0
        Q = mirror_upper(D.tocsr())
        model = GMRF(Q, constraints=Constraints.sum_to_zero(n))
        C = np.ones((1, n))
        _, var_ref, logdet_ref = dense_constrained_oracle(
            Q + 1e-9 * sp.identity(n) * Q.diagonal().mean(), C, np.zeros(1), np.zeros(n)
        )
        np.testing.assert_allclose(model.marginal_variances(), var_ref, rtol=1e-6)
        np.testing.assert_allclose(model.logdet, logdet_ref, rtol=1e-6)

    def test_samples_satisfy_constraints_exactly(self):
        Q = random_spd(50, 5)
        cons = Constraints.sum_to_zero(50)
        model = GMRF(Q, constraints=cons)
        X = model.sample(40, rng=0)
        np.testing.assert_allclose(X.sum(axis=1), 0.0, atol=1e-9)

    def test_density_rejects_off_manifold_points(self):
        Q = random_spd(10, 6)
        model = GMRF(Q, constraints=Constraints.sum_to_zero(10))
        with pytest.raises(InputError):
            model.log_density(np.ones(10))

    def test_sampler_is_deterministic_under_seed(self):
        Q = random_spd(30, 8)
        a = GMRF(Q).sample(5, rng=123)
        b = GMRF(Q).sample(5, rng=123)
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=4, max_value=16), st.integers(0, 10**6))
    def test_conditioning_never_inflates_variances(self, n, seed):
        Q = random_spd(n, seed, density=0.4)
        rng = np.random.default_rng(seed + 1)
        C = rng.standard_normal((1, n))
        free = GMRF(Q).marginal_variances()
        tied = GMRF(Q, constraints=Constraints(C)).marginal_variances()
        assert np.all(tied <= free + 1e-9)
        assert np.all(tied >= -1e-10)


class TestConditionGaussian:
    def test_posterior_matches_dense_formulas(self):
        n, n_obs, p = 100, 30, 2.5
        Q = random_spd(n, 3, density=0.1)
        rng = np.random.default_rng(7)
        A = sp.csr_matrix(rng.standard_normal((n_obs, n)))
        y = rng.standard_normal(n_obs)
        mean = rng.standard_normal(n)
        post = condition_gaussian(GMRF(Q, mean=mean), A, y, p)
        Qd = Q.toarray()
        Ad = A.toarray()
        Q_post = Qd + p * Ad.T @ Ad
        mean_post = np.linalg.solve(Q_post, Qd @ mean + p * Ad.T @ y)
        np.testing.assert_allclose(post.Q.toarray(), Q_post, atol=1e-10)
        np.testing.assert_allclose(post.mean, mean_post, atol=1e-8)
        np.testing.assert_allclose(
            post.marginal_variances(), np.diag(np.linalg.inv(Q_post)), atol=1e-8
        )

    def test_zero_observations_returns_prior(self):
        Q = random_spd(12, 1)
        prior = GMRF(Q, mean=np.arange(12.0))
        post = condition_gaussian(prior, sp.csr_matrix((0, 12)), np.zeros(0), 1.0)
        np.testing.assert_array_equal(post.mean, prior.mean)
        assert (post.Q != prior.Q).nnz == 0

    def test_exact_observation_limit_interpolates(self):
        Q = random_spd(20, 2)
        A = sp.csr_matrix(([1.0], ([0], [4])), shape=(1, 20))
        post = condition_gaussian(GMRF(Q), A, np.array([3.0]), 1e8)
        assert abs(post.mean[4] - 3.0) < 1e-3

    def test_constraints_carry_over(self):
        Q = random_spd(15, 4)
        cons = Constraints.sum_to_zero(15)
        rng = np.random.default_rng(0)
        A = sp.csr_matrix(rng.standard_normal((5, 15)))
        post = condition_gaussian(GMRF(Q, constraints=cons), A, rng.standard_normal(5), 2.0)
        draws = post.sample(10, rng=1)
        np.testing.assert_allclose(draws.sum(axis=1), 0.0, atol=1e-9)
        assert abs(post.constrained_mean().sum()) < 1e-9

    def test_invalid_inputs_rejected(self):
        Q = random_spd(10, 5)
        model = GMRF(Q)
        with pytest.raises(InputError):
            condition_gaussian(model, np.ones((2, 9)), np.zeros(2), 1.0)
        with pytest.raises(InputError):
            condition_gaussian(model, np.ones((2, 10)), np.zeros(3), 1.0)
        with pytest.raises(InputError):
            condition_gaussian(model, np.ones((2, 10)), np.zeros(2), -1.0)
