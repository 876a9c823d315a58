"""Calibration tests for the penalised-complexity priors.

Every tail statement the priors are built from is re-derived numerically by
adaptive quadrature over the implemented density, so the closed forms cannot
drift from their defining properties.
"""

import numpy as np
import pytest
from scipy import integrate

from spdefield.errors import InputError
from spdefield.priors import (
    PcPrecisionPrior,
    PcRangeSigmaPrior,
    bym2_weight_logdensity,
    pc_precision_logdensity,
    pc_range_sigma_logdensity,
)


class TestPrecisionPrior:
    def test_lambda_calibration(self):
        prior = PcPrecisionPrior(U=1.16, alpha=0.01)
        assert prior.lam == pytest.approx(-np.log(0.01) / 1.16, rel=1e-12)
        # Commonly quoted rounded value.
        assert prior.lam == pytest.approx(3.9701, abs=2e-4)

    def test_lambda_round_trip(self):
        prior = PcPrecisionPrior(U=2.5, alpha=0.05)
        assert np.exp(-prior.lam * prior.U) == pytest.approx(0.05, rel=1e-12)

    def test_tail_probability_by_quadrature(self):
        prior = PcPrecisionPrior(U=1.16, alpha=0.01)

        def density(tau):
            return np.exp(pc_precision_logdensity(tau, prior))

        # P(1/sqrt(tau) > U) = P(tau < U^-2).
        tail, _ = integrate.quad(density, 0.0, prior.U**-2)
        assert tail == pytest.approx(prior.alpha, abs=1e-6)

    def test_density_integrates_to_one(self):
        prior = PcPrecisionPrior(U=1.0, alpha=0.1)

        def density_of_sd(s):
            # Substitution tau = s^-2 maps (0, inf) to (0, inf).
            tau = s**-2.0
            return np.exp(pc_precision_logdensity(tau, prior)) * 2.0 * s**-3.0

        total, _ = integrate.quad(density_of_sd, 0.0, np.inf)
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_marginal_sd_rule_of_thumb(self):
        U = 1.16
        prior = PcPrecisionPrior(U=U, alpha=0.01)
        rng = np.random.default_rng(0)
        sd = rng.exponential(scale=1.0 / prior.lam, size=400000)
        x = sd * rng.standard_normal(sd.size)
        assert x.std() == pytest.approx(0.31 * U, rel=0.10)
        # Closed form E[sd^2] = 2 / lambda^2.
        assert np.sqrt(2.0) / prior.lam == pytest.approx(0.31 * U, rel=0.10)

    def test_validation(self):
        with pytest.raises(InputError):
            PcPrecisionPrior(U=-1.0, alpha=0.1)
        with pytest.raises(InputError):
            PcPrecisionPrior(U=1.0, alpha=1.5)
        with pytest.raises(InputError):
            pc_precision_logdensity(-1.0, PcPrecisionPrior(1.0, 0.1))


class TestRangeSigmaPrior:
    prior = PcRangeSigmaPrior(r0=2.0, alpha_r=0.05, sigma0=1.5, alpha_s=0.01)

    def test_tail_probabilities_by_quadrature(self):
        lam_r, lam_s = self.prior.lam_r, self.prior.lam_s

        def r_marginal(r):
            return lam_r * r**-2.0 * np.exp(-lam_r / r)

        def s_marginal(s):
            return lam_s * np.exp(-lam_s * s)

        below, _ = integrate.quad(r_marginal, 0.0, self.prior.r0)
        assert below == pytest.approx(self.prior.alpha_r, abs=1e-6)
        above, _ = integrate.quad(s_marginal, self.prior.sigma0, np.inf)
        assert above == pytest.approx(self.prior.alpha_s, abs=1e-6)
        # And the joint density factorises into exactly these marginals.
        got = pc_range_sigma_logdensity(1.7, 0.4, self.prior)
        assert got == pytest.approx(
            np.log(r_marginal(1.7)) + np.log(s_marginal(0.4)), rel=1e-12
        )

    def test_joint_density_integrates_to_one(self):
        def joint(r, s):
            return np.exp(pc_range_sigma_logdensity(r, s, self.prior))

        total, _ = integrate.dblquad(
            lambda s, r: joint(r, s), 0.0, np.inf, 0.0, np.inf
        )
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_monotone_shrinkage_in_sigma(self):
        values = [
            pc_range_sigma_logdensity(1.0, s, self.prior) for s in (0.5, 1.0, 2.0)
        ]
        assert values[0] > values[1] > values[2]

    def test_range_mass_moves_out_as_rate_grows(self):
        # P(r > R) = 1 - exp(-lam_r / R) grows with lam_r.
        tight = PcRangeSigmaPrior(2.0, 0.5, 1.0, 0.5)
        loose = PcRangeSigmaPrior(2.0, 0.01, 1.0, 0.5)
        assert loose.lam_r > tight.lam_r
        for R in (1.0, 3.0, 10.0):
            p_tight = 1.0 - np.exp(-tight.lam_r / R)
            p_loose = 1.0 - np.exp(-loose.lam_r / R)
            assert p_loose > p_tight

    def test_validation(self):
        with pytest.raises(InputError):
            PcRangeSigmaPrior(-1.0, 0.5, 1.0, 0.5)
        with pytest.raises(InputError):
            pc_range_sigma_logdensity(0.0, 1.0, self.prior)


class TestWeightPlaceholder:
    def test_uniform(self):
        assert bym2_weight_logdensity(0.3) == 0.0
        np.testing.assert_array_equal(
            bym2_weight_logdensity(np.array([0.0, 0.5, 1.0])), 0.0
        )
        with pytest.raises(InputError):
            bym2_weight_logdensity(1.2)
