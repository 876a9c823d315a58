"""Hyperparameter posterior exploration and latent posteriors.

A latent model stacks Gaussian components behind projection matrices and
observes the summed predictor through a Gaussian or Poisson likelihood. The
hyperparameter posterior is evaluated by the Laplace identity

    pi(theta | y) ~ pi(y | x*, theta) pi(x* | theta) / pi_G(x* | y, theta) * pi(theta)

at the conditional mode x*, which is exact for Gaussian likelihoods and a
Gauss-Newton fixed point for Poisson. Integration strategies: 'eb' (mode
only) and 'grid' (axis-aligned exploration with a log-drop retention rule).
"""

from __future__ import annotations

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.special

from .errors import (
    GridExplosion,
    InputError,
    NewtonDivergence,
    NotPositiveDefinite,
    OptimizerFailure,
)
from .gmrf import GMRF, Constraints, as_rng, condition_gaussian, mirror_upper

__all__ = [
    "Component",
    "LatentModel",
    "GridConfig",
    "FitResult",
    "fixed_effects_component",
    "log_posterior_theta",
    "fit",
    "restore_fit",
    "predict",
]

LOG_2PI = float(np.log(2.0 * np.pi))
MAX_THETA_DIM = 20
FIXED_EFFECT_PRECISION = 1e-4


class Component:
    """One latent block: a precision builder over its hyperparameters and a
    projection of its nodes into the observation predictor.

    Parameters
    ----------
    name : str
    A : sparse or dense matrix, shape (n_obs, n_latent)
    builder : callable
        ``builder(theta_slice) -> GMRF`` with ``n == n_latent``. Called with
        an empty array when ``n_theta == 0``.
    n_theta : int, optional
        Hyperparameters consumed by this component.
    log_prior : callable, optional
        ``log_prior(theta_slice) -> float`` on the builder's theta scale,
        Jacobians included; flat if omitted.
    """

    def __init__(self, name, A, builder, n_theta=0, log_prior=None):
        self.name = str(name)
        self.A = sp.csr_matrix(A)
        self.builder = builder
        self.n_theta = int(n_theta)
        self.log_prior = log_prior
        if self.n_theta < 0:
            raise InputError("n_theta must be nonnegative")
        self.n_latent = self.A.shape[1]

    def build(self, theta_slice):
        model = self.builder(np.asarray(theta_slice, dtype=np.float64))
        if not isinstance(model, GMRF):
            raise InputError(f"component {self.name!r} builder must return a GMRF")
        if model.n != self.n_latent:
            raise InputError(
                f"component {self.name!r} built {model.n} nodes, projection has "
                f"{self.n_latent} columns"
            )
        return model


def fixed_effects_component(X, name="fixed"):
    """Fixed effects as a latent block with a vague proper prior.

    The coefficients get precision 1e-4 I, which keeps every factorization
    proper while being flat on any data scale that matters.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("design matrix must be two dimensional")
    p = X.shape[1]

    def builder(theta):
        return GMRF(
            sp.identity(p, format="csc") * FIXED_EFFECT_PRECISION, label=name
        )

    comp = Component(name, sp.csr_matrix(X), builder, n_theta=0)
    comp.fixed_effect_precision = FIXED_EFFECT_PRECISION
    return comp


class GridConfig:
    """Axis-aligned grid exploration settings.

    ``step`` is in posterior standard deviations (from the quadratic polish
    at the mode), scalar or one value per hyperparameter; points whose log
    posterior drops more than ``drop`` below the mode are discarded; the
    tensor grid aborts beyond ``max_points``. ``max_steps_per_axis = 0``
    degenerates to the mode alone.
    """

    def __init__(self, step=0.5, drop=2.5, max_points=100000, max_steps_per_axis=10):
        step = np.atleast_1d(np.asarray(step, dtype=np.float64))
        if np.any(step <= 0):
            raise InputError("step must be positive")
        if max_steps_per_axis < 0:
            raise InputError("max_steps_per_axis must be nonnegative")
        self.step = step
        self.drop = float(drop)
        self.max_points = int(max_points)
        self.max_steps_per_axis = int(max_steps_per_axis)

    def step_for(self, d):
        if self.step.size == 1:
            return np.full(d, self.step[0])
        if self.step.size != d:
            raise InputError(f"step has {self.step.size} entries, model has {d}")
        return self.step.copy()


class LatentModel:
    """Observations driven by a sum of projected latent Gaussian blocks.

    Parameters
    ----------
    y : array_like, shape (n_obs,)
    components : list of Component
        All projections must have n_obs rows.
    likelihood : {"gaussian", "poisson"}
        Gaussian observes the predictor with noise precision exp(theta[0])
        unless ``noise_precision`` fixes it; Poisson uses a log link with
        optional additive ``offset`` on the predictor scale.
    offset : array_like, optional
    noise_precision : float, optional
        Fixes the Gaussian noise precision, removing it from theta.
    noise_log_prior : callable, optional
        Prior for theta[0] = log(noise precision); flat if omitted.
    """

    def __init__(
        self,
        y,
        components,
        likelihood="gaussian",
        offset=None,
        noise_precision=None,
        noise_log_prior=None,
    ):
        y = np.asarray(y, dtype=np.float64).ravel()
        if likelihood not in ("gaussian", "poisson"):
            raise InputError(f"unknown likelihood {likelihood!r}")
        if likelihood == "poisson":
            if np.any(y < 0) or np.any(y != np.round(y)):
                raise InputError("poisson observations must be nonnegative integers")
        if not np.all(np.isfinite(y)):
            raise InputError("observations must be finite")
        if not components:
            raise InputError("need at least one component")
        n_obs = y.size
        for comp in components:
            if comp.A.shape[0] != n_obs:
                raise InputError(
                    f"component {comp.name!r} projects to {comp.A.shape[0]} rows, "
                    f"data has {n_obs}"
                )
        self.y = y
        self.components = list(components)
        self.likelihood = likelihood
        self.offset = (
            np.zeros(n_obs)
            if offset is None
            else np.asarray(offset, dtype=np.float64).ravel()
        )
        if self.offset.shape != (n_obs,):
            raise InputError("offset length must match observations")
        if noise_precision is not None and noise_precision <= 0:
            raise InputError("noise_precision must be positive")
        self.noise_precision = noise_precision
        self.noise_log_prior = noise_log_prior
        self.A = sp.hstack([c.A for c in components], format="csr")
        self.n_latent = self.A.shape[1]
        self._noise_in_theta = likelihood == "gaussian" and noise_precision is None
        self.theta_dim = int(self._noise_in_theta) + sum(
            c.n_theta for c in components
        )
        if self.theta_dim > MAX_THETA_DIM:
            raise InputError(
                f"{self.theta_dim} hyperparameters exceed the supported {MAX_THETA_DIM}"
            )

    def _split_theta(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.theta_dim,):
            raise InputError(
                f"theta has shape {theta.shape}, model expects ({self.theta_dim},)"
            )
        pos = 0
        noise_precision = self.noise_precision
        if self._noise_in_theta:
            noise_precision = float(np.exp(theta[0]))
            pos = 1
        slices = []
        for comp in self.components:
            slices.append(theta[pos : pos + comp.n_theta])
            pos += comp.n_theta
        return noise_precision, slices

    def _joint_prior(self, slices):
        """Stack component models into one GMRF (block precision, block
        constraints with column offsets)."""
        built = [c.build(s) for c, s in zip(self.components, slices)]
        Q = sp.block_diag([m.Q for m in built], format="csc")
        mean = np.concatenate([m.mean for m in built])
        rows = []
        values = []
        offset = 0
        for m in built:
            if m.constraints is not None:
                C = m.constraints.C
                pad_left = sp.csr_matrix((C.shape[0], offset))
                pad_right = sp.csr_matrix(
                    (C.shape[0], self.n_latent - offset - m.n)
                )
                rows.append(sp.hstack([pad_left, C, pad_right], format="csr"))
                values.append(m.constraints.e)
            offset += m.n
        cons = None
        if rows:
            cons = Constraints(sp.vstack(rows, format="csr"), np.concatenate(values))
        return GMRF(mirror_upper(Q), mean=mean, constraints=cons, label="joint"), built

    def _log_prior_theta(self, theta):
        noise_precision, slices = self._split_theta(theta)
        total = 0.0
        if self._noise_in_theta and self.noise_log_prior is not None:
            total += float(self.noise_log_prior(float(np.log(noise_precision))))
        for comp, s in zip(self.components, slices):
            if comp.log_prior is not None:
                total += float(comp.log_prior(s))
        return total

    def _log_likelihood(self, eta, noise_precision):
        if self.likelihood == "gaussian":
            r = self.y - eta - self.offset
            n = self.y.size
            return 0.5 * (
                n * np.log(noise_precision) - n * LOG_2PI - noise_precision * (r @ r)
            )
        lam_log = eta + self.offset
        return float(
            self.y @ lam_log - np.exp(lam_log).sum() - _log_factorials(self.y)
        )

    def _gaussian_mode(self, prior, noise_precision):
        """Exact conditional posterior for the Gaussian likelihood."""
        post = condition_gaussian(
            prior, self.A, self.y - self.offset, noise_precision
        )
        if prior.constraints is not None:
            post.mean = post._krige(post.mean[:, None])[:, 0]
        return post, 0

    def _poisson_mode(self, prior, max_iter=100, tol=1e-8):
        """Damped Gauss-Newton to the conditional mode.

        Each step solves the working normal equations
        (Q + A^T W A) x = Q mu + A^T W z with W = diag(lambda) and working
        response z = eta + (y - lambda)/lambda, then projects onto the
        constraint manifold; step halving guards the log target.
        """
        x = (
            prior.constrained_mean()
            if prior.constraints is not None
            else prior.mean.copy()
        )

        def target(xv):
            eta = self.A @ xv
            r = xv - prior.mean
            with np.errstate(over="ignore"):
                lam = np.exp(eta + self.offset)
            if not np.all(np.isfinite(lam)):
                return -np.inf
            return float(self.y @ (eta + self.offset) - lam.sum()) - 0.5 * float(
                r @ (prior.Q @ r)
            )

        post = None
        iterations = 0
        for iterations in range(1, max_iter + 1):
            eta = self.A @ x
            with np.errstate(over="ignore"):
                lam = np.exp(eta + self.offset)
            if not np.all(np.isfinite(lam)):
                raise NewtonDivergence("predictor overflowed during mode search")
            W = sp.diags(lam)
            Q_post = mirror_upper((prior.Q + self.A.T @ W @ self.A).tocsc())
            rhs = prior.Q @ prior.mean + self.A.T @ (lam * eta + self.y - lam)
            post = GMRF(Q_post, constraints=prior.constraints, label="posterior")
            candidate = post.factor.solve(rhs)
            if prior.constraints is not None:
                candidate = post._krige(candidate[:, None])[:, 0]
            delta_eta = self.A @ (candidate - x)
            if np.abs(delta_eta).max() < tol:
                post.mean = candidate
                return post, iterations
            base = target(x)
            # Near the solution the objective change sits below roundoff,
            # so minuscule decreases must not count as failed steps.
            floor = base - 1e-9 * (1.0 + abs(base))
            step = 1.0
            accepted = False
            for _ in range(12):
                trial = x + step * (candidate - x)
                if target(trial) > floor:
                    x = trial
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                raise NewtonDivergence(
                    f"no ascent step found after {iterations} iterations"
                )
        raise NewtonDivergence(f"mode search did not converge in {max_iter} iterations")

    def conditional_approximation(self, theta):
        """Gaussian approximation of pi(x | y, theta) at the conditional mode.

        Returns (posterior GMRF with mean at the mode, prior GMRF, noise
        precision, newton iterations).
        """
        noise_precision, slices = self._split_theta(theta)
        prior, _ = self._joint_prior(slices)
        if self.likelihood == "gaussian":
            post, iters = self._gaussian_mode(prior, noise_precision)
        else:
            post, iters = self._poisson_mode(prior)
        return post, prior, noise_precision, iters

    def log_posterior(self, theta):
        """Unnormalised log posterior of the hyperparameters.

        All three Laplace terms are evaluated at the conditional mode; for
        the Gaussian likelihood the quotient is exact.
        """
        post, prior, noise_precision, iters = self.conditional_approximation(theta)
        x_star = post.mean if prior.constraints is None else post.constrained_mean()
        eta = self.A @ x_star
        log_lik = self._log_likelihood(eta, noise_precision)
        log_prior_x = prior.log_density(x_star)
        log_gaussian = post.log_density(x_star)
        return log_lik + log_prior_x - log_gaussian + self._log_prior_theta(theta)


def _log_factorials(y):
    return float(scipy.special.gammaln(y + 1.0).sum())


def log_posterior_theta(model, theta):
    """Module-level alias of LatentModel.log_posterior."""
    return model.log_posterior(theta)


class FitResult:
    """Posterior exploration output.

    theta_points, log_posteriors and weights describe the integration grid
    (a single point for 'eb'); latent_mean and latent_sd are the
    weight-mixed latent marginals; approximations holds one conditional
    GMRF per grid point for predictive sampling.
    """

    def __init__(
        self,
        theta_points,
        log_posteriors,
        weights,
        latent_mean,
        latent_sd,
        approximations,
        model,
        theta_mode,
        theta_sd,
        diagnostics,
        seed=None,
    ):
        self.theta_points = theta_points
        self.log_posteriors = np.asarray(log_posteriors, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.latent_mean = latent_mean
        self.latent_sd = latent_sd
        self.approximations = approximations
        self.model = model
        self.theta_mode = theta_mode
        self.theta_sd = theta_sd
        self.diagnostics = diagnostics
        self.seed = seed

    def to_dict(self):
        """JSON-safe summary (matrices and factors omitted)."""
        return {
            "theta_grid": [
                {
                    "theta": [float(v) for v in t],
                    "log_posterior": float(lp),
                    "weight": float(w),
                }
                for t, lp, w in zip(
                    self.theta_points, self.log_posteriors, self.weights
                )
            ],
            "theta_mode": [float(v) for v in self.theta_mode],
            "theta_sd": None
            if self.theta_sd is None
            else [float(v) for v in self.theta_sd],
            "latent_mean": [float(v) for v in self.latent_mean],
            "latent_sd": [float(v) for v in self.latent_sd],
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }


def _quadratic_polish(fun, x0, f0, rel_step=1e-3):
    """Central-difference gradient/Hessian at x0 with one guarded Newton step.

    Returns (x, f(x), sd) where sd are the per-axis posterior standard
    deviations from the negative inverse Hessian (NaN where not concave).
    """
    d = x0.size
    h = rel_step * np.maximum(1.0, np.abs(x0))
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    fp = np.zeros(d)
    fm = np.zeros(d)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        fp[i] = fun(x0 + ei)
        fm[i] = fun(x0 - ei)
        grad[i] = (fp[i] - fm[i]) / (2.0 * h[i])
        hess[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
    for i in range(d):
        for j in range(i + 1, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h[i]
            ej[j] = h[j]
            fpp = fun(x0 + ei + ej)
            fmm = fun(x0 - ei - ej)
            hess[i, j] = hess[j, i] = (
                fpp - fp[i] - fp[j] + 2.0 * f0 - fm[i] - fm[j] + fmm
            ) / (2.0 * h[i] * h[j])
    x, f = x0, f0
    try:
        step = np.linalg.solve(hess, grad)
        candidate = x0 - step
        fc = fun(candidate)
        if np.isfinite(fc) and fc > f0:
            x, f = candidate, fc
    except np.linalg.LinAlgError:
        pass
    sd = np.full(d, np.nan)
    try:
        cov = np.linalg.inv(-hess)
        diag = np.diag(cov)
        sd = np.where(diag > 0, np.sqrt(np.abs(diag)), np.nan)
    except np.linalg.LinAlgError:
        pass
    return x, f, sd


def _mixture_marginals(approximations, weights):
    means = np.stack([a.constrained_mean() if a.constraints is not None else a.mean for a in approximations])
    variances = np.stack([a.marginal_variances() for a in approximations])
    mean = weights @ means
    second = weights @ (variances + means**2)
    var = np.maximum(second - mean**2, 0.0)
    return mean, np.sqrt(var)


def fit(model, strategy="eb", grid_config=None, theta0=None, seed=None):
    """Explore the hyperparameter posterior and mix latent marginals.

    'eb' maximises the log posterior (derivative-free simplex plus a
    quadratic polish) and returns the single-mode result; 'grid' walks
    axis-aligned steps of ``grid_config.step`` posterior sds around the
    mode, keeps points within ``grid_config.drop`` log units, and
    weight-averages the latent marginals. ``seed`` is carried into the
    result as the default for predictive draws.
    """
    if strategy not in ("eb", "grid"):
        raise InputError(f"unknown strategy {strategy!r}")
    if grid_config is None:
        grid_config = GridConfig()
    d = model.theta_dim
    evaluations = {}

    def logpost(theta):
        key = tuple(np.round(np.asarray(theta, dtype=np.float64), 12))
        if key not in evaluations:
            try:
                evaluations[key] = model.log_posterior(np.asarray(theta))
            except (NewtonDivergence, NotPositiveDefinite):
                evaluations[key] = -np.inf
        return evaluations[key]

    diagnostics = {"strategy": strategy, "newton_iterations": 0}
    for comp in model.components:
        precision = getattr(comp, "fixed_effect_precision", None)
        if precision is not None:
            diagnostics["fixed_effect_precision"] = float(precision)
    if d == 0:
        theta_mode = np.zeros(0)
        f_mode = model.log_posterior(theta_mode)
        theta_sd = np.zeros(0)
        points = [theta_mode]
        values = np.array([f_mode])
    else:
        theta0 = (
            np.zeros(d)
            if theta0 is None
            else np.asarray(theta0, dtype=np.float64).ravel()
        )
        if theta0.shape != (d,):
            raise InputError(f"theta0 must have shape ({d},)")
        f00 = logpost(theta0)
        if not np.isfinite(f00):
            raise OptimizerFailure("log posterior not finite at the starting point")
        result = scipy.optimize.minimize(
            lambda t: -logpost(t),
            theta0,
            method="Nelder-Mead",
            options={"xatol": 1e-5, "fatol": 1e-7, "maxiter": 400 * d},
        )
        theta_mode = np.asarray(result.x, dtype=np.float64)
        f_mode = logpost(theta_mode)
        if not np.isfinite(f_mode):
            raise OptimizerFailure("optimizer settled on a non-finite log posterior")
        theta_mode, f_mode, theta_sd = _quadratic_polish(logpost, theta_mode, f_mode)
        fallback = np.abs(theta_mode) * 0.1 + 0.5
        theta_sd = np.where(np.isfinite(theta_sd), theta_sd, fallback)
        points = [theta_mode]
        values = np.array([f_mode])
        if strategy == "grid":
            points, values = _explore_grid(
                logpost, theta_mode, f_mode, theta_sd, grid_config
            )
    weights = np.exp(values - values.max())
    weights /= weights.sum()
    approximations = []
    total_iters = 0
    for theta in points:
        post, _, _, iters = model.conditional_approximation(theta)
        approximations.append(post)
        total_iters += iters
    diagnostics["newton_iterations"] = total_iters
    diagnostics["jitter"] = float(
        max((a.jitter_value for a in approximations), default=0.0)
    )
    diagnostics["n_grid_points"] = len(points)
    latent_mean, latent_sd = _mixture_marginals(approximations, weights)
    return FitResult(
        points,
        values,
        weights,
        latent_mean,
        latent_sd,
        approximations,
        model,
        theta_mode,
        theta_sd if d else None,
        diagnostics,
        seed=seed,
    )


def restore_fit(model, theta_points, log_posteriors, weights, seed=None):
    """Rebuild a FitResult from a stored theta grid.

    Conditional approximations are deterministic given theta, so a saved
    grid plus the original model reproduces the posterior machinery without
    re-running the optimizer.
    """
    theta_points = [np.atleast_1d(np.asarray(t, dtype=np.float64)) for t in theta_points]
    if not theta_points:
        raise InputError("theta grid is empty")
    log_posteriors = np.asarray(log_posteriors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(theta_points),) or np.any(weights < 0):
        raise InputError("weights must be nonnegative, one per theta point")
    weights = weights / weights.sum()
    approximations = []
    iterations = 0
    for theta in theta_points:
        post, _, _, iters = model.conditional_approximation(theta)
        approximations.append(post)
        iterations += iters
    latent_mean, latent_sd = _mixture_marginals(approximations, weights)
    diagnostics = {
        "strategy": "restored",
        "newton_iterations": iterations,
        "jitter": float(max(a.jitter_value for a in approximations)),
        "n_grid_points": len(theta_points),
    }
    mode_index = int(np.argmax(log_posteriors))
    return FitResult(
        theta_points,
        log_posteriors,
        weights,
        latent_mean,
        latent_sd,
        approximations,
        model,
        theta_points[mode_index],
        None,
        diagnostics,
        seed=seed,
    )


def _explore_grid(logpost, mode, f_mode, sd, config):
    """Axis-aligned tensor grid around the mode, pruned by log drop."""
    d = mode.size
    step = config.step_for(d)
    offsets = []
    for i in range(d):
        axis = [0]
        for direction in (+1, -1):
            for k in range(1, config.max_steps_per_axis + 1):
                theta = mode.copy()
                theta[i] += direction * k * step[i] * sd[i]
                if f_mode - logpost(theta) > config.drop:
                    break
                axis.append(direction * k)
        offsets.append(sorted(axis))
    total = 1
    for axis in offsets:
        total *= len(axis)
        if total > config.max_points:
            raise GridExplosion(
                f"grid would need {total}+ points (cap {config.max_points})"
            )
    points = []
    values = []
    for combo in np.stack(
        np.meshgrid(*offsets, indexing="ij"), axis=-1
    ).reshape(-1, d):
        theta = mode + combo * step * sd
        value = logpost(theta)
        if f_mode - value <= config.drop:
            points.append(theta)
            values.append(value)
    return points, np.asarray(values)


def predict(fit_result, A_new, n_draws=1000, rng=None):
    """Predictive summary at new projection rows.

    Draws hyperparameters from the grid weights, latent fields from the
    matching conditional Gaussians, and projects; Poisson models report the
    linked (rate) scale since the predictor's sd is a poor proxy there.
    Returns mean, sd and the 2.5/25/50/75/97.5 percent quantiles, plus the
    raw draws.
    """
    A_new = sp.csr_matrix(A_new)
    model = fit_result.model
    if A_new.shape[1] != model.n_latent:
        raise InputError(
            f"projection has {A_new.shape[1]} columns, latent dimension is "
            f"{model.n_latent}"
        )
    rng = as_rng(fit_result.seed if rng is None else rng)
    counts = rng.multinomial(n_draws, fit_result.weights)
    blocks = []
    for approx, count in zip(fit_result.approximations, counts):
        if count == 0:
            continue
        x = approx.sample(count, rng=rng)
        blocks.append((A_new @ x.T).T)
    eta = np.vstack(blocks)
    if model.likelihood == "poisson":
        eta = np.exp(eta)
    quantiles = np.percentile(eta, [2.5, 25.0, 50.0, 75.0, 97.5], axis=0)
    return {
        "mean": eta.mean(axis=0),
        "sd": eta.std(axis=0),
        "q025": quantiles[0],
        "q25": quantiles[1],
        "q50": quantiles[2],
        "q75": quantiles[3],
        "q975": quantiles[4],
        "draws": eta,
    }
