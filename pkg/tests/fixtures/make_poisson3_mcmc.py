"""One-off generator for poisson3_mcmc.json.

Long-run random-walk Metropolis on a 3-node Poisson count model with a
known proper Gaussian prior. The stored posterior means act as the
reference for the Laplace fit; the chain is long enough that the Monte
Carlo error is far below the comparison tolerance.

Run from the repository root:

    python3 tests/fixtures/make_poisson3_mcmc.py
"""

import json
import pathlib

import numpy as np

SEED = 20240817
ITERATIONS = 2_000_000
BURN_IN = 100_000
PROPOSAL_SD = 0.35

Q = np.array(
    [
        [8.0, -2.0, 0.0],
        [-2.0, 8.0, -2.0],
        [0.0, -2.0, 8.0],
    ]
)
PRIOR_MEAN = np.zeros(3)
Y = np.array([10.0, 7.0, 13.0])


def log_target(u):
    r = u - PRIOR_MEAN
    return float(Y @ u - np.exp(u).sum() - 0.5 * r @ Q @ r)


def main():
    rng = np.random.default_rng(SEED)
    steps = rng.normal(0.0, PROPOSAL_SD, size=(ITERATIONS, 3))
    log_uniforms = np.log(rng.uniform(size=ITERATIONS))

    u = np.log(Y + 0.5)
    lt = log_target(u)
    total = np.zeros(3)
    total_sq = np.zeros(3)
    accepted = 0
    kept = 0
    for i in range(ITERATIONS):
        proposal = u + steps[i]
        lt_prop = log_target(proposal)
        if lt_prop - lt > log_uniforms[i]:
            u = proposal
            lt = lt_prop
            accepted += 1
        if i >= BURN_IN:
            total += u
            total_sq += u * u
            kept += 1

    mean = total / kept
    var = total_sq / kept - mean**2
    # crude IACT-free bound: se with an assumed autocorrelation time of 50
    mc_se = np.sqrt(var * 50.0 / kept)

    out = {
        "model": {
            "Q": Q.tolist(),
            "prior_mean": PRIOR_MEAN.tolist(),
            "y": Y.tolist(),
            "likelihood": "poisson",
        },
        "sampler": {
            "kind": "random-walk metropolis",
            "seed": SEED,
            "iterations": ITERATIONS,
            "burn_in": BURN_IN,
            "proposal_sd": PROPOSAL_SD,
            "acceptance_rate": accepted / ITERATIONS,
        },
        "posterior_mean": mean.tolist(),
        "posterior_sd": np.sqrt(var).tolist(),
        "mc_se_bound": mc_se.tolist(),
    }
    path = pathlib.Path(__file__).with_name("poisson3_mcmc.json")
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(f"wrote {path}")
    print(f"acceptance rate {accepted / ITERATIONS:.3f}")
    print(f"posterior mean {mean}")
    print(f"mc se bound    {mc_se}")


if __name__ == "__main__":
    main()
