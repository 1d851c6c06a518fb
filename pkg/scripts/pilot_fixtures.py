"""Regenerate the pilot constants hard-coded in the test suite.

Prints ``PIPELINE_BAND_99`` (tests/test_estimator.py) and ``ITEM_IV_PILOT``
(tests/test_quadform.py). Takes under a minute on one core.
"""

import numpy as np

from odevarcoef.estimator import estimate_beta, stage_two_input
from odevarcoef.kernels import kernel_moment
from odevarcoef.locpoly import SmootherConfig, TimeDesign
from odevarcoef.quadform import lemma3_suite
from odevarcoef.sim import (
    FunctionSpec,
    Scenario,
    default_scenario,
    observe,
    rng_stream,
    sample_design,
    solve_trajectories,
)


def pipeline_band(draws: int = 500) -> float:
    """99% quantile of |beta_1_hat(0.5)| when the true value is sin(pi) = 0."""
    base = Scenario(
        p=1, m=4, beta_fns=(FunctionSpec("sin", (1.0, 1.0)),), covariate_fns=(),
        x1_init=(1.0, 2.0, 3.0, 4.0), n=1000, sigma=0.05,
    )
    traj = solve_trajectories(base)
    cfg = SmootherConfig(h=0.15)
    vals = []
    for s in range(draws):
        sc = base.with_(seed=s)
        d = sample_design(sc)
        est = estimate_beta(stage_two_input(d, observe(traj, d, sc), cfg, t0=0.5), cfg, 0.5)
        vals.append(abs(est.beta[0]))
    return float(np.quantile(vals, 0.99))


def item_iv_ratio(r: int, n: int = 4000, seeds: int = 10) -> float:
    """Median normalized remainder of X'A_rX at h = n^(-1/5)."""
    sc = default_scenario()
    traj = solve_trajectories(sc)
    x0 = traj.at(np.array([0.5]))[0, 0, 0]
    dx0 = traj.deriv1_at(np.array([0.5]))[0, 0]
    mu = kernel_moment("epanechnikov", r)
    h = n**-0.2
    cfg = SmootherConfig(h=h)
    ratios = []
    for s in range(seeds):
        d = TimeDesign(np.sort(rng_stream(1, 3, n, s).random(n)))
        v = lemma3_suite(d, cfg, traj, 0.5, r)["x_a_x"]
        ratios.append(abs(v - n * h ** (r + 1) * x0 * dx0 * mu) / (n * h ** (r + 3)))
    return float(np.median(ratios))


if __name__ == "__main__":
    print(f"PIPELINE_BAND_99 = {pipeline_band():.4f}")
    print("ITEM_IV_PILOT = {" + ", ".join(f"{r}: {item_iv_ratio(r):.1f}" for r in (0, 2)) + "}")
