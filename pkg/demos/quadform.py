"""Inner products of the estimator as quadratic forms in the raw data.

Builds the n x n matrices A_r whose quadratic forms reproduce the second-step
cross products, prints their traces, and checks the closed-form mean and
variance of Y'A_0Y against a small Monte Carlo run.
"""

import numpy as np

from odevarcoef.locpoly import SmootherConfig, TimeDesign
from odevarcoef.quadform import build_a_r, quad_moments, traces
from odevarcoef.sim import default_scenario, rng_stream, solve_trajectories

sc = default_scenario(n=400)
traj = solve_trajectories(sc)
design = TimeDesign(np.sort(rng_stream(sc.seed, 0).random(sc.n)))
cfg = SmootherConfig(h=0.15)

for r in range(3):
    tr = traces(build_a_r(design, cfg, 0.5, r))
    print(f"r={r}: tr(A)={tr['tr_a']: .3e}  tr(A^2)={tr['tr_a2']: .3e}  tr(AA')={tr['tr_aat']: .3e}")

A = build_a_r(design, cfg, 0.5, 0).dense()
x = traj.at(design.times)[0, 0]
sigma = 0.3
mom = quad_moments(A, None, x, sigma, 3 * sigma**4, True)
y = x + sigma * rng_stream(sc.seed, 1).standard_normal((20_000, design.n))
q = np.einsum("ij,jk,ik->i", y, A, y)
print(f"\nmean: closed form {mom.mean:.5f}, Monte Carlo {q.mean():.5f} +- {q.std() / np.sqrt(q.size):.5f}")
print(f"var:  closed form {mom.variance:.3e}, Monte Carlo {q.var(ddof=1):.3e}")
