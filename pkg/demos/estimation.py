"""Recover time-varying coefficients from noisy observations.

Runs the two-step estimator across the interior of [0, 1] and prints the
estimate beside the true coefficient for each state.
"""

import numpy as np

from odevarcoef.estimator import estimate_beta_curve, stage_two_input
from odevarcoef.locpoly import SmootherConfig
from odevarcoef.sim import default_scenario, observe, sample_design, solve_trajectories

sc = default_scenario(n=4000, sigma=0.02)
traj = solve_trajectories(sc)
design = sample_design(sc)
obs = observe(traj, design, sc)

cfg = SmootherConfig(h=0.12)
inp = stage_two_input(design, obs, cfg)
grid = np.linspace(0.0, 1.0, 11)
curve = estimate_beta_curve(inp, cfg, grid)
truth = sc.beta(grid)

print("   t   " + "".join(f"  beta_{d + 1}   est_{d + 1}  " for d in range(sc.p)))
for k, est in enumerate(curve):
    if not est.ok:
        print(f"{est.t0:5.2f}  failed: {est.error.split(':')[0]}")
        continue
    cells = "".join(f"{truth[d, k]:8.3f} {est.beta[d]:8.3f}  " for d in range(sc.p))
    print(f"{est.t0:5.2f}  {cells} cond={est.cond:.1e}")
