"""Estimate the variance exponent of the coefficient estimator in h.

Holds n fixed, shrinks the bandwidth, and fits the log-log slope of the
Monte Carlo variance. The small-bandwidth regime should give a slope near -3.
"""

from odevarcoef.asymptotics import SweepPlan, run_sweep, verify_theorem1
from odevarcoef.sim import default_scenario

plan = SweepPlan(
    scenario=default_scenario(n=1000, sigma=0.05),
    n_grid=(1000,),
    h_grid=(0.06, 0.08, 0.1, 0.13, 0.16),
    replicates=200,
    regime="var_n2h3",
)
report = run_sweep(plan)
for c in report.cells:
    print(f"h={c['h']:.2f} d={c['d']}  var={c['var']:.3e}  mc_se={c['mc_se_var']:.1e}")
verdict = verify_theorem1(report, "var_n2h3")
for f in verdict["fits"]:
    print(f"d={f['d']}: slope {f['slope']:.2f} (target {verdict['target']} +- {verdict['tol']})")
