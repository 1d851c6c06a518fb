"""Monte Carlo rate checks for the two-step estimator.

A sweep draws one time design per sample size, holds it fixed, and reruns
the full two-step pipeline over independent noise replicates for every
bandwidth. Cells sharing ``n`` share both the design and the noise draws
(common random numbers), which keeps fitted slopes across bandwidths
smooth. Noise for replicate ``k`` of repeat ``l`` at sample size ``n`` comes
from the stream ``(seed, 2, n, k, l)``; the design from ``(seed, 0, n)``,
or ``(seed, 0, n, k)`` when ``fixed_design`` is off.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import hashlib
import json
import math

import numpy as np

from .errors import ConfigError, OdeVarCoefError, RegimeNotCoveredError
from .estimator import StageTwoInput, estimate_beta
from .kernels import kernel_moment
from .locpoly import SmootherConfig, TimeDesign, equivalent_kernel_gap, weight_matrices
from .quadform import lemma3_suite
from .sim import Scenario, rng_stream, solve_trajectories

__all__ = [
    "SweepPlan",
    "RateReport",
    "REGIMES",
    "run_sweep",
    "fit_exponent",
    "verify_theorem1",
    "verify_lemma3",
    "verify_lemma2",
    "scenario_hash",
]

# regime -> (variable the slope is taken against, quantity, target slope)
REGIMES = {
    "bias_h2": ("h", "bias", 2.0),
    "bias_inv_nh2": ("h", "bias", -2.0),
    "var_n2h3": ("h", "var", -3.0),
    "var_inv_n": ("n", "var", -1.0),
}
TOL_STOCHASTIC = 0.35
TOL_NOISELESS = 0.25
FAIL_FRACTION = 0.2
MIN_VAR_REPLICATES = 100


def scenario_hash(scenario: Scenario) -> str:
    payload = json.dumps(_scenario_record(scenario), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _scenario_record(sc: Scenario) -> dict:
    return {
        "p": sc.p, "m": sc.m,
        "beta": [f.to_dict() for f in sc.beta_fns],
        "covariates": [[f.to_dict() for f in row] for row in sc.covariate_fns],
        "x1_init": list(sc.x1_init), "n": sc.n, "density": sc.density_id,
        "sigma": sc.sigma, "noise_dist": sc.noise_dist, "seed": sc.seed,
    }


@dataclass(frozen=True)
class SweepPlan:
    """A grid of ``(n, h)`` cells to simulate.

    Bandwidths come either from ``h_grid`` (absolute, crossed with every
    ``n``) or from ``h_rule = (c, gamma)`` giving ``h = c * n**gamma``.
    ``kernel`` and ``q`` configure both smoothing steps.
    """

    scenario: Scenario
    n_grid: tuple
    h_grid: tuple = ()
    h_rule: tuple | None = None
    t0: float = 0.5
    replicates: int = 200
    fixed_design: bool = True
    q: int = 2
    kernel: str = "epanechnikov"
    regime: str | None = None
    mandatory: bool = True
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "h_grid", tuple(float(h) for h in self.h_grid))
        if not self.n_grid:
            raise ConfigError("n_grid must be nonempty", path="n_grid")
        if bool(self.h_grid) == (self.h_rule is not None):
            raise ConfigError("give exactly one of h_grid and h_rule", path="h_grid")
        if self.replicates < 2:
            raise ConfigError("need at least 2 replicates", path="replicates")
        if self.scenario.sigma > 0 and self.replicates < MIN_VAR_REPLICATES:
            raise ConfigError(
                f"variance cells need at least {MIN_VAR_REPLICATES} replicates", path="replicates"
            )
        if self.regime is not None and self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}", path="regime")
        hmax = max(h for _, h in self.cells())
        if not (0 < hmax < 1) or not (hmax < self.t0 < 1 - hmax):
            raise ConfigError(
                f"t0={self.t0} must be interior for the largest bandwidth {hmax:.4g}", path="t0"
            )

    def cells(self) -> list[tuple[int, float]]:
        if self.h_rule is not None:
            c, gamma = self.h_rule
            return [(n, float(c) * n ** float(gamma)) for n in self.n_grid]
        return [(n, h) for n in self.n_grid for h in self.h_grid]


@dataclass
class RateReport:
    """Per-cell Monte Carlo summaries plus fitted log-log slopes."""

    cells: list
    fitted: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    CSV_COLUMNS = ("n", "h", "d", "mean_bias", "var", "mc_se_bias", "mc_se_var",
                   "failures", "design_hash")

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)

    def csv_rows(self):
        for c in self.cells:
            yield [c[k] for k in self.CSV_COLUMNS]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _design(plan: SweepPlan, n: int, replicate: int | None = None) -> TimeDesign:
    sc = plan.scenario
    key = (0, n) if replicate is None else (0, n, replicate)
    t = sc.density.sample(rng_stream(sc.seed, *key), n)
    return TimeDesign(np.sort(t), sc.density.id)


def _noise(plan: SweepPlan, n: int, replicate: int) -> np.ndarray:
    sc = plan.scenario
    eps = np.empty((sc.p, sc.m, n))
    for l in range(sc.m):
        rng = rng_stream(sc.seed, 2, n, replicate, l)
        if sc.noise_dist == "gaussian":
            eps[:, l] = rng.standard_normal((sc.p, n))
        else:
            eps[:, l] = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), (sc.p, n))
    return sc.sigma * eps


class _CellPipeline:
    """First-step weights restricted to the second-step window, for one design and bandwidth."""

    def __init__(self, design, truth_at_design, cfg, t0):
        self.cfg, self.t0 = cfg, t0
        sl = design.window(t0, cfg.h)
        self.sub = TimeDesign(design.times[sl], design.density_id)
        self.n = design.n
        self.W0, self.W1 = weight_matrices(design, cfg, self.sub.times, (0, 1))
        self.x = truth_at_design

    def estimate(self, y):
        p, m, n = y.shape
        xhat = (self.W0 @ y.reshape(p * m, n).T).T.reshape(p, m, -1)
        dhat = (self.W1 @ y[0].T).T
        return estimate_beta(StageTwoInput(self.sub, xhat, dhat, n_total=self.n), self.cfg, self.t0)


def _run_cell(plan: SweepPlan, traj, index: int, n: int, h: float) -> list[dict]:
    sc = plan.scenario
    cfg = SmootherConfig(h=h, q=plan.q, kernel=plan.kernel)
    beta_true = sc.beta(np.array([plan.t0]))[:, 0]
    R = plan.replicates
    est = np.full((R, sc.p), np.nan)
    failures = 0
    design_hash = None
    pipe = None
    errors = []
    for k in range(R):
        try:
            if pipe is None or not plan.fixed_design:
                design = _design(plan, n, None if plan.fixed_design else k)
                design_hash = design.digest() if plan.fixed_design else "per-replicate"
                x = traj.at(design.times)
                pipe = _CellPipeline(design, x, cfg, plan.t0)
            y = pipe.x + _noise(plan, n, k) if sc.sigma > 0 else pipe.x
            est[k] = pipe.estimate(y).beta
        except OdeVarCoefError as err:
            failures += 1
            errors.append(f"{type(err).__name__}: {err}")
            if plan.fixed_design and pipe is None:
                # the weights depend only on the design; every replicate would fail alike
                failures = R
                break
    ok = est[np.all(np.isfinite(est), axis=1)]
    failed = failures > FAIL_FRACTION * R
    out = []
    for d in range(sc.p):
        rec = {"cell": index, "n": n, "h": h, "d": d + 1, "replicates": int(ok.shape[0]),
               "failures": failures, "design_hash": design_hash or "", "status": "ok",
               "beta_true": float(beta_true[d])}
        if failed or ok.shape[0] < 2:
            rec.update(mean_bias=math.nan, var=math.nan, mc_se_bias=math.nan,
                       mc_se_var=math.nan, status="failed", error=errors[0] if errors else "")
        else:
            v = ok[:, d]
            var = float(np.var(v, ddof=1))
            m4 = float(np.mean((v - v.mean()) ** 4))
            rec.update(
                mean_bias=float(v.mean() - beta_true[d]),
                var=var,
                mc_se_bias=math.sqrt(var / v.size),
                mc_se_var=math.sqrt(max(m4 - var**2, 0.0) / v.size),
            )
        out.append(rec)
    return out


def run_sweep(plan: SweepPlan, threads: int = 1) -> RateReport:
    """Simulate every cell of ``plan`` and fit log-log slopes.

    Cells run on up to ``threads`` worker threads; results are collected
    in cell order, so the report does not depend on the thread count.
    """
    traj = solve_trajectories(plan.scenario)
    cells = plan.cells()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _run_cell(plan, traj, *a),
                                    [(i, n, h) for i, (n, h) in enumerate(cells)]))
    else:
        results = [_run_cell(plan, traj, i, n, h) for i, (n, h) in enumerate(cells)]
    recs = [r for cell in results for r in cell]
    report = RateReport(
        cells=recs,
        provenance={
            "seed": plan.scenario.seed,
            "scenario_hash": scenario_hash(plan.scenario),
            "scenario": _scenario_record(plan.scenario),
            "t0": plan.t0, "replicates": plan.replicates, "q": plan.q,
            "kernel": plan.kernel, "fixed_design": plan.fixed_design,
            "regime": plan.regime, "name": plan.name,
        },
    )
    report.fitted = _fit_all(report)
    return report


def _series(cells, var_name, fixed_value, quantity, d):
    other = "n" if var_name == "h" else "h"
    pts = [c for c in cells if c["d"] == d and c["status"] == "ok"
           and math.isclose(c[other], fixed_value, rel_tol=1e-12)]
    pts.sort(key=lambda c: c[var_name])
    key = "mean_bias" if quantity == "bias" else "var"
    return pts, [(c[var_name], abs(c[key])) for c in pts]


def _fit_all(report: RateReport) -> list:
    fits = []
    cells = report.cells
    for var_name, other in (("h", "n"), ("n", "h")):
        groups = sorted({c[other] for c in cells})
        for g in groups:
            for d in sorted({c["d"] for c in cells}):
                for quantity in ("bias", "var"):
                    _, pts = _series(cells, var_name, g, quantity, d)
                    if len({x for x, _ in pts}) < 3 or any(y <= 0 for _, y in pts):
                        continue
                    fit = fit_exponent(pts)
                    fits.append({"quantity": quantity, "against": var_name, other: g, "d": d, **fit})
    return fits


def fit_exponent(points, weights=None) -> dict:
    """Least-squares line through ``(log x, log y)``.

    Returns ``{"slope", "intercept", "se"}`` where ``se`` is the usual
    standard error of the slope (0 for an exact fit or three or fewer
    residual degrees of freedom being zero).

    Raises
    ------
    ValueError
        Fewer than three points or any nonpositive coordinate.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("need at least 3 (x, y) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("fit_exponent needs positive finite values")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    w = np.ones_like(lx) if weights is None else np.asarray(weights, dtype=float)
    xm = np.sum(w * lx) / w.sum()
    ym = np.sum(w * ly) / w.sum()
    sxx = np.sum(w * (lx - xm) ** 2)
    slope = np.sum(w * (lx - xm) * (ly - ym)) / sxx
    intercept = ym - slope * xm
    resid = ly - intercept - slope * lx
    dof = lx.size - 2
    se = math.sqrt(np.sum(w * resid**2) / dof / sxx) if dof > 0 else 0.0
    return {"slope": float(slope), "intercept": float(intercept), "se": float(se)}


def verify_theorem1(report: RateReport, regime: str, d: int | None = None, tol: float | None = None) -> dict:
    """Compare the fitted slope for one rate regime against its target.

    Slopes in ``h`` use the sample size with the most distinct bandwidths
    (largest on ties); slopes in ``n`` use the bandwidth with the most
    sample sizes. ``d`` (1-based) restricts to one coefficient; by default
    every coefficient must pass. The tolerance is 0.25 for noiseless
    reports and 0.35 otherwise.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    var_name, quantity, target = REGIMES[regime]
    other = "n" if var_name == "h" else "h"
    cells = [c for c in report.cells if c["status"] == "ok"]
    best = None
    for g in sorted({c[other] for c in cells}):
        k = len({c[var_name] for c in cells if c[other] == g})
        if k >= 3 and (best is None or k >= best[1]):
            best = (g, k)
    if best is None:
        raise RegimeNotCoveredError(
            f"{regime} needs at least 3 distinct {var_name} values at a fixed {other}"
        )
    noiseless = report.provenance.get("scenario", {}).get("sigma", 1.0) == 0.0
    if tol is None:
        tol = TOL_NOISELESS if noiseless else TOL_STOCHASTIC
    ds = [d] if d is not None else sorted({c["d"] for c in cells})
    per_d = []
    for dd in ds:
        used, pts = _series(cells, var_name, best[0], quantity, dd)
        if len(pts) < 3 or any(y <= 0 for _, y in pts):
            per_d.append({"d": dd, "slope": None, "se": None, "pass": False,
                          "reason": "nonpositive or missing cells"})
            continue
        fit = fit_exponent(pts)
        per_d.append({"d": dd, **fit, "pass": abs(fit["slope"] - target) <= tol})
    return {
        "regime": regime,
        "against": var_name,
        other: best[0],
        "target": target,
        "tol": tol,
        "fits": per_d,
        "slope": per_d[0]["slope"] if len(per_d) == 1 else None,
        "pass": all(f["pass"] for f in per_d),
        "cells": [c for c in cells if math.isclose(c[other], best[0], rel_tol=1e-12)],
    }


LEMMA3_TARGETS = {"tr_a": lambda r: r - 1, "tr_a2": lambda r: 2 * r - 1, "tr_aat": lambda r: 2 * r - 1}


def _lemma3_scales(n, h, r, mu_r, f0, xd0, dx10):
    """Normalized remainders for items (iv)-(vi)."""
    return {
        "x_a_x": lambda v: abs(v - n * h ** (r + 1) * f0 * xd0 * dx10 * mu_r) / (n * h ** (r + 3)),
        "x_aat_x": lambda v: abs(v) / (h ** (2 * r - 1) + n * h**2),
        "x_ata_x": lambda v: abs(v) / (h ** (2 * r - 1) + n * h**2),
    }


def verify_lemma3(scenario: Scenario, n: int, h_grid, r_values=(0, 1, 2), t0: float = 0.5,
                  seeds=range(20), q: int = 2, kernel: str = "epanechnikov",
                  d: int = 0, l: int = 0, tol: float = 0.3) -> dict:
    """Fitted trace exponents and remainder ratios of ``A_r`` across bandwidths.

    For every ``r`` and bandwidth the six scalars of
    :func:`~odevarcoef.quadform.lemma3_suite` are computed on one design
    per seed and reduced by the median of absolute values. Items (i)-(iii)
    pass when the log-log slope against ``h`` is within ``tol`` of
    ``r - 1``, ``2r - 1`` and ``2r - 1``. Items (iv)-(vi) are remainder
    ratios (see ``_lemma3_scales``) that must stay bounded as ``h``
    shrinks: their slope against ``h`` must be at least ``-tol``.
    """
    traj = solve_trajectories(scenario)
    dens = scenario.density
    f0 = float(dens.pdf(t0))
    x0 = traj.at(np.array([t0]))[:, :, 0]
    dx0 = traj.deriv1_at(np.array([t0]))[:, 0]
    h_grid = [float(h) for h in h_grid]
    raw = {r: {h: [] for h in h_grid} for r in r_values}
    for s in seeds:
        design = TimeDesign(np.sort(dens.sample(rng_stream(scenario.seed, 3, n, s), n)), dens.id)
        for h in h_grid:
            cfg = SmootherConfig(h=h, q=q, kernel=kernel)
            for r in r_values:
                raw[r][h].append(lemma3_suite(design, cfg, traj, t0, r, d=d, l=l))
    items = []
    for r in r_values:
        mu_r = kernel_moment(kernel, r)
        for key, tgt in LEMMA3_TARGETS.items():
            med = [float(np.median([abs(v[key]) for v in raw[r][h]])) for h in h_grid]
            fit = _safe_fit(h_grid, med)
            target = tgt(r)
            items.append({"item": key, "r": r, "target": target, "medians": med, **fit,
                          "pass": fit["slope"] is not None and abs(fit["slope"] - target) <= tol})
        for key in ("x_a_x", "x_aat_x", "x_ata_x"):
            ratios = []
            for h in h_grid:
                scale = _lemma3_scales(n, h, r, mu_r, f0, x0[d, l], dx0[l])[key]
                ratios.append(float(np.median([scale(v[key]) for v in raw[r][h]])))
            fit = _safe_fit(h_grid, ratios)
            items.append({"item": key, "r": r, "target": "bounded", "medians": ratios, **fit,
                          "pass": fit["slope"] is not None and fit["slope"] >= -tol})
    return {"n": n, "h_grid": h_grid, "t0": t0, "tol": tol, "items": items,
            "pass": all(i["pass"] for i in items)}


def _safe_fit(x, y):
    try:
        return fit_exponent(list(zip(x, y)))
    except ValueError:
        return {"slope": None, "intercept": None, "se": None}


def verify_lemma2(density_id: str, n_grid, nu: int, h_rule=(1.0, -0.2), t0: float = 0.5,
                  q: int = 2, kernel: str = "epanechnikov", seeds=range(20), seed: int = 0) -> dict:
    """Median equivalent-kernel gap across sample sizes.

    Passes when the sequence of medians decreases with at most one
    inversion.
    """
    from .sim import Density

    dens = Density(density_id)
    f0 = float(dens.pdf(t0))
    c, gamma = h_rule
    medians = []
    for n in n_grid:
        cfg = SmootherConfig(h=c * n**gamma, q=q, kernel=kernel)
        gaps = []
        for s in seeds:
            design = TimeDesign(np.sort(dens.sample(rng_stream(seed, 4, n, s), n)), dens.id)
            gaps.append(equivalent_kernel_gap(design, cfg, t0, nu, f0))
        medians.append(float(np.median(gaps)))
    inversions = int(sum(b >= a for a, b in zip(medians, medians[1:])))
    return {"density": density_id, "nu": nu, "n_grid": list(n_grid), "medians": medians,
            "inversions": inversions, "pass": inversions <= 1 and medians[-1] < medians[0]}
