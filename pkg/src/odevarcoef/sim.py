"""Synthetic trajectories, random time designs and noisy observations.

Only the first state is integrated; the remaining states are exogenous
smooth covariates given in closed form. Randomness is drawn from
``numpy.random.SeedSequence`` streams keyed by the scenario seed and a
spawn key, so every stream is reproducible and disjoint from the others:

* ``(0,)``                   time design
* ``(1, replicate, l)``      measurement noise of repeat ``l``
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import re

import numpy as np
from scipy import interpolate

from .errors import ConfigError, NonfiniteStateError
from .locpoly import TimeDesign

__all__ = [
    "FunctionSpec",
    "Density",
    "Scenario",
    "TrajectorySet",
    "ObservationSet",
    "solve_trajectories",
    "sample_design",
    "observe",
    "noise_fourth_moment",
    "rng_stream",
    "default_scenario",
]

GRID_STEPS = 4096
BLOWUP = 1e12
NOISE_DISTS = ("gaussian", "uniform")


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class FunctionSpec:
    """Smooth scalar function of time from a small closed library.

    ========== ====================== =================================
    kind       coeffs                 value
    ========== ====================== =================================
    constant   [c]                    c
    linear     [a, b]                 a + b t
    polynomial [c0, ..., ck], k <= 4  sum_j cj t**j
    sin        [A, k, (phase, off)]   off + A sin(2 pi k t + phase), k in 1..4
    cos        [A, k, (phase, off)]   off + A cos(2 pi k t + phase), k in 1..4
    exp        [A, a], abs(a) <= 3    A exp(a t)
    ========== ====================== =================================
    """

    kind: str
    coeffs: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        object.__setattr__(self, "coeffs", c)
        kind = self.kind
        if kind == "constant":
            ok = len(c) == 1
        elif kind == "linear":
            ok = len(c) == 2
        elif kind == "polynomial":
            ok = 1 <= len(c) <= 5
        elif kind in ("sin", "cos"):
            ok = 2 <= len(c) <= 4 and c[1] == int(c[1]) and 1 <= c[1] <= 4
        elif kind == "exp":
            ok = len(c) == 2 and abs(c[1]) <= 3
        else:
            raise ConfigError(f"unknown function kind {kind!r}", path="kind")
        if not ok or not all(np.isfinite(c)):
            raise ConfigError(f"invalid coefficients {list(c)} for kind {kind!r}", path="coeffs")

    @classmethod
    def from_dict(cls, d) -> "FunctionSpec":
        if isinstance(d, (int, float)):
            return cls("constant", (d,))
        try:
            return cls(d["kind"], tuple(d["coeffs"]))
        except (KeyError, TypeError) as err:
            raise ConfigError(f"function spec needs 'kind' and 'coeffs': {d!r}") from err

    def to_dict(self):
        return {"kind": self.kind, "coeffs": list(self.coeffs)}

    def __call__(self, t, deriv: int = 0):
        t = np.asarray(t, dtype=float)
        c = self.coeffs
        if self.kind in ("constant", "linear", "polynomial"):
            poly = np.polynomial.Polynomial(c)
            return poly.deriv(deriv)(t) if deriv else poly(t) + 0.0 * t
        if self.kind in ("sin", "cos"):
            w = 2.0 * np.pi * c[1]
            phase = c[2] if len(c) > 2 else 0.0
            offset = c[3] if len(c) > 3 and deriv == 0 else 0.0
            shift = phase + (0.0 if self.kind == "sin" else 0.5 * np.pi) + 0.5 * np.pi * deriv
            return offset + c[0] * w**deriv * np.sin(w * t + shift)
        return c[0] * c[1] ** deriv * np.exp(c[1] * t)


@dataclass(frozen=True)
class Density:
    """Sampling density of the observation times on [0, 1].

    ``"uniform"`` or ``"beta_like(a,b)"``: the equal mixture of the uniform
    density and Beta(a, b), a, b >= 1, which keeps the density bounded away
    from zero.
    """

    id: str = "uniform"
    a: float = field(default=1.0, init=False)
    b: float = field(default=1.0, init=False)

    def __post_init__(self):
        if self.id == "uniform":
            return
        m = re.fullmatch(r"beta_like\(\s*([0-9.eE+-]+)\s*,\s*([0-9.eE+-]+)\s*\)", self.id)
        if not m:
            raise ConfigError(f"unknown density {self.id!r}", path="sampling.density")
        a, b = float(m.group(1)), float(m.group(2))
        if a < 1 or b < 1:
            raise ConfigError("beta_like parameters must be >= 1", path="sampling.density")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def pdf(self, t):
        from scipy import stats

        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= 1)
        if self.id == "uniform":
            return np.where(inside, 1.0, 0.0)
        return np.where(inside, 0.5 + 0.5 * stats.beta.pdf(t, self.a, self.b), 0.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.id == "uniform":
            return rng.random(n)
        u = rng.random(n)
        b = rng.beta(self.a, self.b, n)
        return np.where(rng.random(n) < 0.5, u, b)


@dataclass(frozen=True)
class Scenario:
    """Complete description of one simulated experiment.

    ``covariate_fns[l][d - 2]`` is the exogenous state ``X_{d,l}`` for
    ``d = 2..p``. A single list of ``p - 1`` specs is broadcast to all
    repeats.
    """

    p: int
    m: int
    beta_fns: tuple
    covariate_fns: tuple
    x1_init: tuple
    n: int
    density_id: str = "uniform"
    sigma: float = 0.0
    noise_dist: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        p, m = int(self.p), int(self.m)
        if p < 1:
            raise ConfigError("p must be >= 1", path="model.p")
        if m < 1:
            raise ConfigError("m must be >= 1", path="model.m")
        beta = tuple(_as_spec(f) for f in self.beta_fns)
        if len(beta) != p:
            raise ConfigError(f"expected {p} beta functions, got {len(beta)}", path="model.beta")
        cov = tuple(self.covariate_fns)
        if cov and not isinstance(cov[0], (list, tuple)):
            cov = tuple(tuple(cov) for _ in range(m))
        cov = tuple(tuple(_as_spec(f) for f in row) for row in cov)
        if p == 1 and not cov:
            cov = tuple(() for _ in range(m))
        if len(cov) != m or any(len(row) != p - 1 for row in cov):
            raise ConfigError(
                f"covariates must give {p - 1} functions for each of {m} repeats",
                path="model.covariates",
            )
        x1 = tuple(float(v) for v in np.atleast_1d(self.x1_init))
        if len(x1) == 1 and m > 1:
            x1 = x1 * m
        if len(x1) != m:
            raise ConfigError(f"x1_init needs {m} values", path="model.x1_init")
        if int(self.n) < 3:
            raise ConfigError("n must be >= 3", path="sampling.n")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError("sigma must be >= 0", path="noise.sigma")
        if self.noise_dist not in NOISE_DISTS:
            raise ConfigError(f"noise dist must be one of {NOISE_DISTS}", path="noise.dist")
        Density(self.density_id)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "beta_fns", beta)
        object.__setattr__(self, "covariate_fns", cov)
        object.__setattr__(self, "x1_init", x1)

    @property
    def density(self) -> Density:
        return Density(self.density_id)

    def beta(self, t) -> np.ndarray:
        """True coefficients, shape ``(p,) + shape(t)``."""
        return np.stack([np.broadcast_to(f(t), np.shape(t)) for f in self.beta_fns])

    def covariates(self, t, deriv: int = 0) -> np.ndarray:
        """Exogenous states, shape ``(p - 1, m) + shape(t)``."""
        t = np.asarray(t, dtype=float)
        out = np.empty((self.p - 1, self.m) + t.shape)
        for l, row in enumerate(self.covariate_fns):
            for j, f in enumerate(row):
                out[j, l] = f(t, deriv)
        return out

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


def _as_spec(f):
    return f if isinstance(f, FunctionSpec) else FunctionSpec.from_dict(f)


def noise_fourth_moment(dist: str, sigma: float) -> float:
    """``E eps**4`` of the zero-mean noise family with standard deviation ``sigma``."""
    if dist == "gaussian":
        return 3.0 * sigma**4
    if dist == "uniform":
        return 1.8 * sigma**4
    raise ConfigError(f"unknown noise dist {dist!r}", path="noise.dist")


@dataclass(frozen=True)
class TrajectorySet:
    """True states tabulated on the integration grid.

    ``states[d, l, g]`` and ``deriv_x1[l, g]`` at ``grid[g]``.
    """

    grid: np.ndarray
    states: np.ndarray
    deriv_x1: np.ndarray
    scenario: Scenario = field(repr=False)

    def at(self, t) -> np.ndarray:
        """States at arbitrary times, shape ``(p, m, len(t))``.

        The integrated state uses cubic Hermite interpolation of the grid
        values and slopes; covariates are evaluated in closed form.
        """
        t = np.asarray(t, dtype=float)
        sc = self.scenario
        out = np.empty((sc.p, sc.m) + t.shape)
        spline = interpolate.CubicHermiteSpline(self.grid, self.states[0], self.deriv_x1, axis=1)
        out[0] = spline(t)
        if sc.p > 1:
            out[1:] = sc.covariates(t)
        return out

    def deriv1_at(self, t) -> np.ndarray:
        """``X_1l'(t)`` from the ODE right-hand side, shape ``(m, len(t))``."""
        x = self.at(t)
        beta = self.scenario.beta(t)
        return np.einsum("d...,dl...->l...", beta, x)


@dataclass(frozen=True)
class ObservationSet:
    """Noisy samples ``y[d, l, i] = X_dl(t_i) + eps_dli``."""

    design: TimeDesign
    y: np.ndarray
    sigma: float
    seed: int
    noise_dist: str = "gaussian"
    replicate: int = 0

    @property
    def fourth_moment(self) -> float:
        return noise_fourth_moment(self.noise_dist, self.sigma)


def solve_trajectories(scenario: Scenario) -> TrajectorySet:
    """Integrate the first state with classical RK4 on a 4097-point grid.

    Raises
    ------
    NonfiniteStateError
        If any state exceeds 1e12 in magnitude.
    """
    sc = scenario
    grid = np.linspace(0.0, 1.0, GRID_STEPS + 1)
    dt = 1.0 / GRID_STEPS
    half = grid[:-1] + 0.5 * dt

    def coeffs(t):
        # beta_1(t), and the exogenous forcing sum_{d>=2} beta_d X_d for every repeat
        b = sc.beta(t)
        forcing = np.einsum("d...,dl...->l...", b[1:], sc.covariates(t)) if sc.p > 1 else 0.0
        return b[0], forcing

    b_grid, f_grid = coeffs(grid)
    b_half, f_half = coeffs(half)
    f_grid = np.broadcast_to(f_grid, (sc.m, grid.size))
    f_half = np.broadcast_to(f_half, (sc.m, half.size))

    x = np.empty((sc.m, grid.size))
    x[:, 0] = sc.x1_init
    for g in range(GRID_STEPS):
        xg = x[:, g]
        k1 = b_grid[g] * xg + f_grid[:, g]
        k2 = b_half[g] * (xg + 0.5 * dt * k1) + f_half[:, g]
        k3 = b_half[g] * (xg + 0.5 * dt * k2) + f_half[:, g]
        k4 = b_grid[g + 1] * (xg + dt * k3) + f_grid[:, g + 1]
        x[:, g + 1] = xg + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.abs(x[:, g + 1]) <= BLOWUP):
            raise NonfiniteStateError(f"state X_1 exceeded {BLOWUP:g} at t={grid[g + 1]:.6g}")

    states = np.empty((sc.p, sc.m, grid.size))
    states[0] = x
    if sc.p > 1:
        states[1:] = sc.covariates(grid)
        if not np.all(np.abs(states[1:]) <= BLOWUP):
            raise NonfiniteStateError(f"covariate exceeded {BLOWUP:g}")
    deriv = b_grid * x + f_grid
    for arr in (grid, states, deriv):
        arr.setflags(write=False)
    return TrajectorySet(grid, states, deriv, sc)


def sample_design(scenario: Scenario) -> TimeDesign:
    """Draw ``n`` iid observation times from the scenario density and sort them."""
    dens = scenario.density
    t = dens.sample(rng_stream(scenario.seed, 0), scenario.n)
    return TimeDesign(np.sort(t), density_id=dens.id)


def draw_noise(scenario: Scenario, n: int, replicate: int = 0) -> np.ndarray:
    """Noise array of shape ``(p, m, n)``; repeat ``l`` uses its own stream."""
    sc = scenario
    eps = np.empty((sc.p, sc.m, n))
    for l in range(sc.m):
        rng = rng_stream(sc.seed, 1, replicate, l)
        if sc.noise_dist == "gaussian":
            eps[:, l] = rng.standard_normal((sc.p, n))
        else:
            eps[:, l] = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), (sc.p, n))
    return sc.sigma * eps


def observe(
    traj: TrajectorySet, design: TimeDesign, scenario: Scenario, replicate: int = 0
) -> ObservationSet:
    """Add iid noise to the true states at the design times."""
    truth = traj.at(design.times)
    y = truth + draw_noise(scenario, design.n, replicate) if scenario.sigma > 0 else truth
    return ObservationSet(design, y, scenario.sigma, scenario.seed, scenario.noise_dist, replicate)


def default_scenario(**overrides) -> Scenario:
    """Two-state, three-repeat scenario used by the demos and the rate sweeps.

    ``beta_1(t) = cos(2 pi t)``, ``beta_2(t) = 1 + t``, covariate
    ``X_2(t) = 2 + cos(2 pi t)`` shared by all repeats, and initial values
    ``X_1(0) = 1, 2, 3``.
    """
    base = dict(
        p=2,
        m=3,
        beta_fns=(FunctionSpec("cos", (1.0, 1.0)), FunctionSpec("linear", (1.0, 1.0))),
        covariate_fns=(FunctionSpec("cos", (1.0, 1.0, 0.0, 2.0)),),
        x1_init=(1.0, 2.0, 3.0),
        n=1000,
        density_id="uniform",
        sigma=0.05,
        noise_dist="gaussian",
        seed=20240601,
    )
    base.update(overrides)
    return Scenario(**base)
