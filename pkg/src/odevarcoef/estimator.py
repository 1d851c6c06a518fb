"""Second-step local regression of the smoothed derivative on smoothed states.

Rows of the regression are indexed repeat-major, time-minor: row
``l * n + i`` belongs to repeat ``l`` at time ``t_i``. Columns are grouped
by state: column ``d * (q + 1) + r`` multiplies ``Xhat_d(t_i) (t_i - t0)**r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InsufficientLocalDataError, OdeVarCoefError, SingularMatrixError
from .kernels import moment_matrix
from .locpoly import SmootherConfig, TimeDesign, smooth_all

__all__ = [
    "StageTwoInput",
    "BetaEstimate",
    "stage_two_input",
    "build_z",
    "estimate_beta",
    "estimate_beta_curve",
    "ztwz_limit_gap",
]

RCOND_MIN = 1e-12


@dataclass(frozen=True)
class StageTwoInput:
    """Smoothed states ``xhat[d, l, i]`` and derivatives ``x1deriv_hat[l, i]`` at ``design.times``.

    ``n_total`` is the size of the full sample the smoother saw; it differs
    from ``design.n`` when the input was restricted to a window.
    """

    design: TimeDesign
    xhat: np.ndarray
    x1deriv_hat: np.ndarray
    n_total: int | None = None

    def __post_init__(self):
        xhat = np.asarray(self.xhat, dtype=float)
        dx = np.asarray(self.x1deriv_hat, dtype=float)
        if xhat.ndim != 3 or xhat.shape[2] != self.design.n:
            raise ValueError(f"xhat must have shape (p, m, {self.design.n}), got {xhat.shape}")
        if dx.shape != xhat.shape[1:]:
            raise ValueError(f"x1deriv_hat must have shape {xhat.shape[1:]}, got {dx.shape}")
        if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(dx))):
            raise ValueError("stage-two inputs must be finite")
        object.__setattr__(self, "xhat", xhat)
        object.__setattr__(self, "x1deriv_hat", dx)
        if self.n_total is None:
            object.__setattr__(self, "n_total", self.design.n)

    @property
    def p(self) -> int:
        return self.xhat.shape[0]

    @property
    def m(self) -> int:
        return self.xhat.shape[1]


@dataclass(frozen=True)
class BetaEstimate:
    """Second-step fit at ``t0``.

    ``local_coeffs[d, r]`` is the coefficient of ``(t - t0)**r`` in the
    local expansion of ``beta_d``; ``beta`` is its ``r = 0`` column.
    ``cond`` is the condition number of the bandwidth-normalized normal
    matrix and ``n_eff`` the number of rows with positive kernel weight.
    ``error`` is set (and the numeric fields are NaN) when the fit failed
    inside :func:`estimate_beta_curve`.
    """

    t0: float
    beta: np.ndarray
    local_coeffs: np.ndarray
    cond: float
    n_eff: int
    error: str | None = field(default=None)

    @property
    def ok(self) -> bool:
        return self.error is None


def stage_two_input(design: TimeDesign, obs, cfg: SmootherConfig, t0: float | None = None,
                    h2: float | None = None) -> StageTwoInput:
    """Run the first-step smoother ``cfg`` at the design times.

    With ``t0`` given, only the times within the second-step half-width
    ``h2`` (default ``cfg.h``) of ``t0`` are smoothed and the returned input
    lives on that sub-design; rows outside the window carry zero weight, so
    the estimate at ``t0`` is unchanged.
    """
    y = np.asarray(getattr(obs, "y", obs), dtype=float)
    if t0 is None:
        sm = smooth_all(design, y, cfg, design.times)
        return StageTwoInput(design, sm.values, sm.deriv1)
    sl = design.window(t0, cfg.h if h2 is None else h2)
    sub = TimeDesign(design.times[sl], design.density_id)
    sm = smooth_all(design, y, cfg, sub.times)
    return StageTwoInput(sub, sm.values, sm.deriv1, n_total=design.n)


def _basis(times, t0, q, scale=1.0):
    return np.vander((times - t0) / scale, q + 1, increasing=True)


def build_z(inp: StageTwoInput, cfg: SmootherConfig, t0: float):
    """Second-step design matrix and diagonal of the weight matrix.

    Returns
    -------
    Z : ndarray, shape (m n, p (q+1))
    w : ndarray, shape (m n,)
        Kernel weights ``K((t_i - t0) / h)`` tiled over repeats.
    """
    return _build_z(inp, cfg, t0, scale=1.0)


def _build_z(inp, cfg, t0, scale):
    t = inp.design.times
    T = _basis(t, t0, cfg.q, scale)                        # (n, q+1)
    # (p, m, n, q+1) -> rows (l, i), columns (d, r)
    Z = np.einsum("dli,ir->lidr", inp.xhat, T).reshape(inp.m * t.size, inp.p * (cfg.q + 1))
    w = np.tile(cfg.kernel((t - t0) / cfg.h), inp.m)
    return Z, w


def estimate_beta(inp: StageTwoInput, cfg: SmootherConfig, t0: float) -> BetaEstimate:
    """Locally weighted least-squares estimate of ``beta(t0)``.

    The solve is a column-pivoted QR of the square-root-weighted design,
    with polynomial columns in ``(t - t0) / h``.

    Raises
    ------
    InsufficientLocalDataError
        Fewer than ``p (q + 1)`` rows with positive weight.
    SingularMatrixError
        Reciprocal condition of the normal matrix below 1e-12.
    """
    q, p = cfg.q, inp.p
    ncol = p * (q + 1)
    Z, w = _build_z(inp, cfg, t0, scale=cfg.h)
    yhat = inp.x1deriv_hat.reshape(-1)
    keep = w > 0
    n_eff = int(np.count_nonzero(keep))
    if n_eff < ncol:
        raise InsufficientLocalDataError(
            f"{n_eff} weighted rows around t0={t0:.6g}; need at least {ncol}"
        )
    sw = np.sqrt(w[keep])
    Q, R, piv = linalg.qr(sw[:, None] * Z[keep], mode="economic", pivoting=True)
    s = linalg.svdvals(R)
    if s[-1] == 0.0 or (s[-1] / s[0]) ** 2 < RCOND_MIN:
        raise SingularMatrixError(
            f"second-step normal equations singular at t0={t0:.6g} "
            "(bandwidth too small, collinear states, or states near zero)"
        )
    coef = np.empty(ncol)
    coef[piv] = linalg.solve_triangular(R, Q.T @ (sw * yhat[keep]))
    local = coef.reshape(p, q + 1) / cfg.h ** np.arange(q + 1)
    return BetaEstimate(float(t0), local[:, 0].copy(), local, float((s[0] / s[-1]) ** 2), n_eff)


def estimate_beta_curve(inp: StageTwoInput, cfg: SmootherConfig, eval_points) -> list[BetaEstimate]:
    """:func:`estimate_beta` over many points; failures are recorded, not raised."""
    out = []
    nan_local = np.full((inp.p, cfg.q + 1), np.nan)
    for t0 in np.asarray(eval_points, dtype=float).ravel():
        try:
            out.append(estimate_beta(inp, cfg, t0))
        except OdeVarCoefError as err:
            out.append(BetaEstimate(float(t0), nan_local[:, 0].copy(), nan_local.copy(),
                                    np.nan, 0, error=f"{type(err).__name__}: {err}"))
    return out


def ztwz_limit_gap(inp: StageTwoInput, truth, cfg: SmootherConfig, t0: float, f_at_t0: float) -> float:
    """Relative spectral-norm distance of ``Z'WZ`` from its large-sample limit.

    The limit is ``n h f(t0) [(sum_l X_l(t0) X_l(t0)^T) kron (H S H)]`` with
    ``H = diag(1, h, ..., h^q)``. Both matrices are normalized by
    ``I_p kron H^{-1}`` on each side before comparison so every block
    contributes on the same scale.
    """
    Z, w = _build_z(inp, cfg, t0, scale=cfg.h)
    keep = w > 0
    if np.count_nonzero(keep) < inp.p * (cfg.q + 1):
        raise InsufficientLocalDataError(f"too few weighted rows around t0={t0:.6g}")
    M = (Z[keep] * w[keep, None]).T @ Z[keep]
    x0 = truth.at(np.array([t0]))[:, :, 0]                 # (p, m)
    L = inp.n_total * cfg.h * f_at_t0 * np.kron(x0 @ x0.T, moment_matrix(cfg.kernel, cfg.q))
    return float(np.linalg.norm(M - L, 2) / np.linalg.norm(L, 2))
