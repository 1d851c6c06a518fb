"""First-step local polynomial smoothing of states and derivatives.

Every estimator here is linear in the observations: the value (``nu=0``) or
first derivative (``nu=1``) at a center ``t0`` is ``sum_i w_i y_i`` with
weights depending only on the design, the kernel and the bandwidth. The
weights are computed by a column-pivoted QR factorization of the
square-root-weighted local design, with the polynomial columns written in
the rescaled variable ``(t_i - t0) / h`` so the factorization stays well
conditioned for small bandwidths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy import linalg, sparse

from .errors import ConfigError, InsufficientLocalDataError, SingularMatrixError
from .kernels import Kernel, get_kernel, equivalent_kernel

__all__ = [
    "TimeDesign",
    "SmootherConfig",
    "SmoothedState",
    "local_fit",
    "local_weights",
    "weight_w_nu",
    "weight_matrix",
    "weight_matrices",
    "smooth_all",
    "equivalent_kernel_gap",
]

MIN_WEIGHT = 1e-12
RCOND_MIN = 1e-12


@dataclass(frozen=True)
class TimeDesign:
    """Sorted observation times in [0, 1].

    Parameters
    ----------
    times : array_like
        Observation times; sorted on construction.
    density_id : str
        Descriptor of the sampling density, for reporting only.
    """

    times: np.ndarray
    density_id: str = "unknown"
    has_ties: bool = field(init=False)

    def __post_init__(self):
        t = np.sort(np.asarray(self.times, dtype=float).ravel())
        if t.size == 0:
            raise ConfigError("design has no time points", path="times")
        if not np.all(np.isfinite(t)) or t[0] < 0.0 or t[-1] > 1.0:
            raise ConfigError("all times must lie in [0, 1]", path="times")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        ties = bool(np.any(np.diff(t) == 0.0))
        object.__setattr__(self, "has_ties", ties)
        if ties:
            warnings.warn("TimeDesign contains tied observation times", stacklevel=2)

    @property
    def n(self) -> int:
        return self.times.size

    def window(self, t0: float, h: float) -> slice:
        """Index slice of the times with ``|t_i - t0| <= h``."""
        lo = np.searchsorted(self.times, t0 - h, side="left")
        hi = np.searchsorted(self.times, t0 + h, side="right")
        return slice(int(lo), int(hi))

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(self.times.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class SmootherConfig:
    """Local polynomial settings shared by both estimation steps.

    ``q`` is the polynomial order (default 2, local quadratic), ``h`` the
    window half-width in time units and ``kernel`` a kernel id or instance.
    ``q = 0`` is accepted for second-step fits; anything that estimates a
    slope needs ``q >= 1``.
    """

    h: float
    q: int = 2
    kernel: Kernel = "epanechnikov"

    def __post_init__(self):
        object.__setattr__(self, "kernel", get_kernel(self.kernel))
        if int(self.q) != self.q or self.q < 0:
            raise ConfigError("q must be a nonnegative integer", path="smoother.q")
        object.__setattr__(self, "q", int(self.q))
        if not (0.0 < float(self.h) < 1.0):
            raise ConfigError("bandwidth must satisfy 0 < h < 1", path="smoother.h")
        object.__setattr__(self, "h", float(self.h))


@dataclass(frozen=True)
class SmoothedState:
    """Smoothed states ``values[d, l, k]`` and ``deriv1[l, k]`` at ``eval_points[k]``."""

    eval_points: np.ndarray
    values: np.ndarray
    deriv1: np.ndarray


def _local_system(design: TimeDesign, cfg: SmootherConfig, t0: float):
    """Window indices, kernel weights and QR pieces of the scaled local design."""
    sl = design.window(t0, cfg.h)
    u = (design.times[sl] - t0) / cfg.h
    k = cfg.kernel(u)
    keep = k > MIN_WEIGHT
    if np.count_nonzero(keep) < cfg.q + 1:
        raise InsufficientLocalDataError(
            f"only {np.count_nonzero(keep)} points with positive weight around "
            f"t0={t0:.6g} (h={cfg.h:.6g}); need at least {cfg.q + 1}"
        )
    idx = np.arange(sl.start, sl.stop)[keep]
    u, k = u[keep], k[keep]
    sw = np.sqrt(k)
    B = sw[:, None] * np.vander(u, cfg.q + 1, increasing=True)
    Q, R, piv = linalg.qr(B, mode="economic", pivoting=True)
    s = linalg.svdvals(R)
    # rcond of the (scaled) normal matrix T'WT is the square of that of R
    if s[-1] == 0.0 or (s[-1] / s[0]) ** 2 < RCOND_MIN:
        raise SingularMatrixError(
            f"local design is singular around t0={t0:.6g} (h={cfg.h:.6g})"
        )
    return idx, sw, Q, R, piv


def _coef_operator(design, cfg, t0):
    """Rows map the windowed observations to the q+1 Taylor coefficients."""
    idx, sw, Q, R, piv = _local_system(design, cfg, t0)
    G = np.empty((cfg.q + 1, idx.size))
    G[piv] = linalg.solve_triangular(R, Q.T) * sw
    G /= (cfg.h ** np.arange(cfg.q + 1))[:, None]
    return idx, G


def local_fit(design: TimeDesign, y, cfg: SmootherConfig, t0: float) -> np.ndarray:
    """Weighted least-squares local polynomial fit around ``t0``.

    Returns
    -------
    ndarray, shape (q+1,)
        Taylor coefficients ``(a_0, ..., a_q)`` of the fitted polynomial in
        ``t - t0``; ``a_0`` estimates the value and ``a_1`` the slope.

    Raises
    ------
    InsufficientLocalDataError
        Fewer than ``q + 1`` points with positive kernel weight.
    SingularMatrixError
        The weighted local design is numerically singular.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"y must have shape ({design.n},), got {y.shape}")
    idx, G = _coef_operator(design, cfg, t0)
    return G @ y[idx]


def local_weights(design: TimeDesign, cfg: SmootherConfig, t0: float, nu: int):
    """Sparse form of :func:`weight_w_nu`: ``(indices, weights)`` on the window."""
    if nu not in (0, 1) or nu > cfg.q:
        raise ValueError(f"nu must be 0 or 1 and at most q={cfg.q}")
    idx, G = _coef_operator(design, cfg, t0)
    return idx, G[nu]


def weight_w_nu(design: TimeDesign, cfg: SmootherConfig, t0: float, nu: int) -> np.ndarray:
    """Linear weights of the value (``nu=0``) or slope (``nu=1``) estimate at ``t0``.

    The i-th entry is the weight given to the i-th observation, so that the
    estimate is ``weights @ y``. Entries vanish outside ``|t_i - t0| <= h``.
    """
    idx, w = local_weights(design, cfg, t0, nu)
    out = np.zeros(design.n)
    out[idx] = w
    return out


def weight_matrix(design: TimeDesign, cfg: SmootherConfig, centers, nu: int):
    """CSR matrix whose row ``k`` holds the ``nu`` weights centered at ``centers[k]``.

    Errors from an individual center propagate with the center attached as
    ``err.t0``.
    """
    return weight_matrices(design, cfg, centers, (nu,))[0]


CHUNK_ENTRIES = 2_000_000


def weight_matrices(design: TimeDesign, cfg: SmootherConfig, centers, nus=(0, 1)):
    """Weight matrices for several ``nu`` at many centers from one factorization each.

    Windows are padded to a common width per chunk of centers and factored
    with a stacked Householder QR of the same scaled design used by
    :func:`local_fit`. Column pivoting is skipped here: in the rescaled
    variable the columns have comparable norms, and the result agrees with
    the pivoted single-center path to rounding.

    Returns
    -------
    tuple of scipy.sparse.csr_matrix
        One ``(len(centers), n)`` matrix per entry of ``nus``.
    """
    centers = np.asarray(centers, dtype=float).ravel()
    for nu in nus:
        if nu not in (0, 1) or nu > cfg.q:
            raise ValueError(f"nu must be 0 or 1 and at most q={cfg.q}")
    t, h, q = design.times, cfg.h, cfg.q
    lo = np.searchsorted(t, centers - h, side="left")
    hi = np.searchsorted(t, centers + h, side="right")
    parts = {nu: ([], []) for nu in nus}
    counts_all = []
    width_all = max(int(np.max(hi - lo, initial=0)), 1)
    step = max(1, CHUNK_ENTRIES // (width_all * (q + 1)))
    for a in range(0, centers.size, step):
        c, l0, h0 = centers[a:a + step], lo[a:a + step], hi[a:a + step]
        width = max(int(np.max(h0 - l0)), 1)
        idx = l0[:, None] + np.arange(width)
        valid = idx < h0[:, None]
        idx = np.minimum(idx, design.n - 1)
        u = (t[idx] - c[:, None]) / h
        k = np.where(valid, cfg.kernel(u), 0.0)
        k[k <= MIN_WEIGHT] = 0.0
        counts = np.count_nonzero(k, axis=1)
        bad = np.flatnonzero(counts < q + 1)
        if bad.size:
            err = InsufficientLocalDataError(
                f"only {counts[bad[0]]} points with positive weight around "
                f"t0={c[bad[0]]:.6g} (h={h:.6g}); need at least {q + 1}"
            )
            err.t0 = float(c[bad[0]])
            raise err
        sw = np.sqrt(k)
        B = np.empty(u.shape + (q + 1,))
        B[..., 0] = sw
        for j in range(1, q + 1):
            B[..., j] = B[..., j - 1] * u
        Q, R = np.linalg.qr(B)
        s = np.linalg.svd(R, compute_uv=False)
        rc = np.where(s[:, 0] > 0, s[:, -1] / np.where(s[:, 0] > 0, s[:, 0], 1.0), 0.0) ** 2
        bad = np.flatnonzero(rc < RCOND_MIN)
        if bad.size:
            err = SingularMatrixError(f"local design is singular around t0={c[bad[0]]:.6g} (h={h:.6g})")
            err.t0 = float(c[bad[0]])
            raise err
        Rinv = np.linalg.inv(R)
        keep = k > 0
        counts_all.append(counts)
        cols = idx[keep]
        for nu in nus:
            g = np.einsum("cj,cwj->cw", Rinv[:, nu, :], Q) * sw
            parts[nu][0].append(cols)
            parts[nu][1].append(g[keep] / h**nu)
    # row-major boolean masking keeps rows in order and columns sorted within rows
    indptr = np.concatenate([[0], np.cumsum(np.concatenate(counts_all or [np.zeros(0, int)]))])
    out = []
    for nu in nus:
        cidx, v = parts[nu]
        data = np.concatenate(v) if v else np.zeros(0)
        indices = np.concatenate(cidx) if cidx else np.zeros(0, dtype=np.intp)
        out.append(sparse.csr_matrix((data, indices, indptr), shape=(centers.size, design.n)))
    return tuple(out)


def smooth_all(design: TimeDesign, obs, cfg: SmootherConfig, eval_points) -> SmoothedState:
    """Smooth every state and the derivative of the first state.

    Parameters
    ----------
    obs : ObservationSet or ndarray
        Observations with ``y`` of shape ``(p, m, n)``.
    eval_points : array_like
        Points at which to evaluate the estimates.
    """
    y = np.asarray(getattr(obs, "y", obs), dtype=float)
    if y.ndim != 3 or y.shape[2] != design.n:
        raise ValueError(f"observations must have shape (p, m, {design.n}), got {y.shape}")
    if cfg.q < 1:
        raise ConfigError("derivative smoothing needs q >= 1", path="smoother.q")
    eval_points = np.asarray(eval_points, dtype=float).ravel()
    p, m, n = y.shape
    try:
        W0, W1 = weight_matrices(design, cfg, eval_points, (0, 1))
    except (InsufficientLocalDataError, SingularMatrixError) as err:
        err.args = (f"{err.args[0]} [d=all, l=all, t0={err.t0:.6g}]",)
        raise
    values = (W0 @ y.reshape(p * m, n).T).T.reshape(p, m, -1)
    deriv1 = (W1 @ y[0].T).T
    return SmoothedState(eval_points, values, deriv1)


def equivalent_kernel_gap(
    design: TimeDesign, cfg: SmootherConfig, t0: float, nu: int, f_at_t0: float
) -> float:
    """Sup-distance between scaled finite-sample weights and the equivalent kernel.

    Returns ``max_i |n h^(nu+1) w_i - K_nu(u_i) / f(t0)|`` over the design
    points in the window, with ``u_i = (t_i - t0) / h``.
    """
    idx, w = local_weights(design, cfg, t0, nu)
    u = (design.times[idx] - t0) / cfg.h
    scaled = design.n * cfg.h ** (nu + 1) * w
    return float(np.max(np.abs(scaled - equivalent_kernel(cfg.kernel, cfg.q, nu, u) / f_at_t0)))
