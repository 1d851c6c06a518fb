"""Quadratic-form representation of the second-step cross products.

Each component of ``Z' W Yhat`` equals ``sum_l Y_dl' A_r Y_1l`` with

    A_r[j, k] = sum_i (t_i - t0)**r W0_i[j] W1_i[k] K((t_i - t0) / h)

where ``W0_i`` and ``W1_i`` are the first-step value and slope weight
vectors centered at ``t_i``. Only centers with positive kernel weight
contribute, so ``A_r = W0c' diag(c) W1c`` for the stacked window rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .locpoly import SmootherConfig, TimeDesign, weight_matrices

__all__ = [
    "QuadFormMatrix",
    "QuadFormMoments",
    "DENSE_MAX",
    "build_a_r",
    "traces",
    "quad_moments",
    "lemma3_suite",
]

DENSE_MAX = 4096


@dataclass(frozen=True)
class QuadFormMatrix:
    """``A_r`` for one center ``t0``; ``entries`` is dense up to ``DENSE_MAX`` rows, CSR above."""

    r: int
    t0: float
    entries: object

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def dense(self) -> np.ndarray:
        e = self.entries
        return e.toarray() if sparse.issparse(e) else np.asarray(e)

    def quad(self, x, y) -> float:
        """``x' A y``."""
        return float(np.asarray(x) @ (self.entries @ np.asarray(y)))


@dataclass(frozen=True)
class QuadFormMoments:
    """Conditional mean and variance of ``Y_d' A Y_1`` given the true states.

    ``components`` breaks both down into labelled terms and carries the
    literal variance formulas as printed in the source derivation under
    ``printed_variance`` for comparison.
    """

    mean: float
    variance: float
    components: dict = field(default_factory=dict)


def _center_weights(design: TimeDesign, cfg: SmootherConfig, t0: float):
    key = (design.digest(), design.n, cfg, float(t0))
    hit = _CACHE.get(key)
    if hit is not None:
        return hit
    sl = design.window(t0, cfg.h)
    centers = design.times[sl]
    kw = cfg.kernel((centers - t0) / cfg.h)
    keep = kw > 0
    centers, kw = centers[keep], kw[keep]
    if centers.size:
        # columns outside the union of the center windows are identically zero
        band = design.window(t0, 2.0 * cfg.h)
        W0, W1 = (w[:, band] for w in weight_matrices(design, cfg, centers, (0, 1)))
    else:
        band, W0, W1 = slice(0, 0), None, None
    hit = (centers, kw, band, W0, W1)
    _CACHE.clear()
    _CACHE[key] = hit
    return hit


_CACHE: dict = {}


def build_a_r(design: TimeDesign, cfg: SmootherConfig, t0: float, r: int) -> QuadFormMatrix:
    """Construct ``A_r`` at ``t0``.

    Raises whatever the first-step smoother raises at a needed center.
    The first-step weights of the most recent ``(design, cfg, t0)`` are
    cached so that consecutive orders ``r`` reuse them.
    """
    if not 0 <= r <= cfg.q:
        raise ValueError(f"r must lie in 0..{cfg.q}")
    centers, kw, band, W0, W1 = _center_weights(design, cfg, t0)
    n = design.n
    if centers.size == 0:
        empty = sparse.csr_matrix((n, n)) if n > DENSE_MAX else np.zeros((n, n))
        return QuadFormMatrix(r, float(t0), empty)
    c = (centers - t0) ** r * kw
    if n > DENSE_MAX:
        blk = (W0.T @ sparse.diags(c) @ W1).tocoo()
        A = sparse.csr_matrix((blk.data, (blk.row + band.start, blk.col + band.start)), shape=(n, n))
    else:
        A = np.zeros((n, n))
        A[band, band] = (W0.T.toarray() * c) @ W1.toarray()
    return QuadFormMatrix(r, float(t0), A)


def traces(a: QuadFormMatrix) -> dict:
    """``tr(A)``, ``tr(A^2)``, ``tr(A A')`` and ``sum_i A_ii^2``."""
    A = a.entries
    if sparse.issparse(A):
        diag = A.diagonal()
        tr_a2 = float(A.multiply(A.T).sum())
        tr_aat = float(A.multiply(A).sum())
    else:
        diag = np.diag(A)
        tr_a2 = float(np.sum(A * A.T))
        tr_aat = float(np.sum(A * A))
    return {
        "tr_a": float(diag.sum()),
        "tr_a2": tr_a2,
        "tr_aat": tr_aat,
        "sum_diag_sq": float(np.sum(diag**2)),
    }


def quad_moments(a, x_d, x_1, sigma: float, fourth_moment: float, same_vector: bool) -> QuadFormMoments:
    """Mean and variance of ``(x_d + e_d)' A (x_1 + e_1)`` over iid noise.

    ``same_vector`` means ``e_d`` and ``e_1`` are the same draw (the
    ``d = 1`` case, with ``x_d`` ignored); otherwise they are independent.
    Noise is assumed symmetric (zero third moment) with variance
    ``sigma**2`` and fourth moment ``fourth_moment``.

    Same draw::

        mean = x'Ax + s^2 tr(A)
        var  = s^2 x'(A+A')^2 x + s^4 tr((A+A')^2)/2 + (mu4 - 3 s^4) sum_i A_ii^2

    Independent draws::

        mean = x_d'A x_1
        var  = s^2 (x_1'A'A x_1 + x_d'A A' x_d) + s^4 tr(A A')
    """
    A = a.dense() if isinstance(a, QuadFormMatrix) else np.asarray(a, dtype=float)
    n = A.shape[0]
    x_1 = np.asarray(x_1, dtype=float)
    x_d = x_1 if same_vector else np.asarray(x_d, dtype=float)
    if A.shape != (n, n) or x_1.shape != (n,) or x_d.shape != (n,):
        raise ValueError(f"dimension mismatch: A {A.shape}, x_d {x_d.shape}, x_1 {x_1.shape}")
    if sigma < 0 or fourth_moment < sigma**4 * (1 - 1e-12):
        raise ValueError("need sigma >= 0 and fourth_moment >= sigma**4")
    s2, s4 = sigma**2, sigma**4
    signal = float(x_d @ A @ x_1)
    if same_vector:
        S = A + A.T
        Sx = S @ x_1
        lin = s2 * float(Sx @ Sx)
        quad = s4 * float(np.sum(S * S.T)) / 2.0
        kurt = (fourth_moment - 3.0 * s4) * float(np.sum(np.diag(A) ** 2))
        mean = signal + s2 * float(np.trace(A))
        printed = 4.0 * lin + s2 * float(np.sum(S * S.T)) / 2.0 + (fourth_moment - 3.0 * s2) * float(
            np.sum(np.diag(A) ** 2)
        )
        comps = {"signal": signal, "trace": s2 * float(np.trace(A)),
                 "cross": lin, "quadratic": quad, "quartic": kurt, "printed_variance": printed}
    else:
        Ax1, Atxd = A @ x_1, A.T @ x_d
        lin = s2 * float(Ax1 @ Ax1 + Atxd @ Atxd)
        quad = s4 * float(np.sum(A * A))
        kurt = 0.0
        mean = signal
        printed = s2 * float(x_d @ A.T @ Ax1 + x_d @ A @ (A.T @ x_1) + np.sum(A * A))
        comps = {"signal": signal, "trace": 0.0, "cross": lin, "quadratic": quad,
                 "quartic": kurt, "printed_variance": printed}
    return QuadFormMoments(mean, lin + quad + kurt, comps)


def lemma3_suite(design: TimeDesign, cfg: SmootherConfig, truth, t0: float, r: int,
                 d: int = 0, l: int = 0) -> dict:
    """Six trace and quadratic-form scalars of ``A_r`` against the true states.

    ``d`` and ``l`` are 0-based state and repeat indices. Returns keys
    ``tr_a, tr_a2, tr_aat, x_a_x, x_aat_x, x_ata_x`` where the last three are
    ``X_d' A X_1``, ``X_d' A A' X_1`` and ``X_d' A' A X_1`` at the design
    times.
    """
    a = build_a_r(design, cfg, t0, r)
    tr = traces(a)
    x = truth.at(design.times)
    xd, x1 = x[d, l], x[0, l]
    A = a.entries
    at_x1 = A.T @ x1
    a_x1 = A @ x1
    return {
        "tr_a": tr["tr_a"],
        "tr_a2": tr["tr_a2"],
        "tr_aat": tr["tr_aat"],
        "x_a_x": float(xd @ a_x1),
        "x_aat_x": float(xd @ (A @ at_x1)),
        "x_ata_x": float(xd @ (A.T @ a_x1)),
    }
