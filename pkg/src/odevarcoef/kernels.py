"""Compactly supported kernels, their moment matrices and equivalent kernels.

All integrals over [-1, 1] use one fixed composite Simpson rule so that every
quantity derived here is deterministic and mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, linalg, special

from .errors import ConfigError, SingularMatrixError

__all__ = [
    "Kernel",
    "KERNEL_IDS",
    "get_kernel",
    "kernel_moment",
    "moment_matrix",
    "equivalent_kernel",
    "integrate_on_support",
    "QUAD_NODES",
]

QUAD_NODES = np.linspace(-1.0, 1.0, 201)
RCOND_MIN = 1e-12

# standard normal truncated at +-3 sd, rescaled to [-1, 1]
_GAUSS_CUT = 3.0
_GAUSS_NORM = _GAUSS_CUT / (special.ndtr(_GAUSS_CUT) - special.ndtr(-_GAUSS_CUT))


def _epanechnikov(u):
    return 0.75 * (1.0 - u**2)


def _uniform(u):
    return np.full_like(u, 0.5)


def _triweight(u):
    return 35.0 / 32.0 * (1.0 - u**2) ** 3


def _gauss_trunc(u):
    return _GAUSS_NORM * np.exp(-0.5 * (_GAUSS_CUT * u) ** 2) / np.sqrt(2.0 * np.pi)


_PROFILES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "epanechnikov": _epanechnikov,
    "uniform": _uniform,
    "triweight": _triweight,
    "gauss_trunc": _gauss_trunc,
}
KERNEL_IDS = tuple(_PROFILES)


def integrate_on_support(values):
    """Composite Simpson integral over ``QUAD_NODES`` along the last axis."""
    return integrate.simpson(values, x=QUAD_NODES, axis=-1)


@dataclass(frozen=True)
class Kernel:
    """Symmetric probability density supported on [-1, 1].

    Instances are immutable and cheap to share. Call the instance to
    evaluate ``K(t)``; values outside the support are exactly zero.

    Parameters
    ----------
    id : str
        One of ``KERNEL_IDS``.
    """

    id: str
    _profile: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.id not in _PROFILES:
            raise ConfigError(
                f"unknown kernel {self.id!r}; expected one of {', '.join(KERNEL_IDS)}",
                path="kernel",
            )
        object.__setattr__(self, "_profile", _PROFILES[self.id])
        mass = integrate_on_support(self._profile(QUAD_NODES))
        if abs(mass - 1.0) > 1e-8:
            raise ConfigError(f"kernel {self.id!r} integrates to {mass}", path="kernel")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) <= 1.0
        out = np.where(inside, self._profile(np.where(inside, t, 0.0)), 0.0)
        return out if out.ndim else float(out)

    def evaluate(self, t):
        return self(t)


def get_kernel(kernel) -> Kernel:
    """Return a :class:`Kernel` from an id string or pass an instance through."""
    if isinstance(kernel, Kernel):
        return kernel
    return Kernel(str(kernel))


def kernel_moment(kernel, order: int) -> float:
    """``int_{-1}^{1} y**order K(y) dy`` by the fixed Simpson rule."""
    if order < 0:
        raise ValueError("order must be nonnegative")
    kernel = get_kernel(kernel)
    return float(integrate_on_support(QUAD_NODES**order * kernel(QUAD_NODES)))


def moment_matrix(kernel, q: int) -> np.ndarray:
    """(q+1)x(q+1) matrix with entry ``[i, j] = int y**(i+j) K(y) dy`` (0-based).

    Raises
    ------
    SingularMatrixError
        If the reciprocal condition number falls below 1e-12.
    """
    if q < 0:
        raise ValueError("q must be nonnegative")
    kernel = get_kernel(kernel)
    mom = [kernel_moment(kernel, k) for k in range(2 * q + 1)]
    idx = np.add.outer(np.arange(q + 1), np.arange(q + 1))
    S = np.asarray(mom)[idx]
    if 1.0 / np.linalg.cond(S) < RCOND_MIN:
        raise SingularMatrixError(f"moment matrix of {kernel.id!r} with q={q} is singular")
    return S


def equivalent_kernel(kernel, q: int, nu: int, t):
    """Equivalent kernel ``K_nu(t) = e_nu^T S^{-1} (1, t, ..., t^q) K(t)``.

    Vectorized over ``t``; zero outside [-1, 1].
    """
    if nu not in (0, 1) or nu > q:
        raise ValueError(f"nu must be 0 or 1 and at most q (got nu={nu}, q={q})")
    kernel = get_kernel(kernel)
    row = linalg.solve(moment_matrix(kernel, q), np.eye(q + 1)[nu], assume_a="sym")
    t = np.asarray(t, dtype=float)
    poly = np.polynomial.polynomial.polyval(t, row)
    out = poly * kernel(t)
    return out if np.ndim(out) else float(out)
