"""Boundaries of the sub-shot-noise region (R < 1) for the lossy-arm models.

Closed forms are the primary results. Each one has a numeric twin obtained by
bisection on ``R - 1`` which the test-suite uses as a regression oracle.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import bisect

from .errors import DomainError
from .nrf import TwbParams, nrf_coherent, nrf_fock, nrf_noisy_lossy, nrf_thermal
from .photon_stats import NoiseModel

__all__ = [
    "ThresholdKind",
    "ThresholdReport",
    "Classification",
    "BOUNDARY_TOL",
    "t_min",
    "thermal_noise_max",
    "fock_noise_threshold",
    "classify",
    "t_min_numeric",
    "thermal_noise_max_numeric",
    "fock_noise_threshold_numeric",
    "sign_changes",
]

BOUNDARY_TOL = 1e-12
_XTOL = 1e-14


class ThresholdKind(str, enum.Enum):
    TRANSMITTANCE_MIN = "transmittance_min"
    THERMAL_NOISE_MAX = "thermal_noise_max"
    FOCK_NOISE_MIN = "fock_noise_min"
    NONE_REQUIRED = "none_required"


class Classification(str, enum.Enum):
    NONCLASSICAL = "nonclassical"
    CLASSICAL = "classical"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class ThresholdReport:
    """Outcome of a threshold query.

    ``value`` is set iff a finite boundary exists. ``rhs`` keeps the raw
    right-hand side of the closed-form inequality (it may be negative, or
    undefined when the square-root argument is negative).
    """

    kind: ThresholdKind
    value: Optional[float]
    feasible: bool
    rhs: Optional[float] = None


def _validate(eta, mu, mean_m, t=None, mu_noise=None):
    if not 0 < eta <= 1:
        raise DomainError(f"eta must lie in (0, 1], got {eta!r}")
    if not mu >= 1:
        raise DomainError(f"mu must be >= 1, got {mu!r}")
    if not mean_m > 0 or math.isinf(mean_m):
        raise DomainError(f"mean_m must be a finite positive number, got {mean_m!r}")
    if t is not None and not 0 < t <= 1:
        raise DomainError(f"t must lie in (0, 1], got {t!r}")
    if mu_noise is not None and not mu_noise >= 1:
        raise DomainError(f"mu_noise must be >= 1, got {mu_noise!r}")


def transmittance_margin(eta, t, mu, mean_m):
    """2*eta*t*mu - (1-t)^2 <m>; positive iff coherent noise leaves R < 1."""
    return 2 * eta * t * mu - (1 - t) ** 2 * mean_m


def t_min(eta: float, mu: float, mean_m: float) -> float:
    """Smallest transmittance keeping R < 1 under Poissonian (or no) noise.

    Smaller root of (1-t)^2 <m> = 2 eta t mu. With a = eta mu / <m> the root
    is (1+a) - sqrt(a(2+a)); the product of the two roots is 1, which gives
    the cancellation-free form used here.
    """
    _validate(eta, mu, mean_m)
    a = eta * mu / mean_m
    return 1.0 / ((1.0 + a) + math.sqrt(a * (2.0 + a)))


def thermal_noise_max(eta: float, t: float, mu: float, mean_m: float, mu_noise: float) -> ThresholdReport:
    """Largest thermal-noise mean for which R stays below 1."""
    _validate(eta, mu, mean_m, t, mu_noise)
    margin = transmittance_margin(eta, t, mu, mean_m)
    if margin <= 0:
        return ThresholdReport(ThresholdKind.THERMAL_NOISE_MAX, None, False, None)
    bound = math.sqrt(mu_noise * margin * mean_m / mu)
    return ThresholdReport(ThresholdKind.THERMAL_NOISE_MAX, bound, True, bound)


def fock_noise_threshold(eta: float, t: float, mu: float, mean_m: float) -> ThresholdReport:
    """Minimum detected Fock-noise mean needed for R < 1.

    Above ``t_min`` the right-hand side is negative and any Fock mean works.
    """
    _validate(eta, mu, mean_m, t)
    rhs = -(2.0 - (1 - t) ** 2 * mean_m / (eta * t * mu)) * mean_m
    if rhs < 0:
        return ThresholdReport(ThresholdKind.NONE_REQUIRED, None, True, rhs)
    return ThresholdReport(ThresholdKind.FOCK_NOISE_MIN, rhs, True, rhs)


def classify(p: TwbParams, noise: NoiseModel, tol: float = BOUNDARY_TOL) -> Classification:
    r = nrf_noisy_lossy(p, noise)
    if abs(r - 1.0) <= tol:
        return Classification.BOUNDARY
    return Classification.NONCLASSICAL if r < 1.0 else Classification.CLASSICAL


# numeric oracles


def _expand_bracket(f: Callable[[float], float], lo: float, hi: float, limit: float = 1e12):
    f_lo = f(lo)
    while np.sign(f(hi)) == np.sign(f_lo):
        hi *= 2.0
        if hi > limit:
            return None
    return hi


def t_min_numeric(eta: float, mu: float, mean_m: float) -> float:
    """Root in t of R - 1 for noiseless input, found by bisection on (0, 1]."""
    _validate(eta, mu, mean_m)

    def g(t):
        return nrf_coherent(TwbParams.symmetric(mean_m, mu, eta, t), 0.0) - 1.0

    return bisect(g, 1e-300, 1.0, xtol=_XTOL, rtol=4 * np.finfo(float).eps, maxiter=2000)


def thermal_noise_max_numeric(eta, t, mu, mean_m, mu_noise) -> Optional[float]:
    """Bisection root in <m_N> of R_thermal - 1, or None when R >= 1 at zero noise."""
    _validate(eta, mu, mean_m, t, mu_noise)
    p = TwbParams.symmetric(mean_m, mu, eta, t)

    def g(x):
        return nrf_thermal(p, x, mu_noise) - 1.0

    if g(0.0) >= 0:
        return None
    hi = _expand_bracket(g, 0.0, max(mean_m, 1.0))
    return bisect(g, 0.0, hi, xtol=_XTOL, rtol=4 * np.finfo(float).eps, maxiter=2000)


def fock_noise_threshold_numeric(eta, t, mu, mean_m) -> Optional[float]:
    """Bisection root in <m_N> of R_fock - 1, or None when R < 1 already at zero noise."""
    _validate(eta, mu, mean_m, t)
    p = TwbParams.symmetric(mean_m, mu, eta, t)

    def g(x):
        return nrf_fock(p, x) - 1.0

    if g(0.0) < 0:
        return None
    if g(0.0) == 0:
        return 0.0
    hi = _expand_bracket(g, 0.0, max(mean_m, 1.0))
    if hi is None:
        return None
    return bisect(g, 0.0, hi, xtol=_XTOL, rtol=4 * np.finfo(float).eps, maxiter=2000)


def sign_changes(f: Callable[[float], float], grid) -> list[float]:
    """Bisection roots of ``f`` at every sign change along ``grid``.

    Used to scan for boundaries without assuming how many there are.
    """
    xs = np.asarray(grid, dtype=float)
    vals = np.array([f(x) for x in xs])
    roots = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if fa == 0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(bisect(f, a, b, xtol=_XTOL, maxiter=2000))
    if vals[-1] == 0:
        roots.append(float(xs[-1]))
    return roots
