"""Closed-form noise reduction factor (NRF) of a detected multimode twin beam.

The generic kernel is :func:`nrf_noisy_two_arm`; everything else is a
specialisation. A lossy channel of transmittance ``t`` on arm 2 is folded in
as an arm-2 mean ``t * <m>`` and an effective arm-2 efficiency ``eta * t``.
:func:`nrf_coherent`, :func:`nrf_thermal` and :func:`nrf_fock` are kept as
literal, independent transcriptions so the generic path can be checked
against them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, DomainError
from .photon_stats import (
    MomentPair,
    NoiseModel,
    NoNoise,
    noise_moments,
)

__all__ = [
    "TwbParams",
    "ShotMoments",
    "NrfTerms",
    "nrf_from_moments",
    "nrf_twb",
    "nrf_noisy_two_arm",
    "nrf_noisy_one_arm",
    "one_arm_terms",
    "lossy_arm_means",
    "nrf_noisy_lossy",
    "nrf_lossy_terms",
    "nrf_coherent",
    "nrf_thermal",
    "nrf_fock",
    "lossy_curve",
]


@dataclass(frozen=True)
class TwbParams:
    """Detected twin beam plus the lossy channel on arm 2.

    ``mean_m`` is the total detected mean of arm 1 and ``modes`` the number of
    twin-beam modes. ``eta2`` defaults to ``eta1``.
    """

    mean_m: float
    modes: float
    eta1: float
    eta2: float | None = None
    t: float = 1.0

    def __post_init__(self):
        if self.eta2 is None:
            object.__setattr__(self, "eta2", self.eta1)
        if not self.mean_m >= 0 or math.isinf(self.mean_m):
            raise DomainError(f"mean_m must be a finite nonnegative number, got {self.mean_m!r}")
        if not self.modes >= 1 or math.isinf(self.modes):
            raise DomainError(f"modes must be >= 1, got {self.modes!r}")
        for name in ("eta1", "eta2", "t"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DomainError(f"{name} must lie in (0, 1], got {v!r}")

    @classmethod
    def symmetric(cls, mean_m: float, modes: float, eta: float, t: float = 1.0) -> "TwbParams":
        return cls(mean_m, modes, eta, eta, t)

    @property
    def eta(self) -> float:
        """Common detection efficiency; only defined when both arms share it."""
        if self.eta1 != self.eta2:
            raise DomainError(f"eta1={self.eta1} and eta2={self.eta2} differ; no common eta")
        return self.eta1


@dataclass(frozen=True)
class ShotMoments:
    mean1: float
    mean2: float
    var_diff: float


class NrfTerms(NamedTuple):
    """Additive pieces of R: ``shot_noise + correlation + imbalance + excess_noise``."""

    shot_noise: float
    correlation: float
    imbalance: float
    excess_noise: float

    @property
    def total(self) -> float:
        return self.shot_noise + self.correlation + self.imbalance + self.excess_noise


def _check_eff(name, v):
    if not 0.0 < v <= 1.0:
        raise DomainError(f"{name} must lie in (0, 1], got {v!r}")


def _check_modes(v):
    if not v >= 1.0:
        raise DomainError(f"mu must be >= 1, got {v!r}")


def _check_means(*means):
    for v in means:
        if not v >= 0 or math.isinf(v):
            raise DomainError(f"means must be finite and nonnegative, got {v!r}")


def nrf_from_moments(s: ShotMoments) -> float:
    """R = var(k1 - k2) / (<k1> + <k2>)."""
    total = s.mean1 + s.mean2
    if total == 0:
        raise DegenerateInputError("mean1 + mean2 is zero; the shot-noise level is undefined")
    return s.var_diff / total


def nrf_twb(m1: float, m2: float, eta1: float, eta2: float, mu: float) -> float:
    """NRF of a noiseless detected multimode twin beam with arm means ``m1``, ``m2``."""
    _check_means(m1, m2)
    _check_eff("eta1", eta1)
    _check_eff("eta2", eta2)
    _check_modes(mu)
    s = m1 + m2
    if s == 0:
        raise DegenerateInputError("m1 + m2 is zero; the shot-noise level is undefined")
    return 1.0 - 2.0 * math.sqrt(eta1 * eta2) * math.sqrt(m1 * m2) / s + (m1 - m2) ** 2 / (mu * s)


def nrf_noisy_two_arm(
    m1: float,
    m2: float,
    eta1: float,
    eta2: float,
    mu: float,
    noise1: MomentPair,
    noise2: MomentPair,
) -> float:
    """NRF with uncorrelated noise added on both arms.

    The imbalance term keeps ``mu`` multiplying the full denominator,
    noise means included.
    """
    _check_means(m1, m2)
    _check_eff("eta1", eta1)
    _check_eff("eta2", eta2)
    _check_modes(mu)
    denom = m1 + m2 + noise1.mean + noise2.mean
    if denom == 0:
        raise DegenerateInputError("total mean count is zero; the shot-noise level is undefined")
    corr = 2.0 * math.sqrt(eta1 * eta2) * math.sqrt(m1 * m2) / denom
    imb = (m1 - m2) ** 2 / (mu * denom)
    excess = (noise1.variance - noise1.mean + noise2.variance - noise2.mean) / denom
    return 1.0 - corr + imb + excess


def one_arm_terms(
    m1: float, m2: float, eta1: float, eta2: float, mu: float, noise: MomentPair
) -> NrfTerms:
    _check_means(m1, m2)
    _check_eff("eta1", eta1)
    _check_eff("eta2", eta2)
    _check_modes(mu)
    denom = m1 + m2 + noise.mean
    if denom == 0:
        raise DegenerateInputError("total mean count is zero; the shot-noise level is undefined")
    return NrfTerms(
        1.0,
        -2.0 * math.sqrt(eta1 * eta2) * math.sqrt(m1 * m2) / denom,
        (m1 - m2) ** 2 / (mu * denom),
        (noise.variance - noise.mean) / denom,
    )


def nrf_noisy_one_arm(
    m1: float, m2: float, eta1: float, eta2: float, mu: float, noise: MomentPair
) -> float:
    """NRF with uncorrelated noise on arm 2 only."""
    t = one_arm_terms(m1, m2, eta1, eta2, mu, noise)
    return 1.0 + t.correlation + t.imbalance + t.excess_noise


def lossy_arm_means(p: TwbParams) -> tuple[float, float, float, float]:
    """Map a twin beam and lossy channel onto (m1, m2, eta1_eff, eta2_eff).

    Arm 2 sees the same photons attenuated by ``t`` and detected with
    ``eta2``, so its effective efficiency is ``eta2 * t`` and its mean is
    ``t * eta2 / eta1 * <m>`` (``t * <m>`` for equal efficiencies).
    """
    m1 = p.mean_m
    m2 = p.t * p.mean_m if p.eta1 == p.eta2 else p.t * p.eta2 / p.eta1 * p.mean_m
    return m1, m2, p.eta1, p.eta2 * p.t


def nrf_lossy_terms(p: TwbParams, noise: NoiseModel) -> NrfTerms:
    m1, m2, e1, e2 = lossy_arm_means(p)
    return one_arm_terms(m1, m2, e1, e2, p.modes, noise_moments(noise))


def nrf_noisy_lossy(p: TwbParams, noise: NoiseModel = NoNoise()) -> float:
    """NRF of a twin beam whose arm 2 crosses a lossy channel and picks up noise."""
    m1, m2, e1, e2 = lossy_arm_means(p)
    return nrf_noisy_one_arm(m1, m2, e1, e2, p.modes, noise_moments(noise))


# Literal transcriptions for a symmetric detector pair; kept independent of the
# generic path above on purpose.


def _lossy_prefix(p: TwbParams, mean_noise: float):
    _check_means(mean_noise)
    eta, t, m, mu = p.eta, p.t, p.mean_m, p.modes
    d = (1 + t) * m + mean_noise
    if d == 0:
        raise DegenerateInputError("total mean count is zero; the shot-noise level is undefined")
    return eta, t, m, mu, d


def nrf_coherent(p: TwbParams, mean_noise: float) -> float:
    """Poissonian noise of detected mean ``mean_noise`` on the lossy arm."""
    eta, t, m, mu, d = _lossy_prefix(p, mean_noise)
    return 1 - 2 * eta * t * m / d + (1 - t) ** 2 * m**2 / (mu * d)


def nrf_thermal(p: TwbParams, mean_noise: float, modes_noise: float) -> float:
    """Thermal noise of detected mean ``mean_noise`` spread over ``modes_noise`` modes."""
    if not modes_noise >= 1:
        raise DomainError(f"modes_noise must be >= 1, got {modes_noise!r}")
    eta, t, m, mu, d = _lossy_prefix(p, mean_noise)
    return (
        1
        - 2 * eta * t * m / d
        + (1 - t) ** 2 * m**2 / (mu * d)
        + mean_noise**2 / (modes_noise * d)
    )


def nrf_fock(p: TwbParams, mean_noise: float) -> float:
    """Fock-state noise of DETECTED mean ``mean_noise``, detected through ``eta * t``."""
    eta, t, m, mu, d = _lossy_prefix(p, mean_noise)
    return (
        1
        - 2 * eta * t * m / d
        + (1 - t) ** 2 * m**2 / (mu * d)
        - eta * t * mean_noise / d
    )


def lossy_curve(model: str, mean_m, mu, eta, t, mean_noise, mu_noise=1.0):
    """Vectorised R for the coherent/thermal/fock families (numpy broadcasting).

    No domain validation: callers (the fit engine) enforce bounds themselves.
    """
    m = np.asarray(mean_m, dtype=float)
    mn = np.asarray(mean_noise, dtype=float)
    d = (1 + t) * m + mn
    r = 1 - 2 * eta * t * m / d + (1 - t) ** 2 * m**2 / (mu * d)
    if model == "coherent":
        return r
    if model == "thermal":
        return r + mn**2 / (mu_noise * d)
    if model == "fock":
        return r - eta * t * mn / d
    raise ValueError(f"unknown model {model!r}; expected coherent, thermal or fock")
