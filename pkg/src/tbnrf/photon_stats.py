"""Photon-number statistics: multimode thermal law, Bernoulli detection and noise sources.

All means exposed here are TOTAL detected means (summed over modes). The
multimode thermal pmf is the only function parameterised per mode, because
that is the natural variable of the negative-binomial form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

__all__ = [
    "MomentPair",
    "NoNoise",
    "Coherent",
    "MultiThermal",
    "Fock",
    "Conditional",
    "NoiseModel",
    "NOISE_KINDS",
    "multithermal_pmf",
    "multithermal_logpmf",
    "bernoulli_detected_moments",
    "noise_moments",
]


def _check_efficiency(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")


def _check_nonneg(name: str, value: float) -> None:
    if not value >= 0.0 or math.isinf(value):
        raise DomainError(f"{name} must be a finite nonnegative number, got {value!r}")


def _check_modes(name: str, value: float) -> None:
    if not value >= 1.0 or math.isinf(value):
        raise DomainError(f"{name} must be >= 1, got {value!r}")


@dataclass(frozen=True)
class MomentPair:
    """Mean and variance of a detected photon-number distribution."""

    mean: float
    variance: float

    def __post_init__(self):
        _check_nonneg("mean", self.mean)
        _check_nonneg("variance", self.variance)

    @property
    def excess(self) -> float:
        """Variance minus mean: >0 super-Poissonian, <0 sub-Poissonian."""
        return self.variance - self.mean


@dataclass(frozen=True)
class NoNoise:
    kind: ClassVar[str] = "none"


@dataclass(frozen=True)
class Coherent:
    """Poissonian noise with the given detected mean."""

    mean: float
    kind: ClassVar[str] = "coherent"

    def __post_init__(self):
        _check_nonneg("mean", self.mean)


@dataclass(frozen=True)
class MultiThermal:
    """Thermal noise with ``modes`` equally populated modes (non-integer allowed)."""

    mean: float
    modes: float = 1.0
    kind: ClassVar[str] = "thermal"

    def __post_init__(self):
        _check_nonneg("mean", self.mean)
        _check_modes("modes", self.modes)


@dataclass(frozen=True)
class Fock:
    """Fock state of ``photon_number`` photons detected with efficiency ``detection_efficiency``."""

    photon_number: int
    detection_efficiency: float
    kind: ClassVar[str] = "fock"

    def __post_init__(self):
        if isinstance(self.photon_number, bool) or int(self.photon_number) != self.photon_number:
            raise DomainError(f"photon_number must be an integer, got {self.photon_number!r}")
        if self.photon_number < 0:
            raise DomainError(f"photon_number must be >= 0, got {self.photon_number!r}")
        _check_efficiency("detection_efficiency", self.detection_efficiency)

    @property
    def mean(self) -> float:
        return self.photon_number * self.detection_efficiency


@dataclass(frozen=True)
class Conditional:
    """Signal arm of a second twin beam, heralded on ``herald_value`` idler counts.

    ``unconditioned_mean`` is the detected mean of the unconditioned state and
    ``herald_efficiency`` the detection efficiency of the heralding arm.
    """

    unconditioned_mean: float
    modes: float
    herald_value: int
    herald_efficiency: float
    kind: ClassVar[str] = "conditional"

    def __post_init__(self):
        _check_nonneg("unconditioned_mean", self.unconditioned_mean)
        _check_modes("modes", self.modes)
        if isinstance(self.herald_value, bool) or int(self.herald_value) != self.herald_value:
            raise DomainError(f"herald_value must be an integer, got {self.herald_value!r}")
        if self.herald_value < 0:
            raise DomainError(f"herald_value must be >= 0, got {self.herald_value!r}")
        _check_efficiency("herald_efficiency", self.herald_efficiency)


NoiseModel = Union[NoNoise, Coherent, MultiThermal, Fock, Conditional]
NOISE_KINDS = {cls.kind: cls for cls in (NoNoise, Coherent, MultiThermal, Fock, Conditional)}


def multithermal_logpmf(n, mean_per_mode: float, modes: float):
    """Log of the multimode thermal (negative-binomial) pmf.

    Uses log-gamma arithmetic so that non-integer ``modes`` and very large
    ``n`` (up to ~1e6 and beyond) stay finite.
    """
    if not mean_per_mode > 0:
        raise DomainError(f"mean_per_mode must be > 0, got {mean_per_mode!r}")
    _check_modes("modes", modes)
    n = np.asarray(n, dtype=float)
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise DomainError("photon numbers must be nonnegative integers")
    b = float(mean_per_mode)
    return (
        gammaln(n + modes)
        - gammaln(n + 1.0)
        - gammaln(modes)
        - modes * np.log1p(b)
        - n * np.log1p(1.0 / b)
    )


def multithermal_pmf(n, mean_per_mode: float, modes: float):
    """Probability of ``n`` photons in ``modes`` thermal modes of mean ``mean_per_mode`` each.

    Accepts a scalar or an array of photon numbers; returns the same shape.
    The distribution mean is ``modes * mean_per_mode``.

    >>> float(multithermal_pmf(0, 1.0, 1))
    0.5
    """
    out = np.exp(multithermal_logpmf(n, mean_per_mode, modes))
    return float(out) if out.ndim == 0 else out


def bernoulli_detected_moments(photon_moments: MomentPair, eta: float) -> MomentPair:
    """Propagate photon-number moments through Bernoulli detection of efficiency ``eta``.

    mean -> eta * mean, variance -> eta^2 * variance + eta (1 - eta) * mean.
    """
    _check_efficiency("eta", eta)
    mean = eta * photon_moments.mean
    var = eta * eta * photon_moments.variance + eta * (1.0 - eta) * photon_moments.mean
    return MomentPair(mean, var)


def conditional_moments(model: Conditional) -> MomentPair:
    m = model.unconditioned_mean
    mu = model.modes
    c = model.herald_value
    e = model.herald_efficiency
    denom = m + mu
    mean = (c * (m + e * mu) + mu * m * (1.0 - e)) / denom
    var = (1.0 - e) / denom**2 * (
        e * c * mu**2 + m * mu * (c + 2.0 * e * c + mu) + m**2 * (2.0 * c + 2.0 * mu - e * mu)
    )
    return MomentPair(mean, var)


def noise_moments(model: NoiseModel) -> MomentPair:
    """Detected mean and variance contributed by a noise source."""
    if isinstance(model, NoNoise):
        return MomentPair(0.0, 0.0)
    if isinstance(model, Coherent):
        return MomentPair(model.mean, model.mean)
    if isinstance(model, MultiThermal):
        m = model.mean
        return MomentPair(m, m * (m / model.modes + 1.0))
    if isinstance(model, Fock):
        return bernoulli_detected_moments(
            MomentPair(float(model.photon_number), 0.0), model.detection_efficiency
        )
    if isinstance(model, Conditional):
        return conditional_moments(model)
    raise TypeError(f"unknown noise model {model!r}")
