"""Noise reduction factor of mesoscopic twin beams through noisy, lossy channels."""
from .errors import (
    DegenerateInputError,
    DomainError,
    FitConvergenceError,
    RejectionTimeoutError,
    TbnrfError,
)
from .photon_stats import (
    Coherent,
    Conditional,
    Fock,
    MomentPair,
    MultiThermal,
    NoNoise,
    bernoulli_detected_moments,
    multithermal_pmf,
    noise_moments,
)
from .nrf import (
    ShotMoments,
    TwbParams,
    nrf_coherent,
    nrf_fock,
    nrf_from_moments,
    nrf_noisy_lossy,
    nrf_noisy_one_arm,
    nrf_noisy_two_arm,
    nrf_thermal,
    nrf_twb,
)
from .thresholds import classify, fock_noise_threshold, t_min, thermal_noise_max
from .montecarlo import estimate_nrf, sample_conditional_noise, sample_shot, simulate
from .fitting import DataSeries, FitResult, FitSpec, chi2_nu, fit, model_eval, two_stage_fit

__version__ = "0.1.0"
