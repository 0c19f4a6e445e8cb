"""Shot-by-shot photon-counting simulator used as an independent oracle.

Every shot draws one total photon number shared by both arms (multimode
thermal, sampled as a gamma-Poisson mixture so non-integer mode counts work),
thins it binomially on each arm, and adds an independent noise count on arm 2.

Reproducibility: shots are cut into fixed-size chunks and chunk ``i`` is
driven by ``SeedSequence(seed, spawn_key=(i,))``. Chunks are reassembled in
index order, so the output depends only on ``(seed, shots)`` and never on the
number of worker threads.
"""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateInputError, DomainError, RejectionTimeoutError
from .nrf import TwbParams
from .photon_stats import (
    Coherent,
    Conditional,
    Fock,
    MultiThermal,
    NoiseModel,
    NoNoise,
    multithermal_pmf,
)

__all__ = [
    "ShotRecord",
    "NrfEstimate",
    "SignalEfficiency",
    "CHUNK_SHOTS",
    "BOOTSTRAP_RESAMPLES",
    "MIN_ACCEPTANCE",
    "default_workers",
    "sample_multithermal",
    "sample_shots",
    "sample_shot",
    "sample_conditional_noise",
    "conditional_acceptance",
    "simulate",
    "estimate_from_counts",
    "estimate_nrf",
    "validation_grid",
]

CHUNK_SHOTS = 1 << 16
BOOTSTRAP_RESAMPLES = 200
MIN_ACCEPTANCE = 1e-6
_MAX_BATCH = 1 << 20


class SignalEfficiency(str, enum.Enum):
    """How the heralded (signal) arm of a conditional source is detected."""

    SAME_AS_HERALD = "same_as_herald"
    UNIT = "unit"


@dataclass(frozen=True)
class ShotRecord:
    k1: int
    k2: int


@dataclass(frozen=True)
class NrfEstimate:
    r_hat: float
    std_err: float
    shots: int
    mean1: float
    mean2: float


def default_workers() -> int:
    """Worker cap from ``TBNRF_THREADS`` (positive integer), else the core count."""
    raw = os.environ.get("TBNRF_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise DomainError(f"TBNRF_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise DomainError(f"TBNRF_THREADS must be a positive integer, got {raw!r}")
    return n


def sample_multithermal(rng: np.random.Generator, mean: float, modes: float, size) -> np.ndarray:
    """Multimode thermal photon numbers with total ``mean`` via gamma-Poisson mixing."""
    if mean == 0:
        return np.zeros(size, dtype=np.int64)
    lam = rng.gamma(modes, mean / modes, size=size)
    return rng.poisson(lam)


def _photon_mean(model: Conditional, interpretation: SignalEfficiency) -> float:
    if interpretation is SignalEfficiency.UNIT:
        return model.unconditioned_mean
    # unconditioned_mean is the detected mean; undo the efficiency
    if model.herald_efficiency == 0:
        if model.unconditioned_mean == 0:
            return 0.0
        return math.inf
    return model.unconditioned_mean / model.herald_efficiency


def conditional_acceptance(model: Conditional, interpretation=SignalEfficiency.SAME_AS_HERALD) -> float:
    """Exact probability that the herald fires with ``herald_value`` counts.

    Binomial thinning of a multimode thermal law is multimode thermal with the
    mean scaled by the efficiency, so this is one pmf evaluation.
    """
    interpretation = SignalEfficiency(interpretation)
    n_mean = _photon_mean(model, interpretation)
    c = model.herald_value
    if model.herald_efficiency == 0 or n_mean == 0:
        return 1.0 if c == 0 else 0.0
    if math.isinf(n_mean):
        return 0.0
    herald_mean = model.herald_efficiency * n_mean
    return multithermal_pmf(c, herald_mean / model.modes, model.modes)


def sample_conditional_noise(
    model: Conditional,
    interpretation=SignalEfficiency.SAME_AS_HERALD,
    rng: Optional[np.random.Generator] = None,
    size: Optional[int] = None,
):
    """Heralded signal counts by rejection sampling a multimode thermal twin beam.

    Draws photon numbers, detects the idler (herald) with ``herald_efficiency``
    and keeps only shots whose herald count equals ``herald_value``. The signal
    is detected with the herald efficiency (``same_as_herald``) or perfectly
    (``unit``). Under ``same_as_herald`` the unconditioned mean is a detected
    mean, so the photon mean is ``unconditioned_mean / herald_efficiency``.

    Raises RejectionTimeoutError when the acceptance probability is below
    ``MIN_ACCEPTANCE``.
    """
    interpretation = SignalEfficiency(interpretation)
    rng = np.random.default_rng() if rng is None else rng
    n_mean = _photon_mean(model, interpretation)
    acc = conditional_acceptance(model, interpretation)
    if acc < MIN_ACCEPTANCE:
        raise RejectionTimeoutError(
            f"herald value {model.herald_value} is accepted with probability {acc:.3g} "
            f"(< {MIN_ACCEPTANCE:g}); rejection sampling would not terminate",
            acc,
        )
    if math.isinf(n_mean):
        raise DomainError("herald_efficiency = 0 with a nonzero detected mean has no photon-level model")
    want = 1 if size is None else int(size)
    eta = model.herald_efficiency
    out = np.empty(want, dtype=np.int64)
    filled = 0
    while filled < want:
        need = want - filled
        batch = min(_MAX_BATCH, max(64, int(math.ceil(1.2 * need / acc)) + 16))
        n = sample_multithermal(rng, n_mean, model.modes, batch)
        herald = rng.binomial(n, eta)
        n = n[herald == model.herald_value]
        if interpretation is SignalEfficiency.SAME_AS_HERALD:
            signal = rng.binomial(n, eta)
        else:
            signal = n
        take = min(need, signal.size)
        out[filled : filled + take] = signal[:take]
        filled += take
    return int(out[0]) if size is None else out


def _noise_counts(noise: NoiseModel, rng: np.random.Generator, size: int) -> np.ndarray:
    if isinstance(noise, NoNoise):
        return np.zeros(size, dtype=np.int64)
    if isinstance(noise, Coherent):
        return rng.poisson(noise.mean, size=size)
    if isinstance(noise, MultiThermal):
        return sample_multithermal(rng, noise.mean, noise.modes, size)
    if isinstance(noise, Fock):
        return rng.binomial(noise.photon_number, noise.detection_efficiency, size=size)
    if isinstance(noise, Conditional):
        return sample_conditional_noise(noise, SignalEfficiency.SAME_AS_HERALD, rng, size)
    raise TypeError(f"unknown noise model {noise!r}")


def sample_shots(p: TwbParams, noise: NoiseModel, size: int, rng: np.random.Generator):
    """``size`` shots as two int64 arrays (k1, k2)."""
    n = sample_multithermal(rng, p.mean_m / p.eta1, p.modes, size)
    k1 = rng.binomial(n, p.eta1)
    k2 = rng.binomial(n, p.eta2 * p.t)
    k2 = k2 + _noise_counts(noise, rng, size)
    return k1, k2


def sample_shot(p: TwbParams, noise: NoiseModel, rng: np.random.Generator) -> ShotRecord:
    k1, k2 = sample_shots(p, noise, 1, rng)
    return ShotRecord(int(k1[0]), int(k2[0]))


def _chunk_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def simulate(
    p: TwbParams,
    noise: NoiseModel,
    shots: int,
    seed: int,
    workers: Optional[int] = None,
):
    """Deterministic (k1, k2) arrays for ``shots`` shots; see the module docstring."""
    if shots < 1:
        raise DomainError(f"shots must be positive, got {shots!r}")
    if not 0 <= seed < 2**64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise DomainError(f"workers must be positive, got {workers!r}")
    n_chunks = -(-shots // CHUNK_SHOTS)
    sizes = [min(CHUNK_SHOTS, shots - i * CHUNK_SHOTS) for i in range(n_chunks)]

    def run(i):
        return sample_shots(p, noise, sizes[i], _chunk_rng(seed, i))

    if workers == 1 or n_chunks == 1:
        parts = [run(i) for i in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, n_chunks)) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    k1 = np.concatenate([a for a, _ in parts])
    k2 = np.concatenate([b for _, b in parts])
    return k1, k2


def _ratio(d: np.ndarray, s: np.ndarray) -> float:
    total = s.mean()
    if total == 0:
        raise DegenerateInputError("sample mean of k1 + k2 is zero; R is undefined")
    return d.var(ddof=1) / total


def estimate_from_counts(k1, k2, method: str = "delta", seed: int = 0) -> NrfEstimate:
    """Empirical R with its standard error.

    ``method="delta"`` (default) linearises R = V/S through the per-shot
    influence function ((d_i - dbar)^2 - V)/S - V (s_i - sbar)/S^2.
    ``method="bootstrap"`` resamples shots ``BOOTSTRAP_RESAMPLES`` times.
    """
    k1 = np.asarray(k1, dtype=np.int64)
    k2 = np.asarray(k2, dtype=np.int64)
    n = k1.size
    if n < 2:
        raise DomainError("at least two shots are needed for a variance")
    d = (k1 - k2).astype(float)
    s = (k1 + k2).astype(float)
    r_hat = _ratio(d, s)
    if method == "delta":
        v = d.var(ddof=1)
        sbar = s.mean()
        infl = ((d - d.mean()) ** 2 - v) / sbar - v * (s - sbar) / sbar**2
        se = float(infl.std(ddof=1) / math.sqrt(n))
    elif method == "bootstrap":
        rng = np.random.default_rng(seed)
        reps = np.empty(BOOTSTRAP_RESAMPLES)
        for b in range(BOOTSTRAP_RESAMPLES):
            idx = rng.integers(0, n, size=n)
            reps[b] = _ratio(d[idx], s[idx])
        se = float(reps.std(ddof=1))
    else:
        raise ValueError(f"unknown standard-error method {method!r}")
    return NrfEstimate(float(r_hat), se, n, float(k1.mean()), float(k2.mean()))


def estimate_nrf(
    p: TwbParams,
    noise: NoiseModel,
    shots: int,
    seed: int,
    workers: Optional[int] = None,
    method: str = "delta",
) -> NrfEstimate:
    if shots < 2:
        raise DomainError(f"shots must be >= 2, got {shots!r}")
    k1, k2 = simulate(p, noise, shots, seed, workers)
    return estimate_from_counts(k1, k2, method=method, seed=seed)


def validation_grid() -> list[tuple[str, TwbParams, NoiseModel]]:
    """The 24 (label, params, noise) configurations used for oracle agreement.

    mu = 100 and eta = 0.17 throughout; t in {0.4, 1}; three representative
    means per noise family (TWB means for the noiseless family).
    """
    mu, eta = 100.0, 0.17
    grid = []
    for t in (0.4, 1.0):
        for m in (0.5, 2.0, 8.0):
            grid.append((f"none t={t} m={m}", TwbParams.symmetric(m, mu, eta, t), NoNoise()))
        for mn in (0.3, 1.0, 3.0):
            grid.append((f"coherent t={t} mN={mn}", TwbParams.symmetric(2.0, mu, eta, t), Coherent(mn)))
        for mn in (0.2, 0.6, 1.5):
            grid.append((f"thermal t={t} mN={mn}", TwbParams.symmetric(2.0, mu, eta, t), MultiThermal(mn, 1.0)))
        for n in (2, 10, 40):
            grid.append((f"fock t={t} n={n}", TwbParams.symmetric(2.0, mu, eta, t), Fock(n, eta * t)))
    return grid
