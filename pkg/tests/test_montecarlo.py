import math

import numpy as np
import pytest

from tbnrf.errors import DegenerateInputError, DomainError, RejectionTimeoutError
from tbnrf.montecarlo import (
    CHUNK_SHOTS,
    SignalEfficiency,
    conditional_acceptance,
    default_workers,
    estimate_from_counts,
    estimate_nrf,
    sample_conditional_noise,
    sample_shot,
    sample_shots,
    simulate,
    validation_grid,
)
from tbnrf.nrf import TwbParams, nrf_coherent, nrf_noisy_lossy
from tbnrf.photon_stats import Conditional, Fock, MultiThermal, NoNoise, noise_moments
from tbnrf.thresholds import thermal_noise_max


def rng(seed=0):
    return np.random.default_rng(seed)


class TestSampleShot:
    def test_lossless_arms_are_identical(self):
        p = TwbParams.symmetric(3.0, 7.5, 1.0, 1.0)
        k1, k2 = sample_shots(p, NoNoise(), 20_000, rng(1))
        assert np.array_equal(k1, k2)
        assert k1.sum() > 0

    def test_vanishing_efficiency_gives_no_counts(self):
        p = TwbParams.symmetric(1e-12, 10, 1e-9, 1.0)
        k1, k2 = sample_shots(p, NoNoise(), 10_000, rng(2))
        assert not k1.any() and not k2.any()

    def test_single_record(self):
        rec = sample_shot(TwbParams.symmetric(2.0, 5, 0.3, 0.5), MultiThermal(1.0, 2.0), rng(3))
        assert isinstance(rec.k1, int) and rec.k1 >= 0 and rec.k2 >= 0

    @pytest.mark.parametrize("noise", [NoNoise(), MultiThermal(0.6, 1.0), Fock(10, 0.068)], ids=lambda n: n.kind)
    def test_marginal_means(self, noise):
        p = TwbParams.symmetric(2.0, 100, 0.17, 0.4)
        k1, k2 = simulate(p, noise, 200_000, seed=4)
        for k, want in ((k1, p.mean_m), (k2, p.t * p.mean_m + noise_moments(noise).mean)):
            se = k.std(ddof=1) / math.sqrt(k.size)
            assert abs(k.mean() - want) <= 4 * se


class TestEstimator:
    def test_known_sample(self):
        est = estimate_from_counts([1, 2, 3, 0], [0, 0, 1, 1])
        d = np.array([1, 2, 2, -1])
        assert est.r_hat == pytest.approx(d.var(ddof=1) / 2.0, abs=1e-15)
        assert est.mean1 == 1.5 and est.mean2 == 0.5 and est.shots == 4

    def test_zero_counts_are_degenerate(self):
        with pytest.raises(DegenerateInputError):
            estimate_from_counts([0, 0, 0], [0, 0, 0])

    def test_too_few_shots(self):
        with pytest.raises(DomainError):
            estimate_from_counts([1], [1])

    def test_bootstrap_and_delta_agree(self):
        p = TwbParams.symmetric(2.0, 100, 0.17, 0.4)
        k1, k2 = simulate(p, MultiThermal(0.5, 1.0), 100_000, seed=8)
        a = estimate_from_counts(k1, k2, "delta")
        b = estimate_from_counts(k1, k2, "bootstrap", seed=1)
        assert a.r_hat == b.r_hat
        # 200 resamples estimate an SE to about 5%
        assert b.std_err == pytest.approx(a.std_err, rel=0.2)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            estimate_from_counts([1, 2], [0, 1], "jackknife")

    def test_balanced_baseline(self):
        est = estimate_nrf(TwbParams.symmetric(1.0, 100, 0.17, 1.0), NoNoise(), 10**6, seed=17)
        assert est.std_err > 0
        assert abs(est.r_hat - 0.83) <= 3 * est.std_err


class TestDeterminism:
    def test_independent_of_workers(self):
        p = TwbParams.symmetric(1.5, 40, 0.3, 0.7)
        shots = 3 * CHUNK_SHOTS + 123
        ref = simulate(p, MultiThermal(0.4, 2.0), shots, seed=99, workers=1)
        for w in (2, 8):
            out = simulate(p, MultiThermal(0.4, 2.0), shots, seed=99, workers=w)
            assert np.array_equal(ref[0], out[0]) and np.array_equal(ref[1], out[1])

    def test_full_chunks_prefix_stable(self):
        p = TwbParams.symmetric(1.5, 40, 0.3, 0.7)
        a = simulate(p, NoNoise(), 2 * CHUNK_SHOTS, seed=3, workers=1)
        b = simulate(p, NoNoise(), CHUNK_SHOTS + 10, seed=3, workers=1)
        # whole chunks are shared; a partial chunk draws a different stream
        assert np.array_equal(a[0][:CHUNK_SHOTS], b[0][:CHUNK_SHOTS])

    def test_seed_matters(self):
        p = TwbParams.symmetric(1.5, 40, 0.3, 0.7)
        a = simulate(p, NoNoise(), 1000, seed=3)
        b = simulate(p, NoNoise(), 1000, seed=4)
        assert not np.array_equal(a[0], b[0])

    @pytest.mark.parametrize("kw", [{"shots": 0, "seed": 1}, {"shots": 10, "seed": -1}, {"shots": 10, "seed": 2**64}])
    def test_bad_arguments(self, kw):
        with pytest.raises(DomainError):
            simulate(TwbParams.symmetric(1, 10, 0.5, 1), NoNoise(), **kw)

    def test_thread_env(self, monkeypatch):
        monkeypatch.setenv("TBNRF_THREADS", "3")
        assert default_workers() == 3
        monkeypatch.setenv("TBNRF_THREADS", "")
        assert default_workers() >= 1
        for bad in ("0", "-2", "two"):
            monkeypatch.setenv("TBNRF_THREADS", bad)
            with pytest.raises(DomainError):
                default_workers()


class TestConditional:
    def test_unit_herald_pins_value(self):
        model = Conditional(3.0, 10, 4, 1.0)
        x = sample_conditional_noise(model, SignalEfficiency.SAME_AS_HERALD, rng(5), 5000)
        assert np.all(x == 4)

    def test_dead_herald_times_out(self):
        with pytest.raises(RejectionTimeoutError) as info:
            sample_conditional_noise(Conditional(0.0, 10, 3, 0.0), SignalEfficiency.SAME_AS_HERALD, rng(6), 10)
        assert info.value.acceptance_rate == 0.0

    def test_rare_herald_times_out(self):
        model = Conditional(0.01, 100, 30, 0.5)
        assert conditional_acceptance(model) < 1e-6
        with pytest.raises(RejectionTimeoutError):
            sample_conditional_noise(model, SignalEfficiency.SAME_AS_HERALD, rng(6), 10)

    def test_acceptance_matches_frequency(self):
        model = Conditional(3.0, 10, 2, 0.5)
        n = 400_000
        g = rng(12)
        photons = g.negative_binomial(10, 10 / (10 + 6.0), n)
        freq = np.mean(g.binomial(photons, 0.5) == 2)
        acc = conditional_acceptance(model)
        assert abs(freq - acc) <= 4 * math.sqrt(acc * (1 - acc) / n)

    def test_scalar_draw(self):
        assert isinstance(sample_conditional_noise(Conditional(2.0, 10, 1, 0.5), rng=rng(1)), int)

    @pytest.mark.parametrize("mu", [10, 100])
    def test_herald_shifts_mean_as_predicted(self, mu):
        model = Conditional(3.0, mu, 5, 0.5)
        x = sample_conditional_noise(model, SignalEfficiency.SAME_AS_HERALD, rng(mu), 200_000)
        want = noise_moments(model)
        assert abs(x.mean() - want.mean) <= 4 * x.std(ddof=1) / math.sqrt(x.size)
        assert want.mean > 3.0


class TestAnalyticAgreement:
    @pytest.mark.parametrize("mn", [0.0, 1.0, 5.0])
    def test_lossy_surface(self, mn):
        p = TwbParams.symmetric(1.0, 100, 0.17, 0.4)
        est = estimate_nrf(p, MultiThermal(mn, 1.0) if mn else NoNoise(), 400_000, seed=21)
        want = nrf_noisy_lossy(p, MultiThermal(mn, 1.0)) if mn else nrf_coherent(p, 0.0)
        assert abs(est.r_hat - want) <= 3 * est.std_err

    @pytest.mark.parametrize("n", [0, 5, 50])
    def test_fock_flatness(self, n):
        p = TwbParams.symmetric(1.0, 100, 0.17, 1.0)
        est = estimate_nrf(p, Fock(n, 0.17), 400_000, seed=30 + n)
        assert abs(est.r_hat - 0.83) <= 3 * est.std_err

    def test_thermal_boundary(self):
        p = TwbParams.symmetric(1.0, 100, 0.17, 1.0)
        bound = thermal_noise_max(0.17, 1.0, 100, 1.0, 1.0).value
        est = estimate_nrf(p, MultiThermal(bound, 1.0), 10**6, seed=41)
        assert abs(est.r_hat - 1.0) <= 3 * est.std_err

    @pytest.mark.slow
    def test_validation_grid(self):
        grid = validation_grid()
        assert len(grid) == 24
        misses = []
        for i, (label, p, noise) in enumerate(grid):
            est = estimate_nrf(p, noise, 10**6, seed=1000 + i)
            if abs(est.r_hat - nrf_noisy_lossy(p, noise)) > 3 * est.std_err:
                misses.append(label)
        assert not misses
