import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbnrf.errors import DomainError
from tbnrf.montecarlo import SignalEfficiency, sample_conditional_noise, sample_multithermal
from tbnrf.photon_stats import (
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


def geometric_pmf(k, mean):
    p = 1.0 / (1.0 + mean)
    return p * (1.0 - p) ** k


def convolve_geometric(n, mean, copies):
    """Direct convolution of ``copies`` single-mode thermal laws; independent of the gamma form."""
    dist = np.array([geometric_pmf(k, mean) for k in range(n + 1)])
    out = np.zeros(n + 1)
    out[0] = 1.0
    for _ in range(copies):
        out = np.array([sum(out[j] * dist[i - j] for j in range(i + 1)) for i in range(n + 1)])
    return out


def truncated_support(mean_per_mode, modes):
    """Photon numbers up to the point where cumulative mass exceeds 1 - 1e-12."""
    n = np.arange(0, 200)
    while True:
        p = multithermal_pmf(n, mean_per_mode, modes)
        c = np.cumsum(p)
        idx = np.flatnonzero(c > 1 - 1e-12)
        if idx.size:
            return n[: idx[0] + 1], p[: idx[0] + 1]
        n = np.arange(0, n.size * 2)


class TestMultithermalPmf:
    def test_single_mode_vacuum(self):
        assert multithermal_pmf(0, 1.0, 1) == pytest.approx(0.5, abs=1e-15)

    def test_two_mode_vacuum(self):
        assert multithermal_pmf(0, 1.0, 2) == pytest.approx(0.25, abs=1e-15)

    def test_matches_convolution_of_two_geometrics(self):
        oracle = convolve_geometric(3, 0.5, 2)[3]
        assert oracle == pytest.approx(16 / 243, rel=1e-13)
        assert multithermal_pmf(3, 0.5, 2) == pytest.approx(oracle, rel=1e-12)

    @pytest.mark.parametrize("modes", [1, 2, 3, 5])
    def test_integer_modes_match_convolution(self, modes):
        oracle = convolve_geometric(12, 0.7, modes)
        got = multithermal_pmf(np.arange(13), 0.7, modes)
        np.testing.assert_allclose(got, oracle, rtol=1e-11)

    def test_large_n_is_finite(self):
        p = multithermal_pmf(10**6, 10**6 / 3.0, 3.0)
        assert 0 < p < 1
        assert math.isfinite(math.log(p))

    @pytest.mark.parametrize("b,mu", [(0.0, 1), (-1.0, 2), (1.0, 0.5)])
    def test_domain_errors(self, b, mu):
        with pytest.raises(DomainError):
            multithermal_pmf(0, b, mu)

    @settings(max_examples=40, deadline=None)
    @given(
        b=st.floats(0.01, 5.0),
        mu=st.floats(1.0, 30.0),
    )
    def test_normalisation_and_moments(self, b, mu):
        n, p = truncated_support(b, mu)
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        mean = float(np.dot(n, p))
        var = float(np.dot((n - mean) ** 2, p))
        total = mu * b
        assert mean == pytest.approx(total, abs=1e-8 * max(1, total))
        assert var == pytest.approx(total * (total / mu + 1), abs=1e-8 * max(1, total**2))


class TestBernoulliMoments:
    def test_lossless_fock(self):
        assert bernoulli_detected_moments(MomentPair(5, 0), 1.0) == MomentPair(5, 0)

    def test_binomial_variance(self):
        out = bernoulli_detected_moments(MomentPair(5, 0), 0.4)
        assert out.mean == pytest.approx(2.0, abs=1e-15)
        assert out.variance == pytest.approx(1.2, abs=1e-15)

    def test_super_poissonian_input(self):
        out = bernoulli_detected_moments(MomentPair(2, 6), 0.17)
        assert out.mean == pytest.approx(0.34, abs=1e-15)
        assert out.variance == pytest.approx(0.17**2 * 6 + 0.17 * 0.83 * 2, abs=1e-15)
        assert out.variance == pytest.approx(0.4556, abs=1e-12)

    def test_matches_monte_carlo_thinning(self):
        # geometric law with mean 2 has variance 6
        rng = np.random.default_rng(11)
        n = sample_multithermal(rng, 2.0, 1.0, 400_000)
        k = rng.binomial(n, 0.17)
        out = bernoulli_detected_moments(MomentPair(2, 6), 0.17)
        se_mean = k.std() / math.sqrt(k.size)
        assert abs(k.mean() - out.mean) < 4 * se_mean
        m4 = np.mean((k - k.mean()) ** 4)
        se_var = math.sqrt((m4 - k.var() ** 2) / k.size)
        assert abs(k.var(ddof=1) - out.variance) < 4 * se_var

    @pytest.mark.parametrize("eta", [-0.1, 1.5, float("nan")])
    def test_domain(self, eta):
        with pytest.raises(DomainError):
            bernoulli_detected_moments(MomentPair(1, 1), eta)

    @given(
        mean=st.floats(0, 1e3),
        extra=st.floats(0, 1e3),
        ea=st.floats(0, 1),
        eb=st.floats(0, 1),
    )
    def test_thinning_composes(self, mean, extra, ea, eb):
        start = MomentPair(mean, extra)
        twice = bernoulli_detected_moments(bernoulli_detected_moments(start, ea), eb)
        once = bernoulli_detected_moments(start, ea * eb)
        assert twice.mean == pytest.approx(once.mean, abs=1e-12 * max(1, mean))
        assert twice.variance == pytest.approx(once.variance, abs=1e-12 * max(1, mean, extra))


class TestNoiseMoments:
    def test_none(self):
        assert noise_moments(NoNoise()) == MomentPair(0, 0)

    def test_coherent(self):
        assert noise_moments(Coherent(0.87)) == MomentPair(0.87, 0.87)

    def test_thermal(self):
        out = noise_moments(MultiThermal(0.57, 1.20))
        assert out.mean == 0.57
        assert out.variance == pytest.approx(0.84075, abs=1e-14)

    def test_fock(self):
        out = noise_moments(Fock(10, 0.3))
        assert out.mean == pytest.approx(3.0)
        assert out.variance == pytest.approx(10 * 0.3 * 0.7)

    @given(
        m=st.floats(0, 50),
        mu=st.floats(1, 200),
        c=st.integers(0, 30),
    )
    def test_perfect_heralding_pins_the_count(self, m, mu, c):
        out = noise_moments(Conditional(m, mu, c, 1.0))
        assert out.mean == pytest.approx(c, abs=1e-12 * max(1, c))
        assert out.variance == 0.0

    def test_conditional_is_sub_poissonian_for_large_herald(self):
        out = noise_moments(Conditional(3.0, 100, 5, 0.5))
        assert out.variance < out.mean

    @pytest.mark.parametrize(
        "ctor",
        [
            lambda: Coherent(-1),
            lambda: MultiThermal(1, 0.5),
            lambda: Fock(-1, 0.5),
            lambda: Fock(2.5, 0.5),
            lambda: Fock(3, 1.2),
            lambda: Conditional(1, 0.9, 2, 0.5),
            lambda: Conditional(1, 2, 2, -0.1),
            lambda: MomentPair(-1, 0),
        ],
    )
    def test_invariants_enforced(self, ctor):
        with pytest.raises(DomainError):
            ctor()


def _sample_noise(model, rng, size):
    if isinstance(model, Coherent):
        return rng.poisson(model.mean, size)
    if isinstance(model, MultiThermal):
        return sample_multithermal(rng, model.mean, model.modes, size)
    if isinstance(model, Fock):
        return rng.binomial(model.photon_number, model.detection_efficiency, size)
    if isinstance(model, Conditional):
        return sample_conditional_noise(model, SignalEfficiency.SAME_AS_HERALD, rng, size)
    return np.zeros(size, dtype=int)


@pytest.mark.parametrize(
    "model",
    [
        NoNoise(),
        Coherent(0.87),
        MultiThermal(0.57, 1.2),
        MultiThermal(2.0, 3.5),
        Fock(7, 0.17),
        Conditional(3.0, 10, 5, 0.5),
        Conditional(3.0, 100, 0, 0.5),
    ],
    ids=lambda m: m.kind,
)
def test_sampled_moments_match(model):
    rng = np.random.default_rng(1234)
    x = _sample_noise(model, rng, 200_000).astype(float)
    want = noise_moments(model)
    if want.variance == 0:
        assert np.all(x == want.mean)
        return
    n = x.size
    se_mean = x.std() / math.sqrt(n)
    m4 = np.mean((x - x.mean()) ** 4)
    se_var = math.sqrt((m4 - x.var() ** 2) / n)
    assert abs(x.mean() - want.mean) <= 4 * se_mean
    assert abs(x.var(ddof=1) - want.variance) <= 4 * se_var
