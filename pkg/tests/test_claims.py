import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from reinsim.claims import (
    ClaimBatch,
    FrequencySpec,
    Lognormal,
    Mixture,
    Pareto,
    PremiumSpec,
    default_combined,
    distribution_from_dict,
    expected_claim_size,
    gross_premium_rate,
    quantile_boundaries,
    sample_claim_count,
    sample_claim_sizes,
)


class TestFrequency:
    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(ValueError):
            FrequencySpec(0.0)
        with pytest.raises(ValueError):
            FrequencySpec(-1.0)

    def test_zero_interval_gives_zero(self):
        assert sample_claim_count(FrequencySpec(10.0), 0.0, np.random.default_rng(0)) == 0

    def test_negative_interval_rejected(self):
        with pytest.raises(ValueError):
            sample_claim_count(FrequencySpec(10.0), -0.1, np.random.default_rng(0))

    def test_count_mean_and_variance(self):
        rng = np.random.default_rng(1)
        f = FrequencySpec(10.0)
        draws = np.array([sample_claim_count(f, 0.05, rng) for _ in range(100_000)])
        assert abs(draws.mean() - 0.5) < 0.01
        assert abs(draws.var() - 0.5) / 0.5 < 0.05

    def test_count_reproducible(self):
        f = FrequencySpec(10.0)
        a = sample_claim_count(f, 1.0, np.random.default_rng(42))
        b = sample_claim_count(f, 1.0, np.random.default_rng(42))
        assert a == b


class TestSeverity:
    def test_empty_sample(self):
        for spec in (Lognormal(3.5, 1.0), Pareto(10, 3), default_combined()):
            assert sample_claim_sizes(spec, 0, np.random.default_rng(0)).size == 0

    def test_negative_n_rejected(self):
        with pytest.raises(ValueError):
            sample_claim_sizes(Lognormal(0, 1), -1, np.random.default_rng(0))

    def test_lognormal_sample_mean(self):
        x = sample_claim_sizes(Lognormal(3.5, 1.0), 200_000, np.random.default_rng(2))
        assert abs(x.mean() / math.exp(4.0) - 1) < 0.02
        assert np.all(x > 0)

    def test_pareto_sample_mean(self):
        x = sample_claim_sizes(Pareto(10, 3), 200_000, np.random.default_rng(3))
        assert abs(x.mean() / 15.0 - 1) < 0.02
        assert x.min() >= 10

    def test_pareto_is_type_one(self):
        # KS against scipy's Type-I Pareto
        x = Pareto(10, 3).sample(20_000, np.random.default_rng(4))
        assert stats.kstest(x, stats.pareto(b=3, scale=10).cdf).pvalue > 0.01

    def test_mixture_sample_mean(self):
        m = Mixture(((0.3, Lognormal(1.0, 0.5)), (0.7, Pareto(2.0, 4.0))))
        x = m.sample(200_000, np.random.default_rng(5))
        assert abs(x.mean() / m.mean() - 1) < 0.02

    @pytest.mark.parametrize("bad", [(0.0, -1.0), (float("nan"), 1.0)])
    def test_lognormal_validation(self, bad):
        with pytest.raises(ValueError):
            Lognormal(*bad)

    def test_pareto_validation(self):
        with pytest.raises(ValueError):
            Pareto(0.0, 2.0)
        with pytest.raises(ValueError):
            Pareto(1.0, 0.0)

    def test_mixture_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            Mixture(((0.5, Lognormal(0, 1)), (0.4, Lognormal(1, 1))))
        with pytest.raises(ValueError):
            Mixture(((1.5, Lognormal(0, 1)), (-0.5, Lognormal(1, 1))))
        Mixture(((0.5, Lognormal(0, 1)), (0.5 + 1e-12, Lognormal(1, 1))))


class TestExpectedSize:
    def test_lognormal(self):
        assert expected_claim_size(Lognormal(0, 1)) == pytest.approx(1.6487212707, rel=1e-9)

    def test_pareto(self):
        assert expected_claim_size(Pareto(1, 2)) == pytest.approx(2.0)

    def test_single_component_mixture(self):
        m = Mixture(((1.0, Lognormal(3.5, 1.0)),))
        assert expected_claim_size(m) == pytest.approx(54.598150033, rel=1e-9)

    def test_infinite_mean(self):
        with pytest.raises(ValueError):
            expected_claim_size(Pareto(1, 1.0))
        with pytest.raises(ValueError):
            gross_premium_rate(0.1, FrequencySpec(1.0), Pareto(1, 0.5))

    @pytest.mark.parametrize(
        "spec,pdf,lo",
        [
            (Lognormal(0.3, 0.7), stats.lognorm(s=0.7, scale=math.exp(0.3)).pdf, 0.0),
            (Pareto(2.0, 3.5), stats.pareto(b=3.5, scale=2.0).pdf, 2.0),
        ],
    )
    def test_mean_matches_quadrature(self, spec, pdf, lo):
        val, _ = integrate.quad(lambda x: x * pdf(x), lo, np.inf, limit=200)
        assert spec.mean() == pytest.approx(val, rel=1e-7)


class TestPremium:
    def test_zero_loading(self):
        assert gross_premium_rate(0.0, FrequencySpec(10), Lognormal(3.5, 1.0)) == pytest.approx(545.98, abs=0.005)

    def test_default_loading(self):
        assert gross_premium_rate(0.1, FrequencySpec(10), Lognormal(3.5, 1.0)) == pytest.approx(600.58, abs=0.005)

    def test_zero_lambda_rejected(self):
        with pytest.raises(ValueError):
            gross_premium_rate(0.0, FrequencySpec(0.0), Lognormal(3.5, 1.0))

    def test_negative_loading_rejected(self):
        with pytest.raises(ValueError):
            gross_premium_rate(-0.1, FrequencySpec(1), Lognormal(0, 1))

    def test_premium_spec(self):
        p = PremiumSpec.from_loading(0.1, FrequencySpec(10), Lognormal(3.5, 1.0))
        assert p.c == pytest.approx(11 * math.exp(4))
        with pytest.raises(ValueError):
            PremiumSpec(0.1, 0.0)


class TestQuantiles:
    @pytest.mark.parametrize("spec", [Lognormal(3.5, 1.0), Pareto(5.0, 2.5), default_combined()])
    @pytest.mark.parametrize("q", [0.1, 0.5, 0.9, 0.995])
    def test_cdf_inverts_quantile(self, spec, q):
        assert float(spec.cdf(spec.quantile(q))) == pytest.approx(q, abs=1e-8)

    def test_boundaries_start_at_zero(self):
        b = quantile_boundaries(Lognormal(3.5, 1.0), [0.0, 0.5, 0.9])
        assert b[0] == 0.0
        assert b[1] == pytest.approx(math.exp(3.5))
        assert b[2] > b[1]


class TestSerialization:
    @pytest.mark.parametrize("spec", [Lognormal(3.5, 1.0), Pareto(5.0, 2.5), default_combined()])
    def test_round_trip(self, spec):
        assert distribution_from_dict(spec.to_dict()) == spec

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown"):
            distribution_from_dict({"kind": "weibull"})

    def test_missing_parameter(self):
        with pytest.raises(ValueError, match="sigma"):
            distribution_from_dict({"kind": "lognormal", "mu": 1.0})


def test_claim_batch_invariants():
    b = ClaimBatch(np.array([1.0, 2.0]), 3)
    assert b.count == 2
    with pytest.raises(ValueError):
        ClaimBatch(np.array([-1.0]), 0)


@settings(max_examples=50, deadline=None)
@given(
    mu=st.floats(-2, 5),
    sigma=st.floats(0.1, 2.0),
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(0, 50),
)
def test_sampling_is_pure_function_of_rng_state(mu, sigma, seed, n):
    spec = Lognormal(mu, sigma)
    a = sample_claim_sizes(spec, n, np.random.default_rng(seed))
    b = sample_claim_sizes(spec, n, np.random.default_rng(seed))
    assert np.array_equal(a, b)
    assert np.all(a > 0)
