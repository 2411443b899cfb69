import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ensemble_oc.measures import (
    Beta44Law,
    DiscreteMeasure,
    beta44_cdf,
    explicit_measure,
    make_rng,
    measure_moment,
    quantile_quadrature,
    read_measure_csv,
    sample_empirical,
    write_measure_csv,
)

LAW = Beta44Law()
VAR = 1.0 / 36.0

# second moment of the N=300, seed=2023 sample, frozen after the first run
REFERENCE_SAMPLE_M2 = float.fromhex("0x1.ca98b7aa8a1a9p-6")


def density(x):
    return 140.0 * x**3 * (1.0 - x) ** 3


class TestDiscreteMeasure:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([0.0, 0.1], [0.5, 0.6])

    @pytest.mark.parametrize("alphas", [[1.0, 0.0], [1.5, -0.5]])
    def test_weights_must_be_positive(self, alphas):
        with pytest.raises(ValueError):
            DiscreteMeasure([0.0, 0.1], alphas)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([np.nan], [1.0])

    def test_uniform(self):
        m = explicit_measure([0.1, 0.2, 0.3, 0.4])
        assert m.N == 4 and m.d == 1
        np.testing.assert_array_equal(m.alphas, 0.25)

    def test_scaled_is_unnormalized(self):
        m = explicit_measure([0.1, -0.1]).scaled(2.0)
        assert m.alphas.sum() == 2.0

    def test_csv_round_trip(self, tmp_path):
        m = sample_empirical(LAW, 7, 3)
        write_measure_csv(tmp_path / "m.csv", m, "hdr")
        assert (tmp_path / "m.csv").read_text().splitlines()[1] == "theta,alpha"
        back = read_measure_csv(tmp_path / "m.csv")
        np.testing.assert_array_equal(back.thetas, m.thetas)
        np.testing.assert_array_equal(back.alphas, m.alphas)


class TestLaw:
    def test_exact_moments(self):
        assert LAW.mean == 0.0
        assert LAW.raw_moment(1) == 0.0
        assert LAW.raw_moment(2) == pytest.approx(VAR, rel=1e-15)
        assert LAW.raw_moment(3) == 0.0

    @pytest.mark.parametrize("p", [2, 4, 6])
    def test_moments_against_quadrature(self, p):
        ref = integrate.quad(lambda x: (x - 0.5) ** p * density(x), 0, 1, epsabs=1e-15)[0]
        assert LAW.raw_moment(p) == pytest.approx(ref, rel=1e-10)


class TestCdf:
    @pytest.mark.parametrize("x,expected", [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)])
    def test_fixed_points(self, x, expected):
        assert beta44_cdf(x) == expected

    def test_quarter_against_quadrature(self):
        ref = integrate.quad(density, 0.0, 0.25, epsabs=1e-15)[0]
        assert abs(beta44_cdf(0.25) - ref) <= 1e-10

    @pytest.mark.parametrize("x", [-0.1, 1.1, np.nan])
    def test_out_of_range(self, x):
        with pytest.raises(ValueError):
            beta44_cdf(x)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert beta44_cdf(lo) <= beta44_cdf(hi) + 1e-15

    @given(st.floats(0, 1))
    def test_matches_scipy(self, x):
        assert beta44_cdf(x) == pytest.approx(stats.beta(4, 4).cdf(x), abs=1e-13)


class TestEmpirical:
    def test_single_atom(self):
        m = sample_empirical(LAW, 1, 12345)
        assert m.N == 1 and m.alphas[0] == 1.0
        assert -0.5 < m.thetas[0, 0] < 0.5

    @pytest.mark.parametrize("N", [0, -3, 2.5])
    def test_bad_size(self, N):
        with pytest.raises(ValueError):
            sample_empirical(LAW, N, 1)

    @pytest.mark.parametrize("seed", [-1, 2**64])
    def test_bad_seed(self, seed):
        with pytest.raises(ValueError):
            make_rng(seed)

    def test_deterministic(self):
        a = sample_empirical(LAW, 50, 99)
        b = sample_empirical(LAW, 50, 99)
        assert a.thetas.tobytes() == b.thetas.tobytes()
        assert sample_empirical(LAW, 50, 100).thetas.tobytes() != a.thetas.tobytes()

    def test_frozen_reference_sample_moment(self):
        m = sample_empirical(LAW, 300, 2023)
        assert measure_moment(m, 2) == REFERENCE_SAMPLE_M2

    def test_large_sample_moments(self):
        N = 100_000
        x = sample_empirical(LAW, N, 2023).thetas[:, 0]
        assert abs(x.mean()) <= 3 * np.sqrt(VAR / N)
        assert abs(np.mean(x**2) - VAR) <= 3e-4

    def test_distribution_matches_law(self):
        x = sample_empirical(LAW, 20_000, 7).thetas[:, 0] + 0.5
        assert stats.kstest(x, stats.beta(4, 4).cdf).pvalue > 1e-3

    def test_moment_errors_shrink(self):
        seeds = range(20)
        medians = []
        for N in (100, 1_000, 10_000, 100_000):
            errs = [[abs(measure_moment(m, p) - LAW.raw_moment(p)) for p in (1, 2, 3, 4)]
                    for m in (sample_empirical(LAW, N, s) for s in seeds)]
            medians.append(np.median(np.array(errs), axis=0))
        medians = np.array(medians)
        assert np.all(np.diff(medians, axis=0) < 0)


class TestQuantile:
    def test_single_atom_is_median(self):
        m = quantile_quadrature(LAW, 1)
        assert m.thetas[0, 0] == 0.0

    @pytest.mark.parametrize("N", [1, 2, 3, 7, 20, 101, 300])
    def test_exact_symmetry(self, N):
        th = quantile_quadrature(LAW, N).thetas[:, 0]
        np.testing.assert_array_equal(th, -th[::-1])
        if N % 2:
            assert th[N // 2] == 0.0
        assert measure_moment(quantile_quadrature(LAW, N), 1) == pytest.approx(0.0, abs=1e-16)

    @pytest.mark.parametrize("N", [4, 25, 100])
    def test_atoms_match_scipy_quantiles(self, N):
        th = quantile_quadrature(LAW, N).thetas[:, 0]
        ref = stats.beta(4, 4).ppf((np.arange(N) + 0.5) / N) - 0.5
        np.testing.assert_allclose(th, ref, atol=1e-11)
        assert np.all(np.diff(th) > 0)

    def test_variance_underestimated(self):
        var = integrate.quad(lambda x: (x - 0.5) ** 2 * density(x), 0, 1, epsabs=1e-15)[0]
        m2 = measure_moment(quantile_quadrature(LAW, 100), 2)
        assert var - 2e-3 <= m2 <= var


class TestMoment:
    def test_total_mass(self):
        assert measure_moment(sample_empirical(LAW, 13, 1), 0) == pytest.approx(1.0, rel=1e-15)

    def test_negative_order(self):
        with pytest.raises(ValueError):
            measure_moment(explicit_measure([0.1]), -1)

    @settings(max_examples=30)
    @given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=10), st.integers(0, 4))
    def test_linear_in_measure(self, thetas, p):
        m = explicit_measure(thetas)
        direct = float(np.mean(np.asarray(thetas) ** p))
        assert measure_moment(m, p) == pytest.approx(direct, rel=1e-12, abs=1e-15)
