from fractions import Fraction

import numpy as np
import pytest

from qrepeater.pgf_core import Poly, SymbolicPGF, poly_gcd, symbolic_equal
from qrepeater.scheme_catalog import (fixture_names, fixture_pgf, geometric_pgf, parallel_K_pgf,
                                      sequential_pgfs)

q, t = Poly.q(), Poly.t()


def brute_two(p, fn, limit=1000):
    """Sum fn(N1, N2) * P(N1) * P(N2) over the first `limit` attempts of each."""
    k = np.arange(1, limit + 1)
    w = p * (1 - p) ** (k - 1)
    n1, n2 = np.meshgrid(k, k, indexing="ij")
    return float(np.sum(np.outer(w, w) * fn(n1, n2)))


class TestPoly:
    def test_difference_of_squares(self):
        assert (1 - q) * (1 + q) == 1 - q**2

    def test_no_zero_terms_stored(self):
        p = (t + q) - t
        assert p == q
        assert all(c != 0 for c in p.terms.values())

    def test_gcd_cancels_common_factor(self):
        g = SymbolicPGF(1 - t**2, 1 - t)
        assert g.den.degree_t() == 0
        assert symbolic_equal(g, SymbolicPGF(1 + t))

    def test_gcd_of_coprime_is_constant(self):
        a = (1 - t).subs_q(0).t_coeffs()
        b = (2 - t).subs_q(0).t_coeffs()
        assert len(poly_gcd(a, b)) == 1

    def test_derivative(self):
        assert (t**3 + 2 * t).deriv_t() == 3 * t**2 + 2

    def test_zero_denominator_rejected(self):
        with pytest.raises(ZeroDivisionError):
            SymbolicPGF(t, 0)


class TestEvaluate:
    def test_geometric_p1(self):
        assert geometric_pgf(1).evaluate(0.5) == 0.5

    def test_normalisation_exact(self):
        assert geometric_pgf(Fraction(1, 3)).evaluate(1, exact=True) == 1

    def test_sequential_D8_table_point(self):
        p = float(np.exp(-100 / 22))
        _, d = sequential_pgfs(8, Fraction(p))
        assert d.evaluate(np.exp(-4.803e-5)) == pytest.approx(0.9689, abs=5e-5)

    def test_denominator_vanishing(self):
        g = SymbolicPGF(t, 1 - 2 * t)
        with pytest.raises(ZeroDivisionError):
            g.evaluate(0.5)


class TestMoments:
    def test_geometric_p1(self):
        g = geometric_pgf(1)
        assert g.mean() == 1.0
        assert g.variance() == 0.0

    def test_geometric_half_variance(self):
        g = geometric_pgf(Fraction(1, 2))
        assert g.variance(exact=True) == 2

    def test_geometric_quarter_mean_matches_sum(self):
        k = np.arange(1, 2000)
        brute = float(np.sum(k * 0.25 * 0.75 ** (k - 1)))
        assert geometric_pgf(Fraction(1, 4)).mean() == pytest.approx(brute, rel=1e-12)

    def test_two_segment_K_mean(self):
        k = parallel_K_pgf(2, Fraction(1, 2))
        assert k.mean(exact=True) == Fraction(8, 3)
        assert k.mean() == pytest.approx(brute_two(0.5, np.maximum), abs=1e-12)

    def test_abs_difference_variance_brute_force(self):
        g = fixture_pgf("two_segment_D", Fraction(1, 2))
        mean = brute_two(0.5, lambda a, b: np.abs(a - b))
        second = brute_two(0.5, lambda a, b: (a - b) ** 2)
        assert g.mean() == pytest.approx(mean, abs=1e-12)
        assert g.variance() == pytest.approx(second - mean**2, abs=1e-12)

    def test_exp_moment_alpha_zero(self):
        assert fixture_pgf("optimal_4", Fraction(1, 5)).exp_moment(0.0) == 1.0

    def test_exp_moment_monotone(self):
        g = fixture_pgf("doubling_4", Fraction(1, 10))
        vals = [g.exp_moment(a) for a in (0, 0.01, 0.1, 1, 5)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert g.exp_moment(0.1, 2) <= g.exp_moment(0.1, 1)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            geometric_pgf(Fraction(1, 2)).exp_moment(-1)


@pytest.mark.parametrize("name", fixture_names())
def test_fixture_series_nonnegative_and_normalised(name):
    g = fixture_pgf(name, Fraction(2, 7))
    assert g.evaluate(1, exact=True) == 1
    coeffs = g.series(50)
    assert min(coeffs) >= 0
    assert sum(coeffs) <= 1


def test_series_geometric():
    coeffs = geometric_pgf(Fraction(1, 2)).series(5)
    assert coeffs[3] == Fraction(1, 8)
    assert coeffs[0] == 0


def test_text_round_trip():
    g = fixture_pgf("optimal_4")
    back = SymbolicPGF.from_text(g.to_text())
    assert back.to_text() == g.to_text()
    assert symbolic_equal(back, g)


def test_symbolic_equal_detects_difference():
    a = geometric_pgf(Fraction(1, 2))
    assert symbolic_equal(a, a)
    assert not symbolic_equal(a, geometric_pgf(Fraction(1, 3)))
