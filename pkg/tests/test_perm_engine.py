import itertools
import random
from fractions import Fraction

import numpy as np
import pytest

from qrepeater import perm_engine as pe
from qrepeater.pgf_core import symbolic_equal
from qrepeater.scheme_catalog import load_fixture, sequential_pgfs


@pytest.mark.parametrize("policy,ns,want", [
    ("doubling", (1, 1, 1, 1), 0),
    ("optimal_global", (2, 1, 3, 3), 2),
    ("doubling", (1, 2, 3, 4), 4),
    ("optimal_greedy", (1, 2, 3, 4), 3),
    ("iterative", (4, 3, 2, 1), 6),
    ("sequential", (5, 9, 2), 11),
])
def test_single_outcomes(policy, ns, want):
    assert pe.dephasing_value(policy, ns) == want


def _brute_optimal(ns):
    """Cheapest sum of waits over every order of swapping ready neighbours."""
    best = None

    def walk(chain):
        nonlocal best
        if len(chain) == 1:
            best = chain[0][1] if best is None else min(best, chain[0][1])
            return
        for i in range(len(chain) - 1):
            (a, da), (b, db) = chain[i], chain[i + 1]
            walk(chain[:i] + [(max(a, b), da + db + abs(a - b))] + chain[i + 2:])

    walk([(v, 0) for v in ns])
    return best


def test_global_matches_exhaustive_merge_orders():
    rng = random.Random(3)
    for n in (2, 3, 4, 5):
        for _ in range(200):
            ns = tuple(rng.randint(1, 12) for _ in range(n))
            assert pe.dephasing_value("optimal_global", ns) == _brute_optimal(ns)


def test_greedy_equals_global_small_bound():
    for n in (2, 3, 4, 5):
        ok, bad = pe.verify_greedy_equals_global(n, 5, random_samples=2000)
        assert ok, bad


def test_rejects_non_positive_attempts():
    with pytest.raises(ValueError):
        pe.dephasing_value("doubling", (0, 1, 1, 1))


def test_doubling_needs_power_of_two():
    with pytest.raises(ValueError):
        pe.get_policy("doubling").check_arity(3)


class TestLinearForms:
    @pytest.mark.parametrize("policy,n", [("optimal_greedy", 3), ("doubling", 4), ("mixed31", 4), ("iterative", 4)])
    def test_disjoint_cover(self, policy, n):
        table = pe.derive_linear_forms(policy, n)
        rng = np.random.default_rng(7)
        samples = rng.geometric(0.3, size=(20_000, n))
        for ns in samples:
            hits = pe.lookup(table, ns)
            assert len(hits) == 1, ns
            assert hits[0] == pe.dephasing_value(policy, [int(v) for v in ns])

    def test_ties_covered_exhaustively(self):
        table = pe.derive_linear_forms("optimal_greedy", 4)
        for ns in itertools.product(range(1, 5), repeat=4):
            assert pe.lookup(table, ns) == [pe.dephasing_value("optimal_greedy", ns)]

    def test_two_segment_table(self):
        table = pe.derive_linear_forms("optimal_greedy", 2)
        assert len(table) == 2
        assert not pe.refined_domains(table)


class TestPartitionSums:
    def test_sequential_policy_is_sequential_D(self):
        p = Fraction(1, 4)
        _, d = sequential_pgfs(4, p)
        assert symbolic_equal(pe.pgf_from_policy("sequential", 4, p), d)

    def test_series_against_enumeration(self):
        p = Fraction(1, 3)
        g = pe.pgf_from_policy("doubling", 4, p)
        coeffs = g.series(6)
        brute = [Fraction(0)] * 6
        for ns in itertools.product(range(1, 40), repeat=4):
            d = pe.dephasing_value("doubling", ns)
            if d < 6:
                w = Fraction(1)
                for v in ns:
                    w *= p * (1 - p) ** (v - 1)
                brute[d] += w
        # enumeration truncated at 39 attempts per segment
        for a, b in zip(coeffs, brute):
            assert abs(float(a - b)) < 1e-12

    def test_float_sum_matches_exact(self):
        ps = pe.partition_sum("mixed31", 4)
        g = pe.pgf_from_policy("mixed31", 4, Fraction(1, 10))
        assert ps.mean(0.1) == pytest.approx(float(g.mean()), rel=1e-12)
        assert ps.evaluate(0.1, 0.95) == pytest.approx(float(g.evaluate(0.95)), rel=1e-12)

    def test_bivariate_matches_fixture(self):
        assert symbolic_equal(pe.pgf_from_policy("iterative", 4), load_fixture("iterative_4"))

    def test_optimal_has_smallest_mean(self):
        p = Fraction(1, 20)
        best = pe.pgf_from_policy("optimal_greedy", 4, p).mean()
        for other in ("doubling", "iterative", "mixed31"):
            assert best <= pe.pgf_from_policy(other, 4, p).mean()

    def test_doubling_and_mixed31_share_mean(self):
        for p in (Fraction(1, 2), Fraction(1, 7), Fraction(1, 100)):
            assert pe.exact_mean_ratio("doubling", "mixed31", 4, p) == 1

    def test_small_p_stable(self):
        ps = pe.partition_sum("optimal_greedy", 4)
        p = 1e-4
        exact = pe.pgf_from_policy("optimal_greedy", 4, Fraction(p))
        assert ps.exp_moment(p, 1e-3) == pytest.approx(float(exact.evaluate(Fraction(np.exp(-1e-3)))), rel=1e-9)
