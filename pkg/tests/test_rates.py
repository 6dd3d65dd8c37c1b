import math

import numpy as np
import pytest

from qrepeater import rates
from qrepeater.rates import RepeaterParams, secret_key_rate
from qrepeater.scheme_catalog import SchemeSpec


class TestParams:
    def test_success_probability(self):
        p = rates.success_probability(RepeaterParams(L0=100))
        assert p == math.exp(-100 / 22)
        assert p == pytest.approx(0.010616, abs=1e-6)

    def test_zero_length_limit(self):
        p = rates.success_probability(RepeaterParams(L0=1e-12, p_link=0.7))
        assert p == pytest.approx(0.7, rel=1e-12)

    def test_alpha_signalling(self):
        a = rates.inverse_eff_coherence(RepeaterParams(L0=100, tau_coh=0.1))
        assert round(a, 4) == 0.0048

    def test_time_models(self):
        base = RepeaterParams(L0=100, tau_clock=1e-6)
        sig = base.tau
        assert base.replace(time_model="clock").tau == 1e-6
        assert base.replace(time_model="combined").tau == pytest.approx(sig + 1e-6, rel=1e-15)

    @pytest.mark.parametrize("kw", [dict(L0=0), dict(mu=1.1), dict(M=0), dict(tau_coh=0),
                                    dict(dephasing_multiplicity=3), dict(time_model="sundial")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RepeaterParams(**kw)


class TestKeyFractions:
    def test_perfect(self):
        assert rates.secret_key_fraction_bb84(0, 0) == 1.0
        assert rates.secret_key_fraction_six_state((1, 0, 0, 0)) == 1.0

    def test_bb84_threshold(self):
        assert rates.secret_key_fraction_bb84(0.11, 0.11) == pytest.approx(0.0, abs=1e-3)
        assert rates.secret_key_fraction_bb84(0.12, 0.12) == 0.0

    def test_six_state_beats_bb84_on_depolarised(self):
        for mu in (0.8, 0.85, 0.9):
            w = [mu + (1 - mu) / 4] + [(1 - mu) / 4] * 3
            e = (1 - mu) / 2
            assert rates.secret_key_fraction_six_state(w) >= rates.secret_key_fraction_bb84(e, e)

    def test_binary_entropy_ends(self):
        assert rates.binary_entropy(0) == rates.binary_entropy(1) == 0
        assert rates.binary_entropy(0.5) == pytest.approx(1.0)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            rates.secret_key_fraction_bb84(0.7, 0)
        with pytest.raises(ValueError):
            rates.secret_key_fraction_six_state((0.5, 0.2, 0.2, 0.2))


class TestPlob:
    def test_short(self):
        # one bit per use is reached at L_att ln 2; 15 km sits just below it
        assert rates.plob(22 * math.log(2)) == pytest.approx(1.0, rel=1e-14)
        assert rates.plob(15) == pytest.approx(1.01653, abs=1e-5)

    def test_long(self):
        assert 2e-16 < rates.plob(800) < 4e-16

    def test_one_attenuation_length(self):
        assert rates.plob(22) == pytest.approx(-math.log2(1 - math.exp(-1)), rel=1e-14)
        assert round(rates.plob(22), 4) == 0.6617

    def test_per_second(self):
        assert rates.plob_per_second(800) == pytest.approx(rates.plob(800) * 1e9)


class TestThresholds:
    @pytest.mark.parametrize("n,key,mode,want", [(2, "bb84", "mu0_eq_mu", 0.920), (4, "bb84", "mu0_eq_mu", 0.965),
                                                 (2, "six_state", "mu0_eq_1", 0.748)])
    def test_minimal_mu(self, n, key, mode, want):
        assert round(rates.minimal_mu(n, key, mode), 3) == want

    def test_thresholds_round_to_quoted(self):
        assert round(rates.error_threshold("bb84"), 3) == rates.Q_BB84
        assert round(rates.error_threshold("six_state"), 3) == rates.Q_SIX_STATE

    def test_minimal_mu_zeroes_key(self):
        mu = rates.minimal_mu(4)
        e = (1 - mu**7) / 2
        assert rates.secret_key_fraction_bb84(e, e) == pytest.approx(0, abs=1e-9)
        mu = rates.minimal_mu(4, "six_state")
        w = [mu**7 + (1 - mu**7) / 4] + [(1 - mu**7) / 4] * 3
        assert rates.secret_key_fraction_six_state(w) == pytest.approx(0, abs=1e-9)

    def test_vanishing_target_gives_minimal_mu(self):
        params = RepeaterParams(n=2, tau_coh=1e12, p_link=0.7)
        got = rates.threshold_mu_vs_plob(SchemeSpec(2), 200, params, k=1e-12)
        assert got == pytest.approx(rates.minimal_mu(2), abs=1e-4)

    def test_feasibility_flips_with_link_efficiency(self):
        params = RepeaterParams(n=2, tau_coh=0.1)
        assert rates.threshold_mu_vs_plob(SchemeSpec(2), 200, params.replace(p_link=0.05)) is None
        assert rates.threshold_mu_vs_plob(SchemeSpec(2), 200, params.replace(p_link=0.7)) is not None

    def test_higher_target_needs_more(self):
        params = RepeaterParams(n=2, tau_coh=0.1, p_link=0.7)
        one = rates.threshold_mu_vs_plob(SchemeSpec(2), 100, params, k=1)
        two = rates.threshold_mu_vs_plob(SchemeSpec(2), 100, params, k=2)
        assert two >= one


class TestMultiplexing:
    def test_single_mode(self):
        link = rates.multiplex(RepeaterParams(L0=50))
        assert link.p_eff == link.p

    def test_effective_probability(self):
        L0 = -22 * math.log(0.01)
        assert rates.multiplex(RepeaterParams(L0=L0, M=10)).p_eff == pytest.approx(0.09562, abs=1e-5)

    def test_equivalent_to_longer_coherence(self):
        a = secret_key_rate(SchemeSpec(2), RepeaterParams(n=2, L0=200, M=10, tau_coh=1)).skr_per_use
        b = secret_key_rate(SchemeSpec(2), RepeaterParams(n=2, L0=200, M=1, tau_coh=10)).skr_per_use
        assert a == pytest.approx(b, rel=0.05)

    def test_midpoint_grows_with_M(self):
        mids = [rates.multiplex_midpoint(M) for M in (2, 10, 100, 1000)]
        assert mids == sorted(mids)
        assert mids[0] < 0.1
        # the crossover sits near M p ~ 1, i.e. L0 ~ L_att ln M
        for M, mid in zip((10, 100, 1000), mids[1:]):
            assert abs(mid - 22 * math.log(M)) < 22


class TestRates:
    def test_table_point_optimal(self):
        params = RepeaterParams(n=8, L0=100, tau_coh=10, mu=0.99, mu0=0.99)
        r = secret_key_rate(SchemeSpec(8), params)
        assert r.skr_per_use == pytest.approx(0.0009, rel=0.10)
        r = secret_key_rate(SchemeSpec(8), params.replace(time_model="combined"))
        assert r.skr_per_second == pytest.approx(1.9, rel=0.10)

    def test_table_point_sequential(self):
        params = RepeaterParams(n=8, L0=100, tau_coh=10, mu=0.99, mu0=0.99)
        assert secret_key_rate(SchemeSpec(8, "sequential"), params).skr_per_use == pytest.approx(0.0003, rel=0.10)

    def test_below_threshold_zero(self):
        params = RepeaterParams(n=8, L0=100, mu=0.95, mu0=0.95)
        assert secret_key_rate(SchemeSpec(8, "sequential"), params).skr_per_use == 0

    def test_invariants(self):
        params = RepeaterParams(n=4, L0=50, tau_coh=1, mu=0.99, mu0=0.995, F0=0.999)
        r = secret_key_rate(SchemeSpec(4), params)
        assert r.skr_per_use <= r.raw_rate <= 1
        assert r.skr_per_second == r.skr_per_use / params.tau

    def test_n_mismatch(self):
        with pytest.raises(ValueError):
            secret_key_rate(SchemeSpec(4), RepeaterParams(n=2))

    def test_large_parallel_needs_monte_carlo(self):
        with pytest.raises(NotImplementedError):
            secret_key_rate(SchemeSpec(9, swapping="iterative"), RepeaterParams(n=9))

    def test_monotone_grid(self):
        rng = np.random.default_rng(5)
        schemes = [SchemeSpec(2), SchemeSpec(3, "sequential"), SchemeSpec(4)]
        for i in range(100):
            s = schemes[i % 3]
            base = RepeaterParams(n=s.n, L0=float(rng.uniform(5, 150)), p_link=float(rng.uniform(0.1, 0.95)),
                                  tau_coh=float(rng.uniform(0.05, 20)), mu=float(rng.uniform(0.95, 0.999)),
                                  mu0=float(rng.uniform(0.95, 0.999)), F0=float(rng.uniform(0.97, 0.999)))
            here = secret_key_rate(s, base).skr_per_use
            for field in ("p_link", "mu", "mu0", "F0"):
                up = base.replace(**{field: min(1.0, getattr(base, field) + 0.01)})
                assert secret_key_rate(s, up).skr_per_use >= here - 1e-15, field
            # shorter coherence means larger alpha
            assert secret_key_rate(s, base.replace(tau_coh=base.tau_coh / 2)).skr_per_use <= here + 1e-15


class TestDropPoint:
    def test_none_without_noise(self):
        assert rates.drop_point_exp_dephasing(RepeaterParams(n=8)) is None

    @pytest.mark.parametrize("distribution,tau_coh", [("sequential", 0.1), ("sequential", 10), ("parallel", 10)])
    def test_estimate_near_bisection(self, distribution, tau_coh):
        s = SchemeSpec(8, distribution)
        params = RepeaterParams(n=8, tau_coh=tau_coh, mu=0.99, mu0=0.99)
        exact = rates.skf_zero_distance(s, params)
        estimate = rates.drop_distance_estimate(s, params)
        assert estimate == pytest.approx(exact, rel=0.10)

    def test_monotone_in_mu(self):
        need = [rates.drop_point_exp_dephasing(RepeaterParams(n=4, mu=m, mu0=m)) for m in (0.97, 0.98, 0.99, 0.999)]
        assert need == sorted(need, reverse=True)
