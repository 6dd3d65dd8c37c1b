import math
from fractions import Fraction

import numpy as np
import pytest

from qrepeater import protocols as pr
from qrepeater import quantum_state as qs
from qrepeater import rates
from qrepeater.protocols import ProtocolSpec, TwinFieldHook
from qrepeater.rates import RepeaterParams
from qrepeater.scheme_catalog import SchemeSpec


class TestCabrillo:
    def test_success_example(self):
        assert pr.cabrillo_success(1, 1, "pnrd") == Fraction(1, 2)
        assert pr.cabrillo_success(Fraction(1), Fraction(1), "pnrd") == Fraction(1, 2)

    def test_success_vanishes_without_transmission(self):
        assert pr.cabrillo_success(0.7, 0.0) == 0

    def test_channel_example(self):
        ch = pr.cabrillo_channel(Fraction(1), Fraction(1, 2), "pnrd")
        assert tuple(ch) == (Fraction(2, 3), Fraction(1, 6), Fraction(1, 6), 0)

    def test_onoff_at_least_pnrd(self):
        for g in np.linspace(0.05, 1.5, 15):
            for eta in np.linspace(0.01, 1, 15):
                assert pr.cabrillo_success(g, eta, "onoff") >= pr.cabrillo_success(g, eta, "pnrd")

    def test_channels_normalised(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            g, eta = rng.uniform(0.01, 2), rng.uniform(0, 1)
            for det in pr.DETECTORS:
                ch = pr.cabrillo_channel(g, eta, det)
                assert sum(ch) == pytest.approx(1, abs=1e-14)
                assert min(ch) >= 0

    def test_detectors_agree_at_low_transmission(self):
        a = pr.cabrillo_success(0.5, 1e-4, "pnrd")
        b = pr.cabrillo_success(0.5, 1e-4, "onoff")
        assert abs(a - b) < 1e-8

    @pytest.mark.parametrize("gamma,eta", [(0, 0.5), (1, 1.5)])
    def test_invalid(self, gamma, eta):
        with pytest.raises(ValueError):
            pr.cabrillo_success(gamma, eta)


class TestCabrilloQbers:
    def test_perfect(self):
        params = RepeaterParams(n=1, L0=1e-12)
        e_x, e_z = pr.cabrillo_qbers(1, params, 0.5)
        assert e_x == pytest.approx(0, abs=1e-12) and e_z == pytest.approx(0, abs=1e-12)

    def test_ez_ignores_dephasing(self):
        params = RepeaterParams(n=3, L0=40, mu=0.99)
        assert pr.cabrillo_qbers(3, params, 0.3, exp_dephasing=0.2)[1] == pr.cabrillo_qbers(3, params, 0.3)[1]

    def test_weak_excitation_limit(self):
        params = RepeaterParams(n=4, L0=50, mu=0.99, mu0=0.98, F0=0.99)
        e_x, _ = pr.cabrillo_qbers(4, params, 1e-4, exp_dephasing=0.9)
        _, e_x_dr = qs.qbers(qs.FinalStateParams(4, 0.99, 0.98, 0.99, 0.9))
        assert abs(e_x - e_x_dr) < 1e-6

    def test_channel_route_matches_formula(self):
        params = RepeaterParams(n=3, L0=60, mu=0.99, mu0=0.995, F0=0.995)
        for det in pr.DETECTORS:
            eta = pr.half_segment_transmission(params)
            ch = pr.final_channel(3, params, pr.cabrillo_channel(0.4, eta, det), 0.8)
            e_x, e_z = pr.pauli_qbers(ch)
            want = pr.cabrillo_qbers(3, params, 0.4, det, 0.8)
            assert e_x == pytest.approx(want[0], abs=1e-14)
            assert e_z == pytest.approx(want[1], abs=1e-14)


class TestRates:
    def test_dual_rail_regression_identity(self):
        params = RepeaterParams(n=4, L0=40, p_link=1, F0=1, mu=0.995, mu0=0.995, tau_coh=1)
        dr = pr.protocol_rate(ProtocolSpec("dual_rail"), params)
        base = rates.secret_key_rate(SchemeSpec(4), params)
        assert dr.skr_per_use == pytest.approx(base.skr_per_use, rel=1e-12)
        assert dr.skr_per_second == pytest.approx(base.skr_per_second, rel=1e-12)

    def test_dual_rail_squares_link(self):
        params = RepeaterParams(n=2, L0=20, p_link=0.9)
        assert pr.dual_rail_params(params).p_link == pytest.approx(0.81)

    def test_hook(self):
        hook = TwinFieldHook(lambda p: 0.1, lambda p: pr.PauliChannelTuple(0.97, 0.01, 0.01, 0.01))
        r = pr.protocol_rate(ProtocolSpec("hook", hook=hook), RepeaterParams(n=2, L0=30))
        assert r.p == 0.1 and 0 < r.skf < 1

    def test_hook_required(self):
        with pytest.raises(ValueError):
            ProtocolSpec("hook")

    def test_dual_rail_about_one_bit_per_second(self):
        from qrepeater.verify import dual_rail_rate

        assert 0.5 <= dual_rail_rate() <= 2.0

    def test_cabrillo_below_dual_rail_far_out(self):
        params = RepeaterParams(n=4, tau_coh=10, p_link=0.9, mu=0.98, mu0=0.98, F0=0.98,
                                dephasing_multiplicity=2, time_model="combined")
        for L in (200, 500, 800):
            p = params.replace(L0=L / 4)
            dr = pr.protocol_rate(ProtocolSpec("dual_rail"), p).skr_per_second
            cab = pr.protocol_rate(ProtocolSpec("cabrillo"), p).skr_per_second
            assert cab <= dr


class TestOptimizeGamma:
    def test_lossless_hits_upper_bracket(self):
        params = RepeaterParams(n=2, L0=1e-9)
        assert pr.optimize_gamma(2, params, "pnrd") == pytest.approx(1.0, rel=1e-3)

    def test_probes_never_beat_optimum(self):
        params = RepeaterParams(n=2, L0=30, tau_coh=1, mu=0.995, mu0=0.995)
        best = pr.optimize_gamma(2, params)
        skr = lambda g: pr.protocol_rate(ProtocolSpec("cabrillo", g), params).skr_per_use
        top = skr(best)
        for g in np.random.default_rng(4).uniform(1e-4, 1, 100):
            assert skr(g) <= top * (1 + 1e-3)

    def test_flat_zero(self):
        params = RepeaterParams(n=2, L0=50, mu=0.8, mu0=0.8)
        assert pr.optimize_gamma(2, params) is None

    def test_comparison_rows(self):
        rows = pr.per_second_comparison([ProtocolSpec("dual_rail")], [1, 2], [100.0], RepeaterParams(n=2))
        assert rows[0]["skr_per_second"] == pytest.approx(rates.plob(100) * 1e9)
        assert [r["n"] for r in rows] == [1, 2]
