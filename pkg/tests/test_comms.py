import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsolink.comms import (
    PowerTrace,
    ReceiverModel,
    ber_curve,
    ber_floor_from_phase_jumps,
    ber_instant,
    cumulated_ber,
    frame_rate_invariance_check,
    monte_carlo_cumulated_ber,
    power_penalty,
    sync_loss_stats,
)
from fsolink.errors import CurveCrossingError, ParameterError

OOK = ReceiverModel(format="ook", sensitivity_dbm=-39.0)


class TestBerInstant:
    def test_anchor_at_sensitivity(self):
        assert abs(ber_instant(-39.0, OOK) / 1e-9 - 1) < 0.05

    def test_limit_of_vanishing_power(self):
        assert abs(ber_instant(-300.0, OOK) - 0.5) < 1e-6

    def test_floor_shows_at_high_power(self):
        model = ReceiverModel(sensitivity_dbm=-39.0, floor_duty=4e-7)
        # floor = duty / 2 = 2e-7, visible once the Gaussian term dies
        assert abs(ber_instant(-9.0, model) / 2e-7 - 1) < 0.05
        assert abs(ber_instant(0.0, model) / 2e-7 - 1) < 0.05

    def test_dpsk_is_ook_shifted_3_db(self):
        dpsk = ReceiverModel(format="dpsk", sensitivity_dbm=-39.0)
        rop = np.linspace(-46, -30, 40)
        np.testing.assert_allclose(
            ber_instant(rop, dpsk), ber_instant(rop + 3.0, OOK), rtol=1e-12
        )

    @given(st.floats(min_value=-60.0, max_value=0.0), st.floats(min_value=0.0, max_value=5.0))
    @settings(max_examples=80, deadline=None)
    def test_monotone_non_increasing_in_power(self, rop, step):
        assert ber_instant(rop + step, OOK) <= ber_instant(rop, OOK) + 1e-15

    def test_bounded(self):
        model = ReceiverModel(sensitivity_dbm=-39.0, floor_duty=1e-3)
        rop = np.linspace(-80, 10, 200)
        ber = ber_instant(rop, model)
        assert np.all(ber <= 0.5) and np.all(ber >= 0.5 * 1e-3 - 1e-18)


class TestCumulatedBer:
    def test_constant_power_equals_instant(self):
        trace = PowerTrace.from_rop(np.full(10, -38.0))
        assert cumulated_ber(trace, OOK) == pytest.approx(ber_instant(-38.0, OOK), rel=1e-12)

    def test_two_frame_arithmetic_mean(self):
        # frames engineered to BER 1e-3 and 1e-9 exactly, mean 5.0000005e-4
        from scipy.special import erfcinv

        def rop_for(ber):
            q = math.sqrt(2.0) * erfcinv(2 * ber)
            return -39.0 + 20 * math.log10(q / 6.0)

        trace = np.array([rop_for(1e-3), rop_for(1e-9)])
        assert cumulated_ber(trace, OOK) == pytest.approx(5.0000005e-4, rel=1e-6)

    def test_monte_carlo_oracle_within_3_sigma(self):
        rng = np.random.default_rng(10)
        rop = -39.0 + rng.uniform(-4, 3, 20)
        exact = cumulated_ber(rop, OOK)
        est, se = monte_carlo_cumulated_ber(rop, OOK, bits_per_frame=10**7, seed=3)
        assert abs(est - exact) <= 3 * se

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        rop = rng.uniform(-43, -30, 15)
        assert cumulated_ber(rop, OOK) == pytest.approx(
            cumulated_ber(rop[::-1].copy(), OOK), rel=1e-14
        )

    def test_bounded_by_extremes(self):
        rop = np.array([-42.0, -38.0, -35.0])
        c = cumulated_ber(rop, OOK)
        bers = ber_instant(rop, OOK)
        assert bers.min() <= c <= bers.max()


class TestFrameRateInvariance:
    def test_invariant_across_rates(self):
        rng = np.random.default_rng(1)
        trace = PowerTrace.from_rop(rng.uniform(-42, -30, 50), frame_rate_hz=1500.0)
        ok, dev, flagged = frame_rate_invariance_check(trace, OOK, [1500.0, 3.0, 1.0])
        assert ok and dev <= 1e-12 and not flagged

    def test_single_frame_trivially_invariant(self):
        trace = PowerTrace.from_rop([-35.0])
        ok, dev, _ = frame_rate_invariance_check(trace, OOK, [10.0, 1.0])
        assert ok and dev == 0.0

    def test_slow_loop_flagged(self):
        trace = PowerTrace.from_rop(
            np.full(5, -35.0), frame_rate_hz=1500.0, correction_bandwidth_hz=100.0
        )
        ok, _, flagged = frame_rate_invariance_check(trace, OOK, [1500.0])
        assert flagged and not ok


class TestSyncLoss:
    def test_clean_trace_no_outage(self):
        trace = PowerTrace.from_rop(np.full(30, -30.0), frame_rate_hz=3.0)
        assert sync_loss_stats(trace, OOK) == 0.0

    def test_counting_with_zero_reacquire(self):
        # k isolated bad frames at rate F cost k/F seconds of outage
        rop = np.full(60, -30.0)
        rop[10] = rop[30] = rop[50] = -55.0  # deep fades, BER ~ 0.5
        trace = PowerTrace.from_rop(rop, frame_rate_hz=3.0)
        got = sync_loss_stats(trace, OOK, reacquire_s=0.0)
        duration = 60 / 3.0
        assert got == pytest.approx(3 / 3.0 * 60.0 / duration, rel=1e-9)

    def test_reacquire_extends_outage(self):
        rop = np.full(60, -30.0)
        rop[10] = -55.0
        trace = PowerTrace.from_rop(rop, frame_rate_hz=3.0)
        base = sync_loss_stats(trace, OOK, reacquire_s=0.0)
        extended = sync_loss_stats(trace, OOK, reacquire_s=0.1)
        assert extended == pytest.approx(base + 0.1 / 20.0 * 60.0, rel=1e-6)

    def test_short_trace_rejected(self):
        trace = PowerTrace.from_rop(np.full(5, -30.0), frame_rate_hz=1500.0)
        with pytest.raises(ParameterError):
            sync_loss_stats(trace, OOK)


class TestPowerPenalty:
    def grid_and_curve(self, shift_db=0.0):
        rop = np.linspace(-44, -30, 120)
        return rop, ber_instant(rop - shift_db, OOK)

    def test_identical_curves_zero(self):
        rop, ber = self.grid_and_curve()
        assert power_penalty((rop, ber), (rop, ber), 1e-4) == 0.0

    def test_constructed_shift_recovered(self):
        rop, ref = self.grid_and_curve()
        _, shifted = self.grid_and_curve(2.0)
        assert abs(power_penalty((rop, shifted), (rop, ref), 1e-4) - 2.0) < 0.05

    def test_non_crossing_reports_side(self):
        rop, ref = self.grid_and_curve()
        flat = np.full_like(ref, 1e-2)
        with pytest.raises(CurveCrossingError) as err:
            power_penalty((rop, flat), (rop, ref), 1e-4)
        assert err.value.side == "curve"
        with pytest.raises(CurveCrossingError) as err:
            power_penalty((rop, ref), (rop, flat), 1e-4)
        assert err.value.side == "reference"


class TestWrapFloor:
    def test_trivial_values(self):
        assert ber_floor_from_phase_jumps(0.0) == 0.0
        assert ber_floor_from_phase_jumps(4e-7) == pytest.approx(2e-7, rel=1e-12)

    def test_matches_model_asymptote(self):
        duty = 3e-6
        model = ReceiverModel(sensitivity_dbm=-39.0, floor_duty=duty)
        assert abs(
            ber_instant(-39.0 + 30.0, model) / ber_floor_from_phase_jumps(duty) - 1
        ) < 0.05

    def test_range_checked(self):
        with pytest.raises(ParameterError):
            ber_floor_from_phase_jumps(1.5)


class TestBerCurve:
    def test_fading_curve_lies_above_static(self):
        rng = np.random.default_rng(2)
        eta_db = rng.normal(0.0, 2.0, 200)
        rop = np.linspace(-44, -26, 40)
        curve = ber_curve(rop, OOK, efficiency_db=eta_db)
        static = ber_curve(rop, OOK)
        # Jensen: averaging a convex BER-vs-dB curve over fades costs power
        mid = slice(5, 30)
        assert np.all(curve[mid] >= static[mid])
