import math

import numpy as np
import pytest

from fsolink.combiner import CombinerTopology
from fsolink.controller import (
    ControllerConfig,
    NelderMead,
    correction_bandwidth,
    correction_bandwidth_knee,
    nelder_mead_step,
    run_closed_loop,
    uncorrected_efficiency,
    wrap_event_rate,
)
from fsolink.errors import ControllerFault, ParameterError


def neutral_wrap_config(**kw):
    return ControllerConfig(wrap_transient_s=0.0, wrap_residual_factor=1.0, **kw)


class TestNelderMeadStep:
    def test_one_dimensional_quadratic(self):
        # oracle: dense scan of the objective locates the max at 1.0
        objective = lambda x: -((x[0] - 1.0) ** 2)
        scan = np.linspace(-2, 3, 100001)
        oracle = scan[np.argmax(-((scan - 1.0) ** 2))]
        assert abs(oracle - 1.0) < 1e-4

        simplex = np.array([[0.0], [0.5]])
        values = np.array([objective(s) for s in simplex])
        evals = 0
        for _ in range(60):
            simplex, values, used = nelder_mead_step(objective, simplex, values)
            evals += used
            if evals >= 60:
                break
        best = simplex[np.argmax(values)][0]
        assert abs(best - 1.0) < 1e-3

    def test_flat_objective_shrinks_simplex(self):
        objective = lambda x: 1.0
        simplex = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        values = np.array([1.0, 1.0, 1.0])
        size_before = np.max(np.abs(simplex - simplex[0]))
        for _ in range(8):
            simplex, values, _ = nelder_mead_step(objective, simplex, values)
        size_after = np.max(np.abs(simplex - simplex[0]))
        assert size_after < size_before
        assert np.allclose(values, 1.0)

    def test_best_never_worsens_noiseless(self):
        rng = np.random.default_rng(0)
        objective = lambda x: -np.sum((x - 2.0) ** 2)
        simplex = rng.standard_normal((4, 3))
        values = np.array([objective(s) for s in simplex])
        best_history = [values.max()]
        for _ in range(40):
            simplex, values, _ = nelder_mead_step(objective, simplex, values)
            best_history.append(values.max())
        assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(best_history, best_history[1:]))

    def test_non_finite_objective_faults(self):
        nm = NelderMead(np.zeros(2), np.ones(2))
        nm.ask()
        with pytest.raises(ControllerFault):
            nm.tell(float("nan"))


class TestClosedLoopStatics:
    def test_two_input_convergence_over_seeds(self):
        topo = CombinerTopology.balanced(2, 0.0, 0.0)
        cfg = neutral_wrap_config(evals_per_frame=200)
        for s in range(30):
            rng = np.random.default_rng(900 + s)
            amps = rng.uniform(0.2, 1.0, 2) * np.exp(2j * math.pi * rng.uniform(size=2))
            trace = run_closed_loop(amps[None, :], topo, cfg, seed=s)
            assert trace.power_w.max() >= 0.999 * np.sum(np.abs(amps) ** 2)

    def test_static_frame_holds_lock(self):
        topo = CombinerTopology.balanced(4, 0.0, 0.0)
        rng = np.random.default_rng(1)
        amps = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        frames = np.tile(amps, (5, 1))
        cfg = neutral_wrap_config(evals_per_frame=250)
        trace = run_closed_loop(frames, topo, cfg, seed=0)
        ideal = np.sum(np.abs(amps) ** 2)
        assert np.all(trace.frame_sampled_power()[1:] >= 0.999 * ideal)

    def test_determinism(self):
        topo = CombinerTopology.balanced(3, 0.0, 0.0)
        rng = np.random.default_rng(2)
        frames = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        cfg = ControllerConfig(evals_per_frame=120, detector_noise_rel=0.02)
        a = run_closed_loop(frames, topo, cfg, seed=5)
        b = run_closed_loop(frames, topo, cfg, seed=5)
        np.testing.assert_array_equal(a.power_w, b.power_w)
        np.testing.assert_array_equal(a.wrap_flag, b.wrap_flag)

    def test_passivity_with_wraps_disabled(self):
        topo = CombinerTopology.balanced(4, 0.0, 0.0)
        rng = np.random.default_rng(3)
        frames = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
        cfg = neutral_wrap_config(evals_per_frame=150)
        trace = run_closed_loop(frames, topo, cfg, seed=1)
        per_frame_max = trace.power_w.reshape(6, -1).max(axis=1)
        assert np.all(per_frame_max <= trace.frame_ideal_power_w * (1 + 1e-9))

    def test_loop_rate_must_cover_frame_rate(self):
        topo = CombinerTopology.balanced(2, 0.0, 0.0)
        cfg = ControllerConfig(loop_rate_hz=100.0)
        with pytest.raises(ParameterError):
            run_closed_loop(np.ones((1, 2)), topo, cfg, seed=0, frame_rate_hz=1500.0)


class TestWrapModel:
    def test_monotonic_drift_wraps_at_least_five_times(self):
        topo = CombinerTopology.balanced(2, 0.0, 0.0)
        F = 80
        drift = np.linspace(0, 10 * math.pi, F)
        frames = np.stack([np.ones(F), np.exp(1j * drift)], axis=1)
        cfg = ControllerConfig(evals_per_frame=150, wrap_transient_s=1e-3)
        trace = run_closed_loop(frames, topo, cfg, seed=0)
        assert int(trace.wrap_flag.sum()) >= 5

    def test_static_midrange_target_never_wraps(self):
        topo = CombinerTopology.balanced(2, 0.0, 0.0)
        frames = np.tile(np.array([[1.0, np.exp(1j * math.pi)]]), (20, 1))
        cfg = ControllerConfig(evals_per_frame=150, wrap_transient_s=1e-3)
        trace = run_closed_loop(frames, topo, cfg, seed=0)
        assert int(trace.wrap_flag.sum()) == 0

    def test_neutral_wrap_model_equals_disabled(self):
        topo = CombinerTopology.balanced(2, 0.0, 0.0)
        F = 40
        drift = np.linspace(0, 6 * math.pi, F)
        frames = np.stack([np.ones(F), np.exp(1j * drift)], axis=1)
        neutral = ControllerConfig(evals_per_frame=120, wrap_transient_s=0.0,
                                   wrap_residual_factor=1.0)
        disabled = ControllerConfig(evals_per_frame=120, wrap_transient_s=0.0,
                                    wrap_residual_factor=0.25)
        a = run_closed_loop(frames, topo, neutral, seed=0)
        b = run_closed_loop(frames, topo, disabled, seed=0)
        # zero transient time means the residual factor never applies
        np.testing.assert_array_equal(a.power_w, b.power_w)

    def test_wrap_event_rate_and_duty(self):
        topo = CombinerTopology.balanced(2, 0.0, 0.0)
        F = 80
        drift = np.linspace(0, 10 * math.pi, F)
        frames = np.stack([np.ones(F), np.exp(1j * drift)], axis=1)
        # transient shorter than one frame: no overlap, no end-of-run clipping
        cfg = ControllerConfig(evals_per_frame=150, wrap_transient_s=1e-4)
        trace = run_closed_loop(frames, topo, cfg, seed=0)
        events_per_s, duty = wrap_event_rate(trace)
        n_events = int(trace.wrap_flag.sum())
        total_time = trace.time_s.size / cfg.loop_rate_hz
        assert abs(events_per_s - n_events / total_time) < 1e-9
        assert abs(duty - n_events * 1e-4 / total_time) < 1e-9

    def test_transient_degrades_output(self):
        topo = CombinerTopology.balanced(2, 0.0, 0.0)
        F = 60
        drift = np.linspace(0, 4 * math.pi, F)
        frames = np.stack([np.ones(F), np.exp(1j * drift)], axis=1)
        cfg = ControllerConfig(evals_per_frame=100, wrap_transient_s=5e-4,
                               wrap_residual_factor=0.25)
        trace = run_closed_loop(frames, topo, cfg, seed=0)
        events = np.nonzero(trace.wrap_flag)[0]
        assert events.size > 0
        e = events[0]
        # power right after the event sits near the residual factor
        assert trace.power_w[e + 1] < 0.5 * trace.frame_ideal_power_w[trace.frame_index[e + 1]]


class TestCorrectionBandwidth:
    CAL = ControllerConfig(loop_rate_hz=6e5)

    def test_static_disturbance_fully_corrected(self):
        eff = correction_bandwidth(0.0, math.pi, self.CAL, n_periods=10)
        assert eff >= 0.999

    def test_efficiency_rolls_off_with_frequency(self):
        freqs = [100.0, 1000.0, 10000.0, 40000.0]
        effs = [
            correction_bandwidth(f, math.pi, self.CAL, n_periods=40) for f in freqs
        ]
        tol = 0.02  # loop noise allowance on a non-increasing trend
        assert all(e2 <= e1 + tol for e1, e2 in zip(effs, effs[1:]))
        assert effs[-1] < 0.7

    def test_knee_lands_near_3_khz(self):
        freqs = [200.0, 600.0, 1500.0, 3000.0, 6000.0, 15000.0]
        _, effs, knee = correction_bandwidth_knee(freqs, math.pi, self.CAL, n_periods=60)
        assert knee is not None
        assert 1500.0 <= knee <= 6000.0

    def test_uncorrected_floor_value(self):
        from scipy.special import j0

        assert abs(uncorrected_efficiency(math.pi) - (1 + j0(math.pi)) / 2) < 1e-12


class TestTraceExport:
    def test_csv_columns_and_stamp(self, tmp_path):
        topo = CombinerTopology.balanced(2, 0.0, 0.0)
        frames = np.tile(np.array([[1.0, np.exp(1j * math.pi)]]), (3, 1))
        cfg = neutral_wrap_config(evals_per_frame=60)
        trace = run_closed_loop(frames, topo, cfg, seed=0)
        path = tmp_path / "trace.csv"
        trace.write_csv(path, scenario_hash="cafe")
        lines = path.read_text().splitlines()
        assert lines[0] == "# scenario=cafe"
        assert lines[1] == "time_s,power,efficiency_db,wrap_flag"
        assert len(lines) == 2 + trace.time_s.size
        t0, p0, e0, w0 = lines[2].split(",")
        assert float(t0) == 0.0 and w0 in ("0", "1")
        assert float(e0) <= 1e-9  # efficiency never above 0 dB
