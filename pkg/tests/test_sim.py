from dataclasses import replace

import numpy as np
import pytest

from orbistab.errors import ConfigurationError
from orbistab.orbit import eval_xs
from orbistab.sim import SimConfig, convergence_time, noise_stream, simulate

REFERENCE_INITIAL_STATE = [0.1, 0.4, -0.1, -0.2]


class TestNoiseStream:
    @staticmethod
    def test_zero_level():

        assert np.array_equal(noise_stream(7, 0.0, 100, 4), np.zeros((100, 4)))

    @staticmethod
    def test_deterministic():

        first = noise_stream(3, 1e-3, 50, 4)
        assert np.array_equal(first, noise_stream(3, 1e-3, 50, 4))
        assert not np.array_equal(first, noise_stream(4, 1e-3, 50, 4))
        assert np.array_equal(noise_stream(3, 1e-3, 10, 4), first[:10])

    @staticmethod
    def test_statistics():

        draws = noise_stream(0, [1.0, 2.0], 10000)
        assert draws.shape == (10000, 2)
        assert np.all(np.abs(draws.mean(axis=0)) < 4.0 * np.array([1.0, 2.0]) / np.sqrt(10000))
        assert np.allclose(draws.std(axis=0), [1.0, 2.0], rtol=0.05)

    @staticmethod
    def test_channel_mismatch():

        with pytest.raises(ConfigurationError):
            noise_stream(0, [1e-3, 1e-3], 10, 4)


class TestSimConfig:
    @staticmethod
    @pytest.mark.parametrize(
        "overrides",
        [
            dict(step=-1e-3),
            dict(duration=0.0),
            dict(sample_interval=1.5e-3),
            dict(integrator="euler"),
            dict(controller="bang_bang"),
        ],
    )
    def test_rejects(overrides):

        with pytest.raises(ConfigurationError):
            SimConfig(**{"initial_state": REFERENCE_INITIAL_STATE, "duration": 1.0, **overrides})

    @staticmethod
    def test_needs_gains(system, orbit, projection):

        with pytest.raises(ConfigurationError):
            simulate(system, orbit, projection, None, SimConfig(initial_state=REFERENCE_INITIAL_STATE, duration=1.0))
        with pytest.raises(ConfigurationError):
            simulate(system, orbit, projection, None, SimConfig(initial_state=[0.0, 0.1], duration=1.0, controller="none"))


class TestConvergenceTime:
    @staticmethod
    def test_first_entry():

        t = np.round(np.arange(0.0, 10.0, 0.1), 10)
        assert convergence_time(t, np.exp(-t), 0.01, 1.0) == pytest.approx(4.7)

    @staticmethod
    def test_must_stay_below():

        t = np.round(np.arange(0.0, 10.0, 0.1), 10)
        norms = np.exp(-t)
        norms[50] = 1.0
        assert convergence_time(t, norms, 0.01, 1.0) == pytest.approx(5.1)

    @staticmethod
    def test_never():

        t = np.arange(0.0, 5.0, 0.1)
        assert convergence_time(t, np.ones_like(t), 0.01, 1.0) is None
        assert convergence_time(t, np.exp(-t), 0.01, 1.0) is None


class TestUncontrolled:
    @staticmethod
    def test_free_motion(system, orbit, projection):

        cfg = SimConfig(initial_state=eval_xs(orbit, 0.0), duration=0.2, controller="none", sample_interval=0.05)
        trace = simulate(system, orbit, projection, None, cfg)
        assert trace.t.size == 5
        assert np.all(trace.u == 0.0)
        assert np.all(np.isnan(trace.V))
        assert trace.metadata["controller"] == "none"

    @staticmethod
    def test_integrators_agree(system, orbit, projection):

        cfg = SimConfig(initial_state=eval_xs(orbit, 0.0), duration=0.2, controller="none", sample_interval=0.05)
        fixed = simulate(system, orbit, projection, None, cfg)
        adaptive = simulate(system, orbit, projection, None, replace(cfg, integrator="rk45"))
        assert np.allclose(fixed.x, adaptive.x, rtol=0.0, atol=1e-8)


@pytest.mark.slow
class TestClosedLoop:
    @staticmethod
    def test_stays_on_orbit(system, orbit, projection, gain_schedule):

        cfg = SimConfig(initial_state=eval_xs(orbit, 0.0), duration=20.0)
        trace = simulate(system, orbit, projection, gain_schedule, cfg)
        assert np.max(trace.norm_x_perp) < 1e-6

    @staticmethod
    def test_converges(system, orbit, projection, gain_schedule):

        cfg = SimConfig(initial_state=REFERENCE_INITIAL_STATE, duration=20.0, noise_std=1e-3, seed=0)
        trace = simulate(system, orbit, projection, gain_schedule, cfg)
        assert trace.convergence_time is not None
        assert 8.0 <= trace.convergence_time <= 20.0
        assert trace.norm_x_perp[-1] < 0.01

        header, rows = trace.table()
        assert header == ["t", "x1", "x2", "x3", "x4", "s", "xp1", "xp2", "xp3", "xp4", "u", "v", "V", "normxp"]
        assert rows.shape == (2001, 14)
        assert np.all(rows[:, 5] >= 0.0) and np.all(rows[:, 5] < 2 * np.pi)

    @staticmethod
    def test_lyapunov_value_decreases(system, orbit, projection, gain_schedule):

        cfg = SimConfig(initial_state=REFERENCE_INITIAL_STATE, duration=20.0)
        trace = simulate(system, orbit, projection, gain_schedule, cfg)
        inside = np.flatnonzero(trace.norm_x_perp < 0.05)
        assert inside.size > 0
        assert np.all(np.diff(trace.V[inside[0]:]) < 1e-8)

    @staticmethod
    def test_step_halving(system, orbit, projection, gain_schedule):

        cfg = SimConfig(initial_state=REFERENCE_INITIAL_STATE, duration=2.0)
        coarse = simulate(system, orbit, projection, gain_schedule, cfg)
        fine = simulate(system, orbit, projection, gain_schedule, replace(cfg, step=5e-4))
        assert np.max(np.abs(coarse.x[-1] - fine.x[-1])) < 1e-6

    @staticmethod
    def test_reproducible(system, orbit, projection, gain_schedule):

        cfg = SimConfig(initial_state=REFERENCE_INITIAL_STATE, duration=0.5, noise_std=1e-3, seed=5)
        first = simulate(system, orbit, projection, gain_schedule, cfg)
        second = simulate(system, orbit, projection, gain_schedule, cfg)
        assert np.array_equal(first.table()[1], second.table()[1])

    @staticmethod
    def test_open_loop_drifts(system, orbit, projection, gain_schedule):

        cfg = SimConfig(initial_state=REFERENCE_INITIAL_STATE, duration=20.0, controller="open_loop")
        trace = simulate(system, orbit, projection, gain_schedule, cfg)
        assert trace.t.size == 2001
        assert np.nanmax(trace.norm_x_perp) > 0.5
