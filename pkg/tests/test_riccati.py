from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import solve_continuous_are

from orbistab.errors import ConfigurationError, NoCertificateError, VerificationFailedError
from orbistab.riccati import (
    NEUTRAL_ANGLE_TOLERANCE,
    PSD_TOLERANCE,
    GainSchedule,
    SolverConfig,
    floquet_multipliers,
    fourier_basis,
    hamiltonian_are,
    kernel_frame,
    lyapunov_decrease_check,
    pre_residual,
    residual_profile,
    solve,
    upper_entries,
)
from orbistab.tvlin import TransverseLinearization

UNSTABLE_A = np.array([[0.0, 1.0], [2.0, -0.5]])
INPUT_B = np.array([[0.0], [1.0]])


def random_schedule(linearization, order: int = 3, seed: int = 0) -> GainSchedule:

    rng = np.random.default_rng(seed)
    coefficients = rng.standard_normal((len(upper_entries(linearization.n_x)), 2 * order + 1))
    return GainSchedule(coefficients=coefficients, n_x=linearization.n_x, Gamma=np.array([[0.1]]), linearization=linearization)


class KernelShift:
    """``R + c DP^T DP`` with its derivative along the phase."""

    def __init__(self, schedule, linearization, c: float, h: float = 1e-6):
        self.schedule, self.lin, self.c, self.h = schedule, linearization, c, h

    def _outer(self, s):
        dP = self.lin.DP(s)
        return np.einsum("mi,mj->mij", dP, dP)

    def R(self, s):
        return self.schedule.R(s) + self.c * self._outer(s)

    def dR(self, s):
        slope = (self._outer(s + self.h) - self._outer(s - self.h)) / (2 * self.h)
        return self.schedule.dR(s) + self.c * slope


class TestSolverConfig:
    @staticmethod
    def test_defaults():

        cfg = SolverConfig(fourier_order=5).resolved(4, 1)
        assert np.array_equal(cfg.Q, np.eye(4))
        assert np.array_equal(cfg.Gamma, 0.1 * np.eye(1))
        assert cfg.collocation_points == 21

    @staticmethod
    @pytest.mark.parametrize(
        "overrides",
        [
            dict(Q=-np.eye(4)),
            dict(Q=np.eye(3)),
            dict(Q=np.array([[1.0, 0.5, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]])),
            dict(Gamma=np.array([[0.0]])),
            dict(kappa=-0.1),
            dict(fourier_order=0),
            dict(fourier_order=10, collocation_points=15),
        ],
    )
    def test_rejects(overrides):

        with pytest.raises(ConfigurationError):
            SolverConfig(**overrides).resolved(4, 1)


class TestFourierBasis:
    @staticmethod
    def test_values():

        values, slopes = fourier_basis(np.array([0.0]), 3)
        assert np.allclose(values, [[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]])
        assert np.allclose(slopes, [[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]])

    @staticmethod
    def test_derivative_matches_differences():

        s, h = np.linspace(0.1, 6.0, 7), 1e-6
        plus, _ = fourier_basis(s + h, 4, s_max=3.0)
        minus, _ = fourier_basis(s - h, 4, s_max=3.0)
        _, slopes = fourier_basis(s, 4, s_max=3.0)
        assert np.allclose((plus - minus) / (2 * h), slopes, atol=1e-6)


class TestResidual:
    @staticmethod
    def test_symmetric(linearization, solver_config):

        schedule = random_schedule(linearization)
        for s in (0.0, 1.1, 4.2):
            Y = pre_residual(linearization, schedule, solver_config, s)
            assert np.linalg.norm(Y - Y.T) < 1e-10

    @staticmethod
    def test_normal_direction_is_free(linearization, solver_config):
        """Adding ``c DP^T DP`` to ``R`` leaves the projected residual unchanged."""

        schedule = random_schedule(linearization, seed=3)
        shifted = KernelShift(schedule, linearization, c=2.5)
        for s in linearization.s_grid[::32]:
            base = pre_residual(linearization, schedule, solver_config, s)
            moved = pre_residual(linearization, shifted, solver_config, s)
            assert np.linalg.norm(base - moved) < 1e-8

    @staticmethod
    def test_kernel_frame(linearization):

        frame = kernel_frame(linearization)
        for s in linearization.s_grid[::16]:
            T = frame.T(s)
            assert T.shape == (4, 3)
            assert np.allclose(T.T @ T, np.eye(3), atol=1e-10)
            assert np.linalg.norm(linearization.DP(s) @ T) < 1e-10


class TestTimeInvariant:
    @staticmethod
    def test_matches_algebraic_riccati():

        Q, Gamma, kappa = np.eye(2), np.array([[0.1]]), 0.1
        lin = TransverseLinearization.from_constant(UNSTABLE_A, INPUT_B)
        cfg = SolverConfig(Q=Q, Gamma=Gamma, kappa=kappa, fourier_order=4, sweep_periods=0, check_points=64)

        gs = solve(lin, cfg)
        shifted = UNSTABLE_A + 0.5 * kappa * np.eye(2)
        reference = solve_continuous_are(shifted, INPUT_B, Q, Gamma)
        assert np.allclose(hamiltonian_are(shifted, INPUT_B, Q, Gamma), reference, atol=1e-10)

        expected_gain = -np.linalg.solve(Gamma, INPUT_B.T @ reference)
        for s in (0.0, 2.0, 5.0):
            assert np.allclose(gs.R(s), reference, atol=1e-6)
            assert np.allclose(gs.K(s), expected_gain, atol=1e-6)

        assert gs.residual_max < 1e-8
        assert np.all(np.abs(gs.multipliers) < 1.0)
        assert floquet_multipliers(lin, gs).neutral_index is None

    @staticmethod
    def test_scaling_invariance():

        lin = TransverseLinearization.from_constant(UNSTABLE_A, INPUT_B)
        cfg = SolverConfig(Q=np.eye(2), Gamma=np.array([[0.1]]), kappa=0.0, fourier_order=4, sweep_periods=0, check_points=64)
        base = solve(lin, cfg)
        scaled = solve(lin, replace(cfg, Q=3.0 * cfg.Q, Gamma=3.0 * cfg.Gamma))
        for s in (0.0, 2.0, 5.0):
            assert np.allclose(scaled.K(s), base.K(s), rtol=0.0, atol=1e-6)
            assert np.allclose(scaled.R(s), 3.0 * base.R(s), rtol=1e-6, atol=1e-8)

    @staticmethod
    def test_neutral_direction_is_enforced(monkeypatch):

        lin = TransverseLinearization.from_constant(UNSTABLE_A, INPUT_B)
        cfg = SolverConfig(Q=np.eye(2), Gamma=np.array([[0.1]]), kappa=0.1, fourier_order=4, sweep_periods=0, check_points=64)
        original = floquet_multipliers

        def misaligned(tv, gs=None):
            return replace(original(tv, gs), neutral_index=0, tangent_angle=0.1)

        monkeypatch.setattr("orbistab.riccati.floquet_multipliers", misaligned)
        with pytest.raises(VerificationFailedError):
            solve(lin, cfg)

    @staticmethod
    def test_open_loop_multipliers():

        lin = TransverseLinearization.from_constant(UNSTABLE_A, INPUT_B)
        expected = np.exp(np.linalg.eigvals(UNSTABLE_A) * 2 * np.pi)
        assert np.allclose(np.sort(floquet_multipliers(lin).multipliers.real), np.sort(expected.real), rtol=1e-6, atol=1e-6)


@pytest.mark.slow
class TestCartPendulum:
    @staticmethod
    def test_certificate(gain_schedule, linearization, solver_config):

        assert gain_schedule.residual_max <= 2e-4
        assert np.max(residual_profile(linearization, gain_schedule, solver_config, 2048)) <= 2e-4
        assert gain_schedule.min_eigenvalue >= -PSD_TOLERANCE

    @staticmethod
    def test_floquet(gain_schedule, linearization):

        closed = floquet_multipliers(linearization, gain_schedule)
        assert closed.transverse.size == 3
        assert np.all(np.abs(closed.transverse) < 1.0)
        assert abs(abs(closed.multipliers[closed.neutral_index]) - 1.0) < 1e-3
        assert closed.tangent_angle <= NEUTRAL_ANGLE_TOLERANCE
        assert gain_schedule.floquet is not None

        assert np.max(np.abs(floquet_multipliers(linearization).multipliers)) > 1.0

    @staticmethod
    def test_lyapunov_decrease(gain_schedule, linearization, solver_config):

        report = lyapunov_decrease_check(linearization, gain_schedule, solver_config, samples=200, seed=1)
        assert report.max_vdot < 0.0
        assert report.max_relative_discrepancy < 1e-3

    @staticmethod
    def test_refinement_does_not_degrade(gain_schedule, linearization, solver_config):

        finer = solve(linearization, replace(solver_config, fourier_order=80))
        assert finer.residual_max <= 1.1 * gain_schedule.residual_max + 1e-6

    @staticmethod
    def test_without_margin(linearization, solver_config):

        cfg = replace(solver_config, kappa=0.0)
        gs = solve(linearization, cfg)
        assert gs.residual_max <= 2e-4
        assert lyapunov_decrease_check(linearization, gs, cfg, samples=200, seed=2).max_vdot < 0.0

    @staticmethod
    def test_table(gain_schedule, linearization):

        header, rows = gain_schedule.table()
        assert header == ["entry_i", "entry_j", "harmonic", "cos_coef", "sin_coef"]
        assert rows.shape == (10 * 41, 5)

        restored = GainSchedule.from_table(rows, linearization, gain_schedule.Gamma)
        for s in (0.3, 3.3):
            assert np.allclose(restored.R(s), gain_schedule.R(s), rtol=0.0, atol=1e-14)

    @staticmethod
    def test_no_certificate(linearization, solver_config):

        with pytest.raises(NoCertificateError) as info:
            solve(linearization, replace(solver_config, residual_tol=1e-9, max_outer_iterations=1))
        assert info.value.exit_code == 4
        assert info.value.best_residual > 1e-9
