import numpy as np
import pytest
from scipy.integrate import solve_ivp

from orbistab.errors import ConfigurationError, SingularDynamicsError
from orbistab.mechanics import (
    GeneralizedState,
    MechanicalSystem,
    build_system,
    energy,
    equation_residual,
    eval_U,
    eval_U_split,
    forward_dynamics,
    solve_mass,
)


def singular_system(**overrides) -> MechanicalSystem:
    """Two coordinates with a rank one mass matrix."""

    fields = dict(
        name="degenerate",
        n_q=2,
        n_u=1,
        mass_matrix=lambda q: np.array([[1.0, 1.0], [1.0, 1.0]]),
        coriolis_matrix=lambda q, w: np.zeros((2, 2)),
        friction_matrix=lambda q: np.zeros((2, 2)),
        gravity_vector=lambda q: np.zeros(2),
        input_matrix=np.array([[1.0], [0.0]]),
        input_left_inverse=np.array([[1.0, 0.0]]),
    )
    fields.update(overrides)
    return MechanicalSystem(**fields)


class TestMechanicalSystem:
    @staticmethod
    def test_cart_pendulum(system):

        assert (system.n_q, system.n_u, system.n_x) == (2, 1, 4)
        assert np.allclose(system.mass_matrix(np.zeros(2)), [[2.0, 1.0], [1.0, 1.0]])
        q, qdot = system.split(np.arange(4.0))
        assert np.allclose(q, [0.0, 1.0]) and np.allclose(qdot, [2.0, 3.0])

    @staticmethod
    def test_left_inverse_is_checked():

        with pytest.raises(ConfigurationError):
            singular_system(input_left_inverse=np.array([[0.5, 0.0]]))

        with pytest.raises(ConfigurationError):
            singular_system(n_u=3)

    @staticmethod
    def test_coriolis_exchange(system):

        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(100):
            q, X, Y = rng.uniform(-np.pi, np.pi, 2), rng.standard_normal(2), rng.standard_normal(2)
            worst = max(worst, float(np.max(np.abs(system.coriolis_matrix(q, X) @ Y - system.coriolis_matrix(q, Y) @ X))))
        assert worst < 1e-12

    @staticmethod
    def test_build_system():

        heavy = build_system("cart_pendulum", g=20.0)
        assert np.allclose(heavy.gravity_vector(np.array([0.0, np.pi / 2])), [0.0, -20.0])

        with pytest.raises(ConfigurationError):
            build_system("acrobot")

    @staticmethod
    def test_generalized_state():

        state = GeneralizedState.from_vector(np.array([0.1, 0.2, 0.3, 0.4]))
        assert np.allclose(state.q, [0.1, 0.2])
        assert np.allclose(state.x, [0.1, 0.2, 0.3, 0.4])

        with pytest.raises(ValueError):
            GeneralizedState(q=np.zeros(2), qdot=np.zeros(3))
        with pytest.raises(ValueError):
            GeneralizedState(q=np.array([np.nan, 0.0]), qdot=np.zeros(2))


class TestForwardDynamics:
    @staticmethod
    def test_unit_push_at_rest(system):

        xdot = forward_dynamics(system, np.zeros(4), np.array([1.0]))
        assert np.allclose(xdot, [0.0, 0.0, 1.0, -1.0], atol=1e-14)

    @staticmethod
    @pytest.mark.parametrize("x", [np.zeros(4), np.array([0.0, np.pi, 0.0, 0.0])])
    def test_equilibria(system, x):

        assert np.allclose(forward_dynamics(system, x, np.zeros(1)), np.zeros(4), rtol=0.0, atol=1e-12)

    @staticmethod
    def test_residual_vanishes(system):

        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.uniform(-2.0, 2.0, 4)
            u = rng.uniform(-5.0, 5.0, 1)
            qddot = forward_dynamics(system, x, u)[2:]
            assert np.max(np.abs(equation_residual(system, x, qddot, u))) < 1e-12

    @staticmethod
    def test_energy_is_conserved(system):

        x0 = np.array([0.0, 0.3, 0.2, -0.1])
        sol = solve_ivp(
            lambda _, x: forward_dynamics(system, x, np.zeros(1)), (0.0, 1.0), x0, method="DOP853", rtol=1e-11, atol=1e-12, max_step=1e-2
        )
        drift = abs(energy(system, sol.y[:, -1]) - energy(system, x0))
        assert drift < 1e-6

    @staticmethod
    def test_energy_needs_potential():

        with pytest.raises(ConfigurationError):
            energy(singular_system(), np.zeros(4))

    @staticmethod
    def test_singular_mass_matrix():

        degenerate = singular_system()
        with pytest.raises(SingularDynamicsError):
            solve_mass(degenerate, np.zeros(2), np.ones(2))
        with pytest.raises(SingularDynamicsError):
            forward_dynamics(degenerate, np.zeros(4), np.ones(1))


class TestFeedforward:
    @staticmethod
    def test_split_form_matches(system, orbit):

        rng = np.random.default_rng(11)
        for _ in range(50):
            s = rng.uniform(0.0, 2 * np.pi)
            q, qdot = rng.uniform(-1.0, 1.0, 2), rng.uniform(-1.0, 1.0, 2)
            direct = eval_U(system, q, qdot, s, orbit)
            split = eval_U_split(system, q, qdot, s, orbit)
            assert np.allclose(direct, split, rtol=1e-12, atol=1e-12)

    @staticmethod
    def test_matches_orbit_motion(system, orbit):
        """On the orbit ``U`` is exactly the generalized force of the nominal motion."""

        for s in np.linspace(0.0, 2 * np.pi, 17):
            q, qdot = orbit.phi(s), orbit.phi(s, 1) * orbit.rho(s)
            U = eval_U(system, q, qdot, s, orbit)
            qddot = orbit.lam(s) * orbit.rho(s)
            assert np.allclose(equation_residual(system, np.concatenate((q, qdot)), qddot, np.zeros(1)), U, atol=1e-12)
