import numpy as np
import pytest
from scipy.integrate import solve_ivp

from orbistab.mechanics import MechanicalSystem, eval_U
from orbistab.orbit import OrbitParameterization, eval_xs, eval_xs_prime, eval_xs_second
from orbistab.tvlin import (
    FEEDFORWARD_CHOICES,
    TransverseLinearization,
    a_block_matrix,
    jacobian_form,
    linearization_order,
    linearization_table,
    nonlinear_transverse_velocity,
    split_linearization_table,
    transverse_node,
    u_hat,
    u_tilde,
    u_tilde_partials,
    u_tilde_velocity_partial,
)

PHASES = (0.0, 0.8, 1.6, 2.5, 3.9, 5.5)


@pytest.fixture(scope="module")
def fully_actuated(system, orbit):
    """The cart-pendulum with a motor on the pendulum joint, on the reference orbit."""

    fields = {name: getattr(system, name) for name in system.__dataclass_fields__}
    fields.update(name="cart_pendulum_actuated", n_u=2, input_matrix=np.eye(2), input_left_inverse=np.eye(2))
    actuated = MechanicalSystem(**fields)
    return actuated, OrbitParameterization(template=orbit.template, rho=orbit.rho)


class TestFeedforward:
    @staticmethod
    @pytest.mark.parametrize("ff", FEEDFORWARD_CHOICES)
    def test_vanishes_on_orbit(system, orbit, ff):

        for s in np.linspace(0.0, 2 * np.pi, 64, endpoint=False):
            xs = eval_xs(orbit, s)
            assert np.max(np.abs(u_tilde(system, orbit, ff, xs, s))) < 1e-12
            U = eval_U(system, orbit.phi(s), orbit.phi(s, 1) * orbit.rho(s), s, orbit)
            assert np.allclose(u_hat(system, orbit, ff, xs, s), U, rtol=0.0, atol=1e-12)

    @staticmethod
    def test_unknown_choice(system, orbit):

        with pytest.raises(ValueError):
            u_hat(system, orbit, "feedback", eval_xs(orbit, 0.0), 0.0)

    @staticmethod
    @pytest.mark.parametrize("ff", FEEDFORWARD_CHOICES)
    def test_velocity_partial(system, orbit, ff):

        for s in PHASES:
            _, dqdot = u_tilde_partials(system, orbit, ff, s)
            assert np.allclose(dqdot, u_tilde_velocity_partial(system, orbit, ff, s), rtol=0.0, atol=1e-6)


class TestBlockMatrix:
    @staticmethod
    @pytest.mark.parametrize("ff", FEEDFORWARD_CHOICES)
    def test_structure(system, orbit, ff):

        for s in PHASES:
            A = a_block_matrix(system, orbit, ff, s)
            assert np.array_equal(A[:2, :2], np.zeros((2, 2)))
            assert np.array_equal(A[:2, 2:], np.eye(2))

    @staticmethod
    def test_fully_actuated_full_feedforward(fully_actuated):

        actuated, orbit = fully_actuated
        for s in PHASES:
            A = a_block_matrix(actuated, orbit, "full", s)
            assert np.max(np.abs(A[2:])) < 1e-12


class TestTransverseLinearization:
    @staticmethod
    def test_input_is_transverse(linearization):

        leak = np.einsum("mi,mij->mj", linearization.dP, linearization.b_perp)
        assert np.max(np.abs(leak)) < 1e-10

    @staticmethod
    def test_provenance(linearization):

        assert linearization.provenance["variant"] == "implicit_phase"
        assert linearization.provenance["feedforward"] == "mixed"
        assert linearization.s_grid.size == 256

    @staticmethod
    def test_periodic_nodes(system, orbit, projection):

        start = transverse_node(system, orbit, projection, "mixed", 0.0)
        end = transverse_node(system, orbit, projection, "mixed", 2 * np.pi)
        assert np.allclose(start.a_perp, end.a_perp, rtol=0.0, atol=1e-6)
        assert np.allclose(start.b_perp, end.b_perp, rtol=0.0, atol=1e-10)

    @staticmethod
    def test_interpolation_hits_nodes(linearization):

        k = 37
        assert np.allclose(linearization.A(linearization.s_grid[k]), linearization.a_perp[k])
        assert np.allclose(linearization.A(linearization.s_grid[k] + 2 * np.pi), linearization.a_perp[k])

    @staticmethod
    def test_jacobian_form(system, orbit, projection):

        for s in PHASES:
            node = transverse_node(system, orbit, projection, "mixed", s)
            other = jacobian_form(system, orbit, projection, "mixed", s)
            assert np.linalg.norm((node.a_perp - other) @ node.omega) < 1e-6

    @staticmethod
    def test_tangent_is_transported(system, orbit, projection):

        for s in PHASES:
            node = transverse_node(system, orbit, projection, "mixed", s)
            expected = orbit.rho(s) * eval_xs_second(orbit, s)
            assert np.allclose(node.a_perp @ eval_xs_prime(orbit, s), expected, rtol=0.0, atol=1e-6)

    @staticmethod
    def test_first_order_consistency(system, orbit, projection):

        rng = np.random.default_rng(21)
        for s0 in (0.5, 2.2, 4.7):
            direction = rng.standard_normal(4)
            order = linearization_order(system, orbit, projection, "mixed", s0, direction / np.linalg.norm(direction), rng.standard_normal(1))
            assert order.observed_order >= 1.8

    @staticmethod
    def test_orbit_is_invariant(system, orbit, projection):

        for s in PHASES:
            _, x_perp, velocity = nonlinear_transverse_velocity(system, orbit, projection, "mixed", eval_xs(orbit, s), np.zeros(1), hint=s)
            assert np.max(np.abs(x_perp)) < 1e-12
            assert np.max(np.abs(velocity)) < 1e-10

    @staticmethod
    def test_normal_component_is_conserved(linearization, orbit):
        """``DP(s) w`` stays constant along ``w' = A_perp w``."""

        def rhs(s, w):
            return linearization.A(s) @ w / linearization.rho_at(s)

        w0 = eval_xs_prime(orbit, 0.0)
        checkpoints = np.linspace(0.0, 2 * np.pi, 9)
        sol = solve_ivp(rhs, (0.0, 2 * np.pi), w0, method="DOP853", t_eval=checkpoints, rtol=1e-10, atol=1e-12)
        assert sol.success
        conserved = np.array([linearization.DP(s) @ w for s, w in zip(sol.t, sol.y.T)])
        assert np.max(np.abs(conserved - 1.0)) < 1e-4

    @staticmethod
    def test_feedforward_invariance(system, orbit, projection):
        """``on_orbit`` and ``mixed`` only differ in the configuration columns."""

        rng = np.random.default_rng(9)
        for s in PHASES:
            on_orbit = transverse_node(system, orbit, projection, "on_orbit", s)
            mixed = transverse_node(system, orbit, projection, "mixed", s)
            for _ in range(4):
                delta = np.concatenate((np.zeros(2), rng.standard_normal(2)))
                assert np.allclose(on_orbit.a_perp @ delta, mixed.a_perp @ delta, rtol=0.0, atol=1e-6)

    @staticmethod
    def test_constant_embedding():

        A = np.array([[0.0, 1.0], [2.0, -0.5]])
        B = np.array([[0.0], [1.0]])
        lin = TransverseLinearization.from_constant(A, B)
        assert np.allclose(lin.A(1.234), A)
        assert np.allclose(lin.B(5.0), B)
        assert np.allclose(lin.Omega(0.3), np.eye(2))
        assert np.allclose(lin.DP(0.3), 0.0)
        assert lin.rho_at(2.0) == pytest.approx(1.0)
        assert (lin.n_x, lin.n_u) == (2, 1)


class TestTable:
    @staticmethod
    def test_layout(linearization):

        header, rows = linearization_table(linearization)
        assert header[:3] == ["s", "A[0][0]", "A[0][1]"]
        assert header[-1] == "B[3][0]"
        assert rows.shape == (256, 21)

        s, a_perp, b_perp = split_linearization_table(header, rows, 4, 1)
        assert np.array_equal(a_perp, linearization.a_perp)
        assert np.array_equal(b_perp, linearization.b_perp)

        with pytest.raises(ValueError):
            split_linearization_table(header[:-1], rows[:, :-1], 4, 1)
