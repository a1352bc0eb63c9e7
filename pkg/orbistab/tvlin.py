"""Transverse linearization along a planned orbit.

With the feedback ``u = B^+ Uhat(x, s) + v`` and ``s = P(x)``, the excessive
transverse coordinates ``x_perp = x - x_s(P(x))`` obey, to first order,

    d/dt x_perp = A_perp(s) x_perp + B_perp(s) v,

    A_perp = Omega A - x_s' x_s'^T D2P rho,    B_perp = Omega [0; M^-1 B].

Only the action of ``A_perp`` on ``ker DP`` is determined. The stored
representative adds ``(rho x_s'' - A_perp x_s') DP``, which transports the
tangent along the orbit, ``A_perp x_s' = rho x_s''``, and keeps ``DP w`` conserved.

The discrepancy ``Utilde = B B^+ Uhat - U`` vanishes on the orbit for every
feedforward choice; only its partial derivatives enter ``A``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .mechanics import MechanicalSystem, eval_U, solve_mass
from .orbit import OrbitParameterization, TWO_PI, eval_xs, eval_xs_prime, eval_xs_second
from .projection import ProjectionOperator, d2P_on_orbit, dP_on_orbit, omega_matrix, project

FeedforwardChoice = Literal["on_orbit", "mixed", "full"]
FEEDFORWARD_CHOICES: Tuple[str, ...] = ("on_orbit", "mixed", "full")

DIFFERENCE_STEP = 1e-6


def u_hat(sys: MechanicalSystem, orbit: OrbitParameterization, ff: FeedforwardChoice, x: np.ndarray, s: float) -> np.ndarray:
    """Feedforward term ``Uhat(x, s)`` whose actuated part is applied."""

    q, qdot = sys.split(x)
    match ff:
        case "on_orbit":
            return eval_U(sys, orbit.phi(s), orbit.phi(s, 1) * orbit.rho(s), s, orbit)
        case "mixed":
            return eval_U(sys, q, orbit.phi(s, 1) * orbit.rho(s), s, orbit)
        case "full":
            return eval_U(sys, q, qdot, s, orbit)
        case _:
            raise ValueError(f"Unknown feedforward choice `{ff}`.")


def u_tilde(sys: MechanicalSystem, orbit: OrbitParameterization, ff: FeedforwardChoice, x: np.ndarray, s: float) -> np.ndarray:
    """``Utilde = B B^+ Uhat - U``."""

    q, qdot = sys.split(x)
    projector = sys.input_matrix @ sys.input_left_inverse
    return projector @ u_hat(sys, orbit, ff, x, s) - eval_U(sys, q, qdot, s, orbit)


def closed_loop_field(
    sys: MechanicalSystem,
    orbit: OrbitParameterization,
    ff: FeedforwardChoice,
    x: np.ndarray,
    s: float,
    v: Optional[np.ndarray] = None,
) -> np.ndarray:
    """``xdot`` under ``u = B^+ Uhat(x, s) + v`` with the phase held at ``s``."""

    q, qdot = sys.split(x)
    v = np.zeros(sys.n_u) if v is None else np.atleast_1d(v)
    qddot = solve_mass(sys, q, u_tilde(sys, orbit, ff, x, s) + sys.input_matrix @ v) + orbit.lam(s) * orbit.rho(s)
    return np.concatenate((qdot, qddot))


def _richardson_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> np.ndarray:
    """Central differences with one Richardson extrapolation step."""

    columns = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = 1.0

        def central(h):
            return (fn(x + h * e) - fn(x - h * e)) / (2.0 * h)

        columns.append((4.0 * central(0.5 * step) - central(step)) / 3.0)
    return np.stack(columns, axis=1)


def u_tilde_partials(
    sys: MechanicalSystem, orbit: OrbitParameterization, ff: FeedforwardChoice, s: float
) -> Tuple[np.ndarray, np.ndarray]:
    """``dUtilde/dq`` and ``dUtilde/dqdot`` at ``x_s(s)`` with ``s`` held fixed."""

    xs = eval_xs(orbit, s)
    step = DIFFERENCE_STEP * (1.0 + np.linalg.norm(xs))
    J = _richardson_jacobian(lambda x: u_tilde(sys, orbit, ff, x, s), xs, step)
    return J[:, : sys.n_q], J[:, sys.n_q :]


def u_tilde_velocity_partial(sys: MechanicalSystem, orbit: OrbitParameterization, ff: FeedforwardChoice, s: float) -> np.ndarray:
    """Analytic ``dUtilde/dqdot`` on the orbit through the split ``U`` form.

    With ``w = Phi' rho`` the velocity enters ``U`` through ``C(q, z)z + 2C(q, w)z + F z``,
    whose derivative at ``z = 0`` is ``2C(q, w) + F``.
    """

    q = orbit.phi(s)
    w = orbit.phi(s, 1) * orbit.rho(s)
    dU = 2.0 * sys.coriolis_matrix(q, w) + sys.friction_matrix(q)
    if ff == "full":
        return (sys.input_matrix @ sys.input_left_inverse - np.eye(sys.n_q)) @ dU
    return -dU


def a_block_matrix(sys: MechanicalSystem, orbit: OrbitParameterization, ff: FeedforwardChoice, s: float) -> np.ndarray:
    """``A(s) = [[0, I], [M^-1 dUtilde/dq, M^-1 dUtilde/dqdot]]`` at ``x_s(s)``."""

    n_q = sys.n_q
    dq, dqdot = u_tilde_partials(sys, orbit, ff, s)
    q = orbit.phi(s)
    A = np.zeros((2 * n_q, 2 * n_q))
    A[:n_q, n_q:] = np.eye(n_q)
    A[n_q:, :n_q] = solve_mass(sys, q, dq)
    A[n_q:, n_q:] = solve_mass(sys, q, dqdot)
    return A


def b_perp_matrix(sys: MechanicalSystem, orbit: OrbitParameterization, s: float, omega: np.ndarray) -> np.ndarray:
    lower = solve_mass(sys, orbit.phi(s), sys.input_matrix)
    return omega @ np.vstack((np.zeros((sys.n_q, sys.n_u)), lower))


@dataclass(frozen=True)
class TransverseNode:
    """Exact linearization data at one phase."""

    s: float
    a_perp: np.ndarray
    b_perp: np.ndarray
    omega: np.ndarray
    dP: np.ndarray
    d2P: np.ndarray
    a: np.ndarray


def transverse_node(
    sys: MechanicalSystem, orbit: OrbitParameterization, op: ProjectionOperator, ff: FeedforwardChoice, s: float
) -> TransverseNode:
    """Exact ``A_perp(s)`` and ``B_perp(s)`` without interpolation."""

    dP = dP_on_orbit(op, s)
    d2P = d2P_on_orbit(op, s)
    omega = omega_matrix(op, s, dP)
    tangent = eval_xs_prime(orbit, s)
    A = a_block_matrix(sys, orbit, ff, s)
    rho = orbit.rho(s)
    a_perp = omega @ A - np.outer(tangent, tangent @ d2P) * rho
    a_perp += np.outer(rho * eval_xs_second(orbit, s) - a_perp @ tangent, dP)
    return TransverseNode(s=s, a_perp=a_perp, b_perp=b_perp_matrix(sys, orbit, s, omega), omega=omega, dP=dP, d2P=d2P, a=A)


def jacobian_form(
    sys: MechanicalSystem, orbit: OrbitParameterization, op: ProjectionOperator, ff: FeedforwardChoice, s: float
) -> np.ndarray:
    """``A_perp = Omega df/dx - Xi rho`` with ``Xi = x_s' x_s'^T D2P + x_s'' DP``.

    ``f`` is the closed loop field with ``v = 0`` and the phase ``s = P(x)``,
    differentiated numerically including the dependence through ``P``.
    """

    xs = eval_xs(orbit, s)

    def field_at(x):
        sp = project(op, x, hint=s).s
        return closed_loop_field(sys, orbit, ff, x, s + ((sp - s + np.pi) % TWO_PI - np.pi))

    step = DIFFERENCE_STEP * 10.0 * (1.0 + np.linalg.norm(xs))
    df = _richardson_jacobian(field_at, xs, step)
    dP = dP_on_orbit(op, s)
    tangent = eval_xs_prime(orbit, s)
    xi = np.outer(tangent, tangent @ d2P_on_orbit(op, s)) + np.outer(eval_xs_second(orbit, s), dP)
    return omega_matrix(op, s, dP) @ df - xi * orbit.rho(s)


@dataclass(frozen=True)
class TransverseLinearization:
    """Periodic interpolants of ``A_perp``, ``B_perp``, ``Omega``, ``DP`` and ``rho`` on a grid.

    :attr s_grid: Uniform nodes in ``[0, s_max)``.
    :attr provenance: Projection variant, feedforward choice and difference steps.
    """

    s_grid: np.ndarray
    a_perp: np.ndarray
    b_perp: np.ndarray
    omega: np.ndarray
    dP: np.ndarray
    rho: np.ndarray
    tangent: np.ndarray
    s_max: float = TWO_PI
    provenance: Dict[str, object] = field(default_factory=dict, compare=False)
    _splines: Dict[str, CubicSpline] = field(init=False, repr=False, compare=False)

    def __post_init__(self):

        closed = np.append(self.s_grid, self.s_grid[0] + self.s_max)
        splines = {}
        for name in ("a_perp", "b_perp", "omega", "dP", "rho", "tangent"):
            values = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, values)
            splines[name] = CubicSpline(closed, np.concatenate((values, values[:1])), axis=0, bc_type="periodic")
        object.__setattr__(self, "_splines", splines)

    @classmethod
    def from_constant(cls, A: np.ndarray, B: np.ndarray, grid: int = 16) -> "TransverseLinearization":
        """Embed a time-invariant pair with ``Omega = I``, ``DP = 0`` and ``rho = 1``."""

        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
        n = A.shape[0]
        s_grid = np.linspace(0.0, TWO_PI, grid, endpoint=False)
        return cls(
            s_grid=s_grid,
            a_perp=np.repeat(A[None], grid, axis=0),
            b_perp=np.repeat(B[None], grid, axis=0),
            omega=np.repeat(np.eye(n)[None], grid, axis=0),
            dP=np.zeros((grid, n)),
            rho=np.ones(grid),
            tangent=np.zeros((grid, n)),
            provenance={"source": "constant"},
        )

    @property
    def n_x(self) -> int:
        return self.a_perp.shape[1]

    @property
    def n_u(self) -> int:
        return self.b_perp.shape[2]

    def _eval(self, name: str, s, order: int = 0):
        return self._splines[name](self.s_grid[0] + np.mod(np.asarray(s, dtype=float) - self.s_grid[0], self.s_max), order)

    def A(self, s) -> np.ndarray:
        return self._eval("a_perp", s)

    def B(self, s) -> np.ndarray:
        return self._eval("b_perp", s)

    def Omega(self, s) -> np.ndarray:
        return self._eval("omega", s)

    def DP(self, s) -> np.ndarray:
        return self._eval("dP", s)

    def rho_at(self, s, order: int = 0):
        return self._eval("rho", s, order)

    def tangent_at(self, s) -> np.ndarray:
        return self._eval("tangent", s)


def build(
    sys: MechanicalSystem,
    orbit: OrbitParameterization,
    op: ProjectionOperator,
    ff: FeedforwardChoice = "mixed",
    grid: int = 512,
) -> TransverseLinearization:
    """Tabulate the exact transverse linearization on ``grid`` uniform nodes."""

    s_grid = np.linspace(0.0, orbit.s_max, grid, endpoint=False)
    nodes = [transverse_node(sys, orbit, op, ff, s) for s in s_grid]
    lin = TransverseLinearization(
        s_grid=s_grid,
        a_perp=np.array([n.a_perp for n in nodes]),
        b_perp=np.array([n.b_perp for n in nodes]),
        omega=np.array([n.omega for n in nodes]),
        dP=np.array([n.dP for n in nodes]),
        rho=np.array([orbit.rho(s) for s in s_grid]),
        tangent=np.array([eval_xs_prime(orbit, s) for s in s_grid]),
        s_max=orbit.s_max,
        provenance={
            "variant": op.variant,
            "feedforward": ff,
            "difference_step": DIFFERENCE_STEP,
            "hessian_step": 1e-5,
            "grid": grid,
        },
    )
    leak = max(float(np.max(np.abs(n.dP @ n.b_perp))) for n in nodes)
    logging.info(f"Transverse linearization on {grid} nodes ({op.variant}, {ff}); max |DP B_perp| = {leak:.3e}.")
    return lin


def rebuild(
    orbit: OrbitParameterization,
    op: ProjectionOperator,
    s_grid: np.ndarray,
    a_perp: np.ndarray,
    b_perp: np.ndarray,
    provenance: Optional[Dict[str, object]] = None,
) -> TransverseLinearization:
    """Reassemble a stored linearization, recomputing the orbit quantities on its grid."""

    dP = np.array([dP_on_orbit(op, s) for s in s_grid])
    return TransverseLinearization(
        s_grid=np.asarray(s_grid, dtype=float),
        a_perp=a_perp,
        b_perp=b_perp,
        omega=np.array([omega_matrix(op, s, d) for s, d in zip(s_grid, dP)]),
        dP=dP,
        rho=np.array([orbit.rho(s) for s in s_grid]),
        tangent=np.array([eval_xs_prime(orbit, s) for s in s_grid]),
        s_max=orbit.s_max,
        provenance=dict(provenance or {}),
    )


def linearization_table(lin: TransverseLinearization) -> Tuple[list, np.ndarray]:
    """Header and rows ``s, A[i][j]..., B[i][j]...`` in row-major order."""

    n, m = lin.n_x, lin.n_u
    header = ["s"] + [f"A[{i}][{j}]" for i in range(n) for j in range(n)] + [f"B[{i}][{j}]" for i in range(n) for j in range(m)]
    rows = np.hstack((lin.s_grid[:, None], lin.a_perp.reshape(len(lin.s_grid), -1), lin.b_perp.reshape(len(lin.s_grid), -1)))
    return header, rows


def split_linearization_table(header: Sequence[str], rows: np.ndarray, n_x: int, n_u: int):
    rows = np.asarray(rows, dtype=float)
    expected = 1 + n_x * n_x + n_x * n_u
    if rows.ndim != 2 or rows.shape[1] != expected or len(header) != expected:
        raise ValueError(f"Linearization table has {rows.shape[-1]} columns, expected {expected}.")
    grid = rows.shape[0]
    return rows[:, 0], rows[:, 1 : 1 + n_x * n_x].reshape(grid, n_x, n_x), rows[:, 1 + n_x * n_x :].reshape(grid, n_x, n_u)


# --------------------------------------------------------------------------- #
# Nonlinear cross-checks


def nonlinear_transverse_velocity(
    sys: MechanicalSystem,
    orbit: OrbitParameterization,
    op: ProjectionOperator,
    ff: FeedforwardChoice,
    x: np.ndarray,
    v: np.ndarray,
    hint: Optional[float] = None,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """``s = P(x)``, ``x_perp`` and ``d/dt x_perp = f - x_s'(s) DP(x) f`` of the closed loop."""

    result = project(op, x, hint=hint)
    f = closed_loop_field(sys, orbit, ff, x, result.s, v)
    sdot = float(op.jacobian(x, result.s) @ f)
    return result.s, result.x_perp, f - eval_xs_prime(orbit, result.s) * sdot


@dataclass(frozen=True)
class LinearizationOrder:
    """Errors of the first order model at decreasing perturbation sizes."""

    scales: np.ndarray
    errors: np.ndarray

    @property
    def observed_order(self) -> float:
        return float(np.min(np.diff(np.log(self.errors)) / np.diff(np.log(self.scales))))


def linearization_order(
    sys: MechanicalSystem,
    orbit: OrbitParameterization,
    op: ProjectionOperator,
    ff: FeedforwardChoice,
    s0: float,
    direction: np.ndarray,
    input_direction: np.ndarray,
    scales: Sequence[float] = (1e-2, 1e-3, 1e-4),
) -> LinearizationOrder:
    """Compare ``A_perp x_perp + B_perp v`` against the nonlinear transverse velocity.

    The state is ``x_s(s0) + eps Omega(s0) direction`` and the input ``eps input_direction``;
    the model is evaluated exactly at the projected phase.
    """

    omega = omega_matrix(op, s0)
    errors = []
    for eps in scales:
        x = eval_xs(orbit, s0) + eps * omega @ np.asarray(direction, dtype=float)
        v = eps * np.atleast_1d(np.asarray(input_direction, dtype=float))
        s, x_perp, velocity = nonlinear_transverse_velocity(sys, orbit, op, ff, x, v, hint=s0)
        node = transverse_node(sys, orbit, op, ff, s)
        errors.append(float(np.linalg.norm(velocity - node.a_perp @ x_perp - node.b_perp @ v)))
    return LinearizationOrder(scales=np.asarray(scales, dtype=float), errors=np.asarray(errors))
