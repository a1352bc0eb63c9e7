"""Euler-Lagrange systems ``M(q)q'' + C(q, q')q' + F(q)q' + G(q) = Bu``.

Systems are described by evaluator closures and a constant input matrix. The
cart-pendulum is built in; any other system is assembled programmatically by
handing the closures to :class:`MechanicalSystem`.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional, Union

import numpy as np

from .errors import ConfigurationError, SingularDynamicsError

if TYPE_CHECKING:
    from .orbit import OrbitParameterization

MatrixMap = Callable[[np.ndarray], np.ndarray]
CoriolisMap = Callable[[np.ndarray, np.ndarray], np.ndarray]

CONDITION_LIMIT = 1e12
GRAVITY = 9.81


@dataclass(frozen=True)
class MechanicalSystem:
    """Evaluators of the Euler-Lagrange model.

    :attr name: Identifier used in configuration files and logs.
    :attr n_q: Number of generalized coordinates.
    :attr n_u: Number of inputs, at most ``n_q``.
    :attr mass_matrix: ``q -> M(q)``, symmetric positive definite.
    :attr coriolis_matrix: ``(q, w) -> C(q, w)``, linear in ``w`` and satisfying
        ``C(q, X)Y = C(q, Y)X``.
    :attr friction_matrix: ``q -> F(q)``.
    :attr gravity_vector: ``q -> G(q)``.
    :attr input_matrix: Constant ``B`` with full column rank.
    :attr input_left_inverse: Constant ``B^+`` with ``B^+ B = I``.
    :attr potential: Optional ``q -> V(q)`` with ``dV/dq = G``, used for energy checks.
    """

    name: str
    n_q: int
    n_u: int
    mass_matrix: MatrixMap
    coriolis_matrix: CoriolisMap
    friction_matrix: MatrixMap
    gravity_vector: MatrixMap
    input_matrix: np.ndarray
    input_left_inverse: np.ndarray
    potential: Optional[Callable[[np.ndarray], float]] = field(default=None, compare=False)

    def __post_init__(self):

        B = np.asarray(self.input_matrix, dtype=float)
        B_left = np.asarray(self.input_left_inverse, dtype=float)
        if not 0 < self.n_u <= self.n_q:
            raise ConfigurationError(f"Expected `0 < n_u <= n_q`, got n_u = {self.n_u}, n_q = {self.n_q}.")
        if B.shape != (self.n_q, self.n_u) or B_left.shape != (self.n_u, self.n_q):
            raise ConfigurationError(
                f"Input matrix has shape {B.shape} and left inverse {B_left.shape}; "
                f"expected {(self.n_q, self.n_u)} and {(self.n_u, self.n_q)}."
            )
        if np.linalg.matrix_rank(B) < self.n_u:
            raise ConfigurationError(f"Input matrix of `{self.name}` is not of full column rank.")
        if not np.allclose(B_left @ B, np.eye(self.n_u), rtol=0.0, atol=1e-14):
            raise ConfigurationError(f"`input_left_inverse` of `{self.name}` is not a left inverse of `input_matrix`.")

        object.__setattr__(self, "input_matrix", B)
        object.__setattr__(self, "input_left_inverse", B_left)

    @property
    def n_x(self) -> int:
        return 2 * self.n_q

    def split(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        return x[: self.n_q], x[self.n_q :]


@dataclass(frozen=True)
class GeneralizedState:
    """A state ``x = (q, qdot)``."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):

        q = np.asarray(self.q, dtype=float).reshape(-1)
        qdot = np.asarray(self.qdot, dtype=float).reshape(-1)
        if q.shape != qdot.shape:
            raise ValueError(f"`q` and `qdot` differ in shape: {q.shape} and {qdot.shape}.")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise ValueError("Generalized state has non-finite entries.")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "GeneralizedState":
        x = np.asarray(x, dtype=float)
        n_q = x.size // 2
        return cls(q=x[:n_q], qdot=x[n_q:])

    @property
    def x(self) -> np.ndarray:
        return np.concatenate((self.q, self.qdot))


StateLike = Union[GeneralizedState, np.ndarray]


def _as_state(x: StateLike) -> GeneralizedState:
    return x if isinstance(x, GeneralizedState) else GeneralizedState.from_vector(x)


def solve_mass(sys: MechanicalSystem, q: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``M(q) y = rhs`` after checking the conditioning of ``M(q)``."""

    M = sys.mass_matrix(q)
    condition = np.linalg.cond(M)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        logging.fatal(f"Mass matrix of `{sys.name}` is near singular at q = {q} (condition {condition:.3e}).")
        raise SingularDynamicsError(f"Mass matrix condition estimate {condition:.3e} exceeds {CONDITION_LIMIT:.0e} at q = {q}.")
    return np.linalg.solve(M, rhs)


def forward_dynamics(sys: MechanicalSystem, x: StateLike, u: np.ndarray) -> np.ndarray:
    """Return ``(qdot, qddot)`` for the state ``x`` under input ``u``."""

    state = _as_state(x)
    q, qdot = state.q, state.qdot
    u = np.atleast_1d(np.asarray(u, dtype=float))

    rhs = (
        sys.input_matrix @ u
        - sys.coriolis_matrix(q, qdot) @ qdot
        - sys.friction_matrix(q) @ qdot
        - sys.gravity_vector(q)
    )
    return np.concatenate((qdot, solve_mass(sys, q, rhs)))


def equation_residual(sys: MechanicalSystem, x: StateLike, qddot: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Residual of the equations of motion for a given acceleration."""

    state = _as_state(x)
    q, qdot = state.q, state.qdot
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return (
        sys.mass_matrix(q) @ qddot
        + sys.coriolis_matrix(q, qdot) @ qdot
        + sys.friction_matrix(q) @ qdot
        + sys.gravity_vector(q)
        - sys.input_matrix @ u
    )


def energy(sys: MechanicalSystem, x: StateLike) -> float:
    """Kinetic plus potential energy; requires ``sys.potential``."""

    if sys.potential is None:
        raise ConfigurationError(f"System `{sys.name}` does not define a potential.")
    state = _as_state(x)
    return float(0.5 * state.qdot @ sys.mass_matrix(state.q) @ state.qdot + sys.potential(state.q))


def eval_U(
    sys: MechanicalSystem,
    q: np.ndarray,
    qdot: np.ndarray,
    s: float,
    orbit: "OrbitParameterization",
) -> np.ndarray:
    """``U(q, qdot, s) = M(q)Lambda(s)rho(s) + C(q, qdot)qdot + F(q)qdot + G(q)``."""

    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    return (
        sys.mass_matrix(q) @ orbit.lam(s) * orbit.rho(s)
        + sys.coriolis_matrix(q, qdot) @ qdot
        + sys.friction_matrix(q) @ qdot
        + sys.gravity_vector(q)
    )


def eval_U_split(
    sys: MechanicalSystem,
    q: np.ndarray,
    qdot: np.ndarray,
    s: float,
    orbit: "OrbitParameterization",
) -> np.ndarray:
    """Evaluate ``U`` through the velocity error ``z = qdot - Phi'(s)rho(s)``.

    Uses ``U(q, qdot, s) = U(q, w, s) + C(q, z)z + 2C(q, w)z + F(q)z`` with
    ``w = Phi'(s)rho(s)``, which holds because ``C`` has the exchange property.
    """

    q = np.asarray(q, dtype=float)
    w = orbit.phi(s, 1) * orbit.rho(s)
    z = np.asarray(qdot, dtype=float) - w
    return (
        eval_U(sys, q, w, s, orbit)
        + sys.coriolis_matrix(q, z) @ z
        + 2.0 * sys.coriolis_matrix(q, w) @ z
        + sys.friction_matrix(q) @ z
    )


def cart_pendulum(g: float = GRAVITY) -> MechanicalSystem:
    """Cart with an unactuated point-mass pendulum, unit masses and length.

    ``q = (x, theta)`` with ``theta`` measured from the upright position.
    """

    def mass_matrix(q: np.ndarray) -> np.ndarray:
        c = np.cos(q[1])
        return np.array([[2.0, c], [c, 1.0]])

    def coriolis_matrix(q: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.array([[0.0, -np.sin(q[1]) * w[1]], [0.0, 0.0]])

    def friction_matrix(q: np.ndarray) -> np.ndarray:
        return np.zeros((2, 2))

    def gravity_vector(q: np.ndarray) -> np.ndarray:
        return np.array([0.0, -g * np.sin(q[1])])

    def potential(q: np.ndarray) -> float:
        return g * np.cos(q[1])

    return MechanicalSystem(
        name="cart_pendulum",
        n_q=2,
        n_u=1,
        mass_matrix=mass_matrix,
        coriolis_matrix=coriolis_matrix,
        friction_matrix=friction_matrix,
        gravity_vector=gravity_vector,
        input_matrix=np.array([[1.0], [0.0]]),
        input_left_inverse=np.array([[1.0, 0.0]]),
        potential=potential,
    )


SYSTEMS = {"cart_pendulum": cart_pendulum}


def build_system(name: str, **parameters) -> MechanicalSystem:
    """Look up a built-in system by the name used in run configurations."""

    if name not in SYSTEMS:
        raise ConfigurationError(f"Unknown system `{name}`. Known systems: {sorted(SYSTEMS)}.")
    return SYSTEMS[name](**parameters)
