"""Projection operators ``s = P(x)`` onto a planned orbit.

A projection is defined implicitly by a scalar condition ``h(x, s) = 0`` with
``dh/ds != 0`` near the orbit. Two conditions are available:

``implicit_phase``
    ``h = s - atan2(-thetadot / (a2 rho(s)), theta / a2)``, the phase angle of
    the passive coordinate of a cosine-swing orbit.

``min_distance``
    ``h = x_s'(s)^T V (x - x_s(s))``, the stationarity condition of the
    weighted distance ``|x - x_s(s)|_V``.

Both give ``DP = -(dh/ds)^-1 dh/dx`` and the projection matrix
``Omega = I - x_s' DP`` along the orbit.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ImplicitFunctionError, OutsideNeighborhoodError
from .orbit import OrbitParameterization, eval_xs, eval_xs_prime, eval_xs_second

Variant = Literal["implicit_phase", "min_distance"]

SEED_NODES = 512
MAX_NEWTON_STEP = 0.5
SLOPE_FLOOR = 1e-10


def wrap_signed(angle: float) -> float:
    """Minimal signed representative of ``angle`` modulo ``2 pi``."""

    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class ProjectionResult:
    """Outcome of :func:`project`.

    :attr s: Projected phase in ``[0, s_max)``.
    :attr x_perp: ``x - x_s(s)``.
    :attr iterations: Updates applied to the seed.
    :attr residual: ``|h(x, s)|`` at return.
    """

    s: float
    x_perp: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class ProjectionOperator:
    """Scalar condition defining ``P`` and the iteration solving it.

    :attr orbit: Orbit projected on.
    :attr variant: ``implicit_phase`` or ``min_distance``.
    :attr weight: Constant weight ``V`` of the ``min_distance`` condition.
    :attr passive_index: Coordinate index of the swinging passive joint.
    """

    orbit: OrbitParameterization
    variant: Variant = "implicit_phase"
    max_iter: int = 50
    tol: float = 1e-12
    weight: Optional[np.ndarray] = None
    passive_index: int = 1
    _seeds: np.ndarray = field(init=False, repr=False, compare=False)
    _seed_states: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):

        n_x = 2 * self.orbit.n_q
        match self.variant:
            case "implicit_phase":
                if not hasattr(self.orbit.template, "a2"):
                    raise ConfigurationError("`implicit_phase` projection needs a cosine-swing template with amplitude `a2`.")
            case "min_distance":
                weight = np.eye(n_x) if self.weight is None else np.asarray(self.weight, dtype=float)
                if weight.shape != (n_x, n_x) or not np.allclose(weight, weight.T):
                    raise ConfigurationError(f"Projection weight must be a symmetric {n_x}x{n_x} matrix.")
                if np.min(np.linalg.eigvalsh(weight)) <= 0:
                    raise ConfigurationError("Projection weight must be positive definite.")
                object.__setattr__(self, "weight", weight)
            case _:
                raise ConfigurationError(f"Unknown projection variant `{self.variant}`.")

        seeds = np.linspace(0.0, self.orbit.s_max, SEED_NODES, endpoint=False)
        object.__setattr__(self, "_seeds", seeds)
        object.__setattr__(self, "_seed_states", np.array([eval_xs(self.orbit, s) for s in seeds]))

    @property
    def n_x(self) -> int:
        return 2 * self.orbit.n_q

    @property
    def _angle_indices(self) -> Tuple[int, int]:
        return self.passive_index, self.orbit.n_q + self.passive_index

    def condition(self, x: np.ndarray, s: float) -> Tuple[float, float, np.ndarray]:
        """Return ``h(x, s)``, ``dh/ds`` and ``dh/dx``."""

        x = np.asarray(x, dtype=float)
        if self.variant == "implicit_phase":
            return self._implicit_phase(x, s)
        return self._min_distance(x, s)

    def _implicit_phase(self, x: np.ndarray, s: float):

        a2 = self.orbit.template.a2
        i, j = self._angle_indices
        rho, drho = self.orbit.rho(s), self.orbit.rho(s, 1)
        theta, thetadot = x[i], x[j]

        cos_part = theta / a2
        sin_part = -thetadot / (a2 * rho)
        radius2 = cos_part**2 + sin_part**2
        if radius2 == 0.0:
            raise ImplicitFunctionError("The phase angle is undefined at theta = thetadot = 0.")

        h = wrap_signed(s - np.arctan2(sin_part, cos_part))
        h_s = 1.0 - (cos_part / radius2) * thetadot * drho / (a2 * rho**2)
        h_x = np.zeros(self.n_x)
        h_x[i] = sin_part / (radius2 * a2)
        h_x[j] = cos_part / (radius2 * a2 * rho)
        return h, h_s, h_x

    def _min_distance(self, x: np.ndarray, s: float):

        d = x - eval_xs(self.orbit, s)
        tangent = eval_xs_prime(self.orbit, s)
        weighted = self.weight @ tangent
        h = float(weighted @ d)
        h_s = float(self.weight @ eval_xs_second(self.orbit, s) @ d - weighted @ tangent)
        return h, h_s, weighted

    def jacobian(self, x: np.ndarray, s: float) -> np.ndarray:
        """``DP(x)`` by the implicit function theorem, given ``s = P(x)``."""

        _, h_s, h_x = self.condition(x, s)
        if abs(h_s) < SLOPE_FLOOR:
            logging.fatal(f"dh/ds = {h_s} at s = {s}.")
            raise ImplicitFunctionError(f"dh/ds = {h_s:.3e} vanishes at s = {s:.12g}.")
        return -h_x / h_s

    def seed(self, x: np.ndarray) -> float:
        """Nearest seed node; the phase variant compares the passive coordinates only."""

        d = self._seed_states - x
        if self.variant == "implicit_phase":
            i, j = self._angle_indices
            distance = d[:, i] ** 2 + d[:, j] ** 2
        else:
            distance = np.einsum("ki,ij,kj->k", d, self.weight, d)
        return float(self._seeds[np.argmin(distance)])


def project(op: ProjectionOperator, x: np.ndarray, hint: Optional[float] = None) -> ProjectionResult:
    """Solve ``h(x, s) = 0`` for ``s`` near ``hint`` (or the nearest seed node).

    The phase variant iterates ``s <- s - h`` and switches to Newton steps when
    the residual stops halving; the distance variant uses Newton throughout.
    """

    x = np.asarray(x, dtype=float)
    s = op.seed(x) if hint is None else float(hint)
    h, h_s, _ = op.condition(x, s)
    best = abs(h)
    newton = op.variant == "min_distance"

    iterations = 0
    while abs(h) > op.tol:
        if iterations >= op.max_iter:
            logging.fatal(f"Projection did not converge in {op.max_iter} iterations; best residual {best:.3e}.")
            raise OutsideNeighborhoodError(
                f"No convergence in {op.max_iter} iterations (best residual {best:.3e}); the state is outside the tube.",
                best_residual=best,
            )
        if newton:
            if abs(h_s) < SLOPE_FLOOR:
                raise ImplicitFunctionError(f"dh/ds = {h_s:.3e} vanishes at s = {s:.12g}.")
            step = float(np.clip(h / h_s, -MAX_NEWTON_STEP, MAX_NEWTON_STEP))
        else:
            step = h

        s -= step
        iterations += 1
        previous = abs(h)
        h, h_s, _ = op.condition(x, s)
        best = min(best, abs(h))
        if not newton and abs(h) > 0.5 * previous:
            newton = True

    if abs(h_s) < SLOPE_FLOOR:
        raise ImplicitFunctionError(f"dh/ds = {h_s:.3e} vanishes at s = {s:.12g}.")

    s = op.orbit.wrap(s)
    return ProjectionResult(s=s, x_perp=x - eval_xs(op.orbit, s), iterations=iterations, residual=abs(h))


def dP_on_orbit(op: ProjectionOperator, s: float) -> np.ndarray:
    return op.jacobian(eval_xs(op.orbit, s), s)


def d2P_on_orbit(op: ProjectionOperator, s: float, symmetrize: bool = True) -> np.ndarray:
    """Hessian of ``P`` at ``x_s(s)`` by central differences of ``DP``.

    Each perturbed state is projected again so that ``DP`` is evaluated at its
    own phase.
    """

    xs = eval_xs(op.orbit, s)
    eps = 1e-5 * (1.0 + np.linalg.norm(xs))
    H = np.empty((op.n_x, op.n_x))
    for i in range(op.n_x):
        e = np.zeros(op.n_x)
        e[i] = eps
        columns = []
        for x in (xs + e, xs - e):
            sp = project(op, x, hint=s).s
            columns.append(op.jacobian(x, s + wrap_signed(sp - s)))
        H[:, i] = (columns[0] - columns[1]) / (2.0 * eps)
    return 0.5 * (H + H.T) if symmetrize else H


def omega_matrix(op: ProjectionOperator, s: float, dP: Optional[np.ndarray] = None) -> np.ndarray:
    """``Omega = I - x_s'(s) DP(s)``."""

    dP = dP_on_orbit(op, s) if dP is None else dP
    return np.eye(op.n_x) - np.outer(eval_xs_prime(op.orbit, s), dP)
