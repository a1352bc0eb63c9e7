"""Periodic orbits described by virtual constraints ``q = Phi(s)``.

The motion generator ``s`` moves with velocity ``sdot = rho(s) > 0``. For a
system with a single passive row, substituting the constraint into the
equations of motion leaves the scalar reduced dynamics

    alpha(s) sddot + beta(s) sdot^2 + gamma(s) = 0

which is linear in ``Z = rho^2``. Points where ``alpha`` vanishes are singular;
there the only bounded solution has ``beta Z + gamma = 0`` and the profile is
built by integrating outward from these anchors.
"""

import logging
from dataclasses import dataclass, field
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import legendre
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import null_space
from scipy.optimize import brentq
from scipy.special import roots_legendre

from .errors import (
    ConfigurationError,
    InconsistentParameterizationError,
    InfeasibleOrbitError,
    IntegrationError,
    NotApplicableError,
)
from .mechanics import MechanicalSystem, equation_residual, eval_U

TWO_PI = 2.0 * np.pi

SCAN_POINTS = 4096
EXACT_ZERO = 1e-14
DERIVATIVE_STEP = 1e-3

GAUSS_ORDER = 12
REFINE_LEVELS = 24
SERIES_RADIUS = 1e-6
SERIES_ALPHA = 1e-8
STITCH_WARN = 1e-6
STITCH_FAIL = 1e-4
NEGATIVE_TOLERANCE = 1e-10


# --------------------------------------------------------------------------- #
# Templates


@dataclass(frozen=True)
class CosineSwingTemplate:
    """``Phi(s) = (-gain sin(a2 cos s), a2 cos s)`` for the cart-pendulum.

    The pendulum swings with amplitude ``a2`` around the upright position and
    the cart follows it.

    :attr a2: Pendulum amplitude in radians.
    :attr gain: Cart amplitude coefficient.
    """

    key: ClassVar[str] = "cosine_swing"
    n_q: ClassVar[int] = 2

    a2: float = 0.1129
    gain: float = 1.5

    @property
    def params(self) -> Dict[str, float]:
        return {"a2": self.a2, "gain": self.gain}

    def __call__(self, s, order: int = 0) -> np.ndarray:
        """Evaluate ``Phi`` or its derivative of the given order (up to 3)."""

        s = np.asarray(s, dtype=float)
        a = self.a2
        c = a * np.cos(s)
        c1, c2, c3 = -a * np.sin(s), -a * np.cos(s), a * np.sin(s)
        cos_c, sin_c = np.cos(c), np.sin(c)

        match order:
            case 0:
                phi1, phi2 = sin_c, c
            case 1:
                phi1, phi2 = cos_c * c1, c1
            case 2:
                phi1, phi2 = -sin_c * c1**2 + cos_c * c2, c2
            case 3:
                phi1, phi2 = -cos_c * c1**3 - 3.0 * sin_c * c1 * c2 + cos_c * c3, c3
            case _:
                raise ValueError(f"Derivative order must be in 0..3, got `{order}`.")

        return np.stack((-self.gain * phi1, phi2), axis=0)


TEMPLATES = {CosineSwingTemplate.key: CosineSwingTemplate}


def build_template(key: str, **params):
    if key not in TEMPLATES:
        raise ConfigurationError(f"Unknown orbit template `{key}`. Known templates: {sorted(TEMPLATES)}.")
    return TEMPLATES[key](**params)


# --------------------------------------------------------------------------- #
# Reduced dynamics


def _five_point(fn, s: float, h: float = DERIVATIVE_STEP) -> float:
    return (-fn(s + 2 * h) + 8 * fn(s + h) - 8 * fn(s - h) + fn(s - 2 * h)) / (12 * h)


def _five_point_second(fn, s: float, h: float = DERIVATIVE_STEP) -> float:
    return (-fn(s + 2 * h) + 16 * fn(s + h) - 30 * fn(s) + 16 * fn(s - h) - fn(s - 2 * h)) / (12 * h * h)


@dataclass(frozen=True)
class ReducedDynamics:
    """Coefficients of ``alpha sddot + beta sdot^2 + gamma = 0``.

    The passive row is selected by the annihilator ``b`` of the input matrix,
    so ``alpha = b M(Phi) Phi'``, ``beta = b (M(Phi) Phi'' + C(Phi, Phi') Phi')``
    and ``gamma = b G(Phi)``.

    :attr singular_points: Zeros of ``alpha`` in ``[0, s_max)``, ascending.
    """

    sys: MechanicalSystem
    template: object
    annihilator: np.ndarray
    s_max: float = TWO_PI
    singular_points: Tuple[float, ...] = ()

    def alpha(self, s: float) -> float:
        q = self.template(s)
        return float(self.annihilator @ self.sys.mass_matrix(q) @ self.template(s, 1))

    def beta(self, s: float) -> float:
        q, dq = self.template(s), self.template(s, 1)
        return float(
            self.annihilator
            @ (self.sys.mass_matrix(q) @ self.template(s, 2) + self.sys.coriolis_matrix(q, dq) @ dq)
        )

    def gamma(self, s: float) -> float:
        return float(self.annihilator @ self.sys.gravity_vector(self.template(s)))

    def dalpha(self, s: float) -> float:
        return _five_point(self.alpha, s)

    def ddalpha(self, s: float) -> float:
        return _five_point_second(self.alpha, s)

    def delta(self, s: float) -> float:
        return self.beta(s) - self.dalpha(s)

    def ddelta(self, s: float) -> float:
        return _five_point(self.beta, s) - self.ddalpha(s)

    def residual(self, s: float, sdot: float, sddot: float) -> float:
        return self.alpha(s) * sddot + self.beta(s) * sdot**2 + self.gamma(s)


def _find_singular_points(alpha, s_max: float, n_scan: int = SCAN_POINTS) -> List[float]:

    grid = np.linspace(0.0, s_max, n_scan + 1)
    values = np.array([alpha(s) for s in grid])
    roots: List[float] = []
    for k in range(n_scan):
        a, b = values[k], values[k + 1]
        if abs(a) < EXACT_ZERO:
            roots.append(grid[k])
        elif abs(b) >= EXACT_ZERO and a * b < 0.0:
            roots.append(brentq(alpha, grid[k], grid[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))

    unique: List[float] = []
    for root in sorted(0.0 if s_max - r < 1e-9 else float(r) for r in np.mod(roots, s_max)):
        if not unique or root - unique[-1] > 1e-9:
            unique.append(root)
    if len(unique) > 1 and unique[0] + s_max - unique[-1] <= 1e-9:
        unique.pop()
    return unique


def reduced_dynamics(sys: MechanicalSystem, template, s_max: float = TWO_PI) -> ReducedDynamics:
    """Project the equations of motion on the passive direction along ``Phi``."""

    if sys.n_q - sys.n_u != 1:
        raise NotApplicableError(
            f"Reduced dynamics need exactly one passive row; `{sys.name}` has n_q = {sys.n_q}, n_u = {sys.n_u}."
        )
    if getattr(template, "n_q", sys.n_q) != sys.n_q:
        raise ConfigurationError(f"Template `{template.key}` is {template.n_q}-dimensional, system has n_q = {sys.n_q}.")

    b = null_space(sys.input_matrix.T)[:, 0]
    b = b if b[np.argmax(np.abs(b))] > 0 else -b

    for s in np.linspace(0.0, s_max, 64, endpoint=False):
        if np.max(np.abs(b @ sys.friction_matrix(template(s)))) > 1e-12:
            raise NotApplicableError("Friction acts on the passive row; the reduced dynamics are not quadratic in sdot.")

    rd = ReducedDynamics(sys=sys, template=template, annihilator=b, s_max=s_max)
    singular = _find_singular_points(rd.alpha, s_max)
    logging.info(f"Reduced dynamics of `{sys.name}` have {len(singular)} singular points: {singular}.")
    if not singular:
        raise NotApplicableError("The reduced dynamics have no singular point to anchor the velocity profile.")

    return ReducedDynamics(sys=sys, template=template, annihilator=b, s_max=s_max, singular_points=tuple(singular))


# --------------------------------------------------------------------------- #
# Velocity profile


@dataclass(frozen=True)
class VelocityProfile:
    """Periodic cubic interpolant of ``rho`` on a uniform grid.

    :attr s_grid: Nodes ``2 pi i / N``, ``i = 0..N-1``.
    :attr rho_grid: ``rho`` at the nodes, strictly positive.
    :attr stitch_mismatch: Largest relative disagreement of the two
        continuations met at interval midpoints before redistribution.
    """

    s_grid: np.ndarray
    rho_grid: np.ndarray
    s_max: float = TWO_PI
    stitch_mismatch: float = 0.0
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):

        s_grid = np.asarray(self.s_grid, dtype=float)
        rho_grid = np.asarray(self.rho_grid, dtype=float)
        if s_grid.shape != rho_grid.shape or s_grid.size < 4:
            raise ConfigurationError(f"Velocity profile needs matching grids of at least 4 nodes, got {s_grid.shape}.")
        if np.any(np.diff(s_grid) <= 0) or s_grid[0] < 0 or s_grid[-1] >= self.s_max:
            raise ConfigurationError("Velocity profile nodes must increase strictly inside [0, s_max).")
        if np.any(rho_grid <= 0) or not np.all(np.isfinite(rho_grid)):
            raise InfeasibleOrbitError("Velocity profile must be finite and strictly positive.")

        closed_s = np.append(s_grid, s_grid[0] + self.s_max)
        closed_rho = np.append(rho_grid, rho_grid[0])
        object.__setattr__(self, "s_grid", s_grid)
        object.__setattr__(self, "rho_grid", rho_grid)
        object.__setattr__(self, "_spline", CubicSpline(closed_s, closed_rho, bc_type="periodic"))

    @property
    def grid_size(self) -> int:
        return self.s_grid.size

    @property
    def drho_grid(self) -> np.ndarray:
        return self._spline(self.s_grid, 1)

    def __call__(self, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        value = self._spline(self.s_grid[0] + np.mod(s - self.s_grid[0], self.s_max), order)
        return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class _Anchor:

    s: float
    z: float
    dalpha: float
    q: float
    r0: float
    gamma: float


def _anchor(rd: ReducedDynamics, s: float) -> _Anchor:

    beta, gamma = rd.beta(s), rd.gamma(s)
    if beta == 0.0:
        logging.fatal(f"beta vanishes at the singular point s = {s}.")
        raise InfeasibleOrbitError(f"beta(s) = 0 at the singular point s = {s:.12g}; the anchor is undefined.")
    z = -gamma / beta
    if z <= 0.0:
        logging.fatal(f"Anchoring gives rho^2 = {z} <= 0 at s = {s}.")
        raise InfeasibleOrbitError(f"Anchoring condition gives rho^2 = {z:.6g} <= 0 at s = {s:.12g}.")

    dalpha = rd.dalpha(s)
    if abs(dalpha) < 1e-10 or 2.0 * beta / dalpha <= 0.0:
        raise InconsistentParameterizationError(
            f"Singular point s = {s:.12g} has alpha' = {dalpha:.6g}, beta = {beta:.6g}; "
            "no bounded solution passes through it."
        )

    delta = beta - dalpha
    q = 2.0 * delta / dalpha
    r0 = (2.0 * rd.ddelta(s) - delta * rd.ddalpha(s) / dalpha) / dalpha
    return _Anchor(s=s, z=z, dalpha=dalpha, q=q, r0=r0, gamma=gamma)


def _panel_rule(n: int):
    """Gauss-Legendre nodes and weights with the matrix integrating from -1 to each node."""

    x, w = roots_legendre(n)
    vander = legendre.legvander(x, n - 1)
    integrated = np.empty_like(vander)
    for m in range(n):
        coef = np.zeros(n)
        coef[m] = 1.0
        integrated[:, m] = legendre.legval(x, legendre.legint(coef, lbnd=-1))
    return x, w, integrated @ np.linalg.inv(vander)


def _continue_from(rd: ReducedDynamics, anchor: _Anchor, sigma: float, targets: np.ndarray, max_panel: float) -> np.ndarray:
    """``rho^2`` at distances ``targets`` from ``anchor`` in direction ``sigma``.

    Integrates ``(alpha^2 Z)' = -(2 delta / alpha) alpha^2 Z - 2 alpha gamma`` with
    the integrating factor ``t^q exp(R(t))`` in the local variable ``t``; the
    running value is kept scaled by the integrating factor at the current edge.
    """

    x, w, S = _panel_rule(GAUSS_ORDER)
    q = anchor.q

    def regular_part(t: np.ndarray) -> np.ndarray:
        out = np.empty_like(t)
        for i, ti in enumerate(t):
            tau = anchor.s + sigma * ti
            alpha = rd.alpha(tau)
            if ti < SERIES_RADIUS or abs(alpha) < SERIES_ALPHA:
                out[i] = anchor.r0
            else:
                out[i] = 2.0 * rd.delta(tau) / alpha - q / (sigma * ti)
        return sigma * out

    h0 = min(0.5 * float(np.min(targets)), max_panel)
    edges = np.concatenate((h0 * 2.0 ** -np.arange(REFINE_LEVELS, 0, -1), targets))
    edges = np.unique(edges)
    gaps = np.diff(edges)
    refined = [edges[:1]]
    for a, b, gap in zip(edges[:-1], edges[1:], gaps):
        pieces = max(1, int(np.ceil(gap / max_panel)))
        refined.append(np.append(a + gap * np.arange(1, pieces) / pieces, b))
    edges = np.concatenate(refined)

    e0 = edges[0]
    R = sigma * anchor.r0 * e0
    log_factor = q * np.log(e0) + R
    scaled = sigma * anchor.dalpha * anchor.gamma * e0**2 / (q + 2.0)

    values: Dict[float, float] = {}
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        nodes = a + half * (x + 1.0)
        r = regular_part(nodes)
        R_nodes = R + half * (S @ r)
        R_b = R + half * (w @ r)
        log_b = q * np.log(b) + R_b
        source = np.array([rd.alpha(anchor.s + sigma * t) * rd.gamma(anchor.s + sigma * t) for t in nodes])
        scaled = scaled * np.exp(log_factor - log_b) + half * np.sum(w * np.exp(q * np.log(nodes) + R_nodes - log_b) * source)
        R, log_factor = R_b, log_b
        values[b] = -2.0 * sigma * scaled / rd.alpha(anchor.s + sigma * b) ** 2

    return np.array([values[t] for t in targets])


def solve_rho(rd: ReducedDynamics, grid_size: int = 2048) -> VelocityProfile:
    """Build the positive velocity profile anchored at the singular points."""

    s_max = rd.s_max
    s_grid = np.linspace(0.0, s_max, grid_size, endpoint=False)
    anchors = [_anchor(rd, s) for s in rd.singular_points]
    logging.info(f"Anchors rho^2 = {[round(a.z, 12) for a in anchors]} at s = {[a.s for a in anchors]}.")

    Z = np.full(grid_size, np.nan)
    for anchor in anchors:
        offset = np.abs(np.mod(s_grid - anchor.s + 0.5 * s_max, s_max) - 0.5 * s_max)
        Z[offset < 1e-10] = anchor.z
    on_anchor = ~np.isnan(Z)

    max_panel = min(s_max / grid_size, s_max / 1024)
    worst = 0.0
    for i, left in enumerate(anchors):
        right = anchors[(i + 1) % len(anchors)]
        length = right.s - left.s if i + 1 < len(anchors) else right.s + s_max - left.s
        middle = 0.5 * length

        offset = np.mod(s_grid - left.s, s_max)
        inside = (offset < length) & ~on_anchor
        left_side = inside & (offset <= middle)
        right_side = inside & (offset > middle)

        t_left = np.append(offset[left_side], middle)
        t_right = np.append(length - offset[right_side], middle)
        z_left = _continue_from(rd, left, 1.0, t_left, max_panel)
        z_right = _continue_from(rd, right, -1.0, t_right, max_panel)

        jump = z_left[-1] - z_right[-1]
        mismatch = abs(jump) / max(abs(z_left[-1]), abs(z_right[-1]), np.finfo(float).tiny)
        worst = max(worst, mismatch)
        if mismatch > STITCH_FAIL:
            logging.fatal(f"Continuations disagree by {mismatch:.3e} at s = {left.s + middle}.")
            raise InconsistentParameterizationError(
                f"Left and right continuations of rho^2 disagree by {mismatch:.3e} (relative) at s = {left.s + middle:.12g}."
            )
        if mismatch > STITCH_WARN:
            logging.warning(f"Continuations disagree by {mismatch:.3e} at s = {left.s + middle}; redistributing.")

        Z[left_side] = z_left[:-1] - 0.5 * jump * t_left[:-1] / middle
        Z[right_side] = z_right[:-1] + 0.5 * jump * t_right[:-1] / middle

    if np.any(np.isnan(Z)):
        raise InconsistentParameterizationError("Some grid nodes were not reached by any continuation.")
    if np.min(Z) < -NEGATIVE_TOLERANCE:
        at = s_grid[np.argmin(Z)]
        logging.fatal(f"rho^2 = {np.min(Z)} < 0 at s = {at}.")
        raise InfeasibleOrbitError(f"rho^2 becomes negative ({np.min(Z):.6g}) at s = {at:.12g}.")

    rho = np.sqrt(np.clip(Z, 0.0, None))
    if np.min(rho) <= 0.0:
        raise InfeasibleOrbitError(f"rho vanishes at s = {s_grid[np.argmin(rho)]:.12g}.")

    logging.info(f"Velocity profile on {grid_size} nodes: rho in [{rho.min():.6g}, {rho.max():.6g}], stitch mismatch {worst:.3e}.")
    return VelocityProfile(s_grid=s_grid, rho_grid=rho, s_max=s_max, stitch_mismatch=worst)


# --------------------------------------------------------------------------- #
# Orbit


@dataclass(frozen=True)
class OrbitParameterization:
    """``Phi`` with its derivatives and the velocity profile ``rho``.

    :attr template: Callable ``(s, order) -> Phi^(order)(s)``.
    :attr rho: Velocity profile; ``rho(s, order)`` evaluates derivatives.
    :attr reduced: Reduced dynamics the profile was solved from, if any.
    """

    template: object
    rho: VelocityProfile
    s_max: float = TWO_PI
    reduced: Optional[ReducedDynamics] = field(default=None, compare=False, repr=False)

    @property
    def params(self) -> Dict[str, float]:
        return dict(self.template.params)

    @property
    def n_q(self) -> int:
        return int(self.template.n_q)

    def wrap(self, s: float) -> float:
        return float(np.mod(s, self.s_max))

    def phi(self, s: float, order: int = 0) -> np.ndarray:
        return self.template(self.wrap(s), order)

    def lam(self, s: float) -> np.ndarray:
        """``Lambda = Phi' rho' + Phi'' rho``, so that ``qddot = Lambda rho`` on the orbit."""

        return self.phi(s, 1) * self.rho(s, 1) + self.phi(s, 2) * self.rho(s)

    def dlam(self, s: float) -> np.ndarray:
        return 2.0 * self.phi(s, 2) * self.rho(s, 1) + self.phi(s, 1) * self.rho(s, 2) + self.phi(s, 3) * self.rho(s)


def eval_xs(orbit: OrbitParameterization, s: float) -> np.ndarray:
    return np.concatenate((orbit.phi(s), orbit.phi(s, 1) * orbit.rho(s)))


def eval_xs_prime(orbit: OrbitParameterization, s: float) -> np.ndarray:
    return np.concatenate((orbit.phi(s, 1), orbit.lam(s)))


def eval_xs_second(orbit: OrbitParameterization, s: float) -> np.ndarray:
    return np.concatenate((orbit.phi(s, 2), orbit.dlam(s)))


def nominal_input(sys: MechanicalSystem, orbit: OrbitParameterization, s: float) -> np.ndarray:
    """``u*(s) = B^+ U(Phi(s), Phi'(s) rho(s), s)``."""

    return sys.input_left_inverse @ eval_U(sys, orbit.phi(s), orbit.phi(s, 1) * orbit.rho(s), s, orbit)


def feasibility_residual(sys: MechanicalSystem, orbit: OrbitParameterization, n_points: int = 1024) -> float:
    """Largest equation-of-motion residual of the nominal motion on a uniform grid."""

    worst = 0.0
    for s in np.linspace(0.0, orbit.s_max, n_points, endpoint=False):
        x = eval_xs(orbit, s)
        residual = equation_residual(sys, x, orbit.lam(s) * orbit.rho(s), nominal_input(sys, orbit, s))
        worst = max(worst, float(np.max(np.abs(residual))))
    return worst


def plan_orbit(sys: MechanicalSystem, template, grid_size: int = 2048) -> OrbitParameterization:
    rd = reduced_dynamics(sys, template)
    return OrbitParameterization(template=template, rho=solve_rho(rd, grid_size), s_max=rd.s_max, reduced=rd)


# --------------------------------------------------------------------------- #
# Time law and the time-integration oracle


@dataclass(frozen=True)
class TimeLaw:
    """Nominal time along the orbit, ``t(s) = int_0^s ds / rho``.

    :attr period: Nominal period ``T``.
    """

    period: float
    s_max: float
    _time_of_phase: CubicSpline = field(repr=False, compare=False)
    _phase_of_time: CubicSpline = field(repr=False, compare=False)

    def time_at(self, s: float) -> float:
        turns, frac = divmod(s, self.s_max)
        return float(turns * self.period + self._time_of_phase(frac))

    def phase_at(self, t: float) -> float:
        turns, frac = divmod(t, self.period)
        return float(turns * self.s_max + self._phase_of_time(frac))


def time_law(orbit: OrbitParameterization) -> TimeLaw:

    grid = orbit.rho.s_grid
    closed = np.append(grid, orbit.s_max)
    slowness = CubicSpline(closed, np.append(1.0 / orbit.rho.rho_grid, 1.0 / orbit.rho.rho_grid[0]), bc_type="periodic")
    elapsed = slowness.antiderivative()
    times = elapsed(closed) - elapsed(closed[0])
    return TimeLaw(
        period=float(times[-1]),
        s_max=orbit.s_max,
        _time_of_phase=CubicSpline(closed, times),
        _phase_of_time=CubicSpline(times, closed),
    )


@dataclass(frozen=True)
class OracleComparison:
    """``sdot(t)`` of the integrated reduced dynamics against ``rho(s(t))``."""

    s: np.ndarray
    sdot: np.ndarray
    rho: np.ndarray

    @property
    def max_relative_error(self) -> float:
        return float(np.max(np.abs(self.sdot - self.rho) / self.rho))


def rho_time_oracle(
    rd: ReducedDynamics,
    profile: VelocityProfile,
    margin: float = 0.05,
    rtol: float = 1e-11,
    atol: float = 1e-12,
) -> OracleComparison:
    """Integrate the reduced dynamics in time across each regular interval.

    Every run starts ``margin`` after one singular point on the profile and
    stops ``margin`` before the next.
    """

    def rhs(t, y):
        s, sdot = y
        return [sdot, -(rd.beta(s) * sdot**2 + rd.gamma(s)) / rd.alpha(s)]

    points = list(rd.singular_points)
    s_all, sdot_all = [], []
    for i, left in enumerate(points):
        right = points[i + 1] if i + 1 < len(points) else points[0] + rd.s_max
        start, stop = left + margin, right - margin
        if stop <= start:
            continue

        def reached(t, y, stop=stop):
            return y[0] - stop

        reached.terminal = True
        reached.direction = 1

        horizon = 10.0 * (stop - start) / float(np.min(profile.rho_grid))
        sol = solve_ivp(rhs, (0.0, horizon), [start, profile(start)], method="DOP853", rtol=rtol, atol=atol, events=reached, max_step=0.01)
        if sol.status != 1:
            logging.fatal(f"Time oracle did not reach s = {stop}: {sol.message}")
            raise IntegrationError(f"Time integration of the reduced dynamics did not reach s = {stop:.6g}: {sol.message}")
        s_all.append(sol.y[0])
        sdot_all.append(sol.y[1])

    s = np.concatenate(s_all)
    return OracleComparison(s=s, sdot=np.concatenate(sdot_all), rho=profile(s))


# --------------------------------------------------------------------------- #
# Tables


def orbit_table(sys: MechanicalSystem, orbit: OrbitParameterization) -> Tuple[List[str], np.ndarray]:
    """Header and rows of the orbit export, one row per profile node."""

    n_q = orbit.n_q
    header = ["s"] + [f"phi{i + 1}" for i in range(n_q)] + [f"dphi{i + 1}" for i in range(n_q)]
    header += ["rho"] + (["u_star"] if sys.n_u == 1 else [f"u_star{j + 1}" for j in range(sys.n_u)])
    rows = [
        np.concatenate(([s], orbit.phi(s), orbit.phi(s, 1), [orbit.rho(s)], nominal_input(sys, orbit, s)))
        for s in orbit.rho.s_grid
    ]
    return header, np.array(rows)


def orbit_from_table(template, header: Sequence[str], rows: np.ndarray, s_max: float = TWO_PI) -> OrbitParameterization:
    """Rebuild an orbit from its export and the template it was planned with."""

    rows = np.asarray(rows, dtype=float)
    if "s" not in header or "rho" not in header:
        raise ConfigurationError(f"Orbit table lacks `s` or `rho` columns: {list(header)}.")
    s, rho = rows[:, header.index("s")], rows[:, header.index("rho")]

    phi_columns = [header.index(f"phi{i + 1}") for i in range(template.n_q)]
    stored = rows[:, phi_columns]
    expected = np.array([template(si) for si in s])
    if np.max(np.abs(stored - expected)) > 1e-9:
        raise ConfigurationError("Stored orbit does not match the configured template.")

    return OrbitParameterization(template=template, rho=VelocityProfile(s_grid=s, rho_grid=rho, s_max=s_max), s_max=s_max)
