"""Projected periodic Riccati equation and the orbitally stabilizing gain.

A symmetric periodic ``R(s) >= 0`` is sought with

    Omega^T [R' rho + A^T R + R A + Q + kappa R - R S R] Omega = 0,
    S = B Gamma^-1 B^T,

where ``A``, ``B``, ``Omega`` and ``rho`` come from a transverse linearization.
The feedback is ``v = K(s) x_perp`` with ``K = -Gamma^-1 B^T R``.

Every upper triangular entry of ``R`` is a trigonometric polynomial; the
coefficients are fitted by nonlinear least squares on collocation nodes. The
sandwich leaves ``R + DP^T a^T + a DP`` free for any ``a``, so the tangent
image ``R x_s' = l |x_s'|^2 DP^T`` is added as a pinning residual. It makes
``K x_s' = 0``, which keeps the tangent the neutral direction of the closed
loop. Negative eigenvalues are penalized, with the penalty raised between
outer iterations while they persist, and the collocation grid is doubled
while the residual on the check grid stays above tolerance.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import LinAlgError, solve_continuous_are
from scipy.optimize import least_squares

from .errors import (
    ConfigurationError,
    DecreaseViolatedError,
    InfeasiblePsdError,
    IntegrationError,
    NoCertificateError,
    VerificationFailedError,
)
from .orbit import TWO_PI
from .tvlin import TransverseLinearization

PSD_TOLERANCE = 1e-6
NEUTRAL_ANGLE_TOLERANCE = 1e-3
KERNEL_FLOOR = 1e-12
PIN_FLOOR = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    """Weights and discretization of the Riccati solve.

    :attr Q: State weight, identity when ``None``.
    :attr Gamma: Input weight, ``0.1 I`` when ``None``.
    :attr collocation_points: Initial collocation grid, ``4 N + 1`` by default;
        doubled up to ``check_points`` while the certificate fails.
    :attr sweep_periods: Periods of the backward Riccati sweep used to
        initialize the fit; 0 keeps the frozen algebraic solutions.
    """

    Q: Optional[np.ndarray] = None
    Gamma: Optional[np.ndarray] = None
    kappa: float = 0.1
    fourier_order: int = 40
    collocation_points: Optional[int] = None
    psd_margin: float = 0.0
    residual_tol: float = 2e-4
    max_outer_iterations: int = 4
    max_evaluations: int = 200
    pin_weight: float = 1.0
    psd_weight: float = 10.0
    sweep_periods: int = 10
    check_points: int = 2048

    def resolved(self, n_x: int, n_u: int) -> "SolverConfig":
        """Fill defaults for the given dimensions and validate the hypotheses."""

        Q = np.eye(n_x) if self.Q is None else np.asarray(self.Q, dtype=float)
        Gamma = 0.1 * np.eye(n_u) if self.Gamma is None else np.asarray(self.Gamma, dtype=float).reshape(n_u, n_u)
        points = 4 * self.fourier_order + 1 if self.collocation_points is None else self.collocation_points

        for name, matrix, size in (("Q", Q, n_x), ("Gamma", Gamma, n_u)):
            if matrix.shape != (size, size) or not np.allclose(matrix, matrix.T, atol=1e-12):
                raise ConfigurationError(f"`{name}` must be a symmetric {size}x{size} matrix.")
            if np.min(np.linalg.eigvalsh(matrix)) <= 0:
                raise ConfigurationError(f"`{name}` must be positive definite.")
        if self.kappa < 0:
            raise ConfigurationError(f"`kappa` must be non-negative, got {self.kappa}.")
        if self.fourier_order < 1 or points < 2 * self.fourier_order + 1:
            raise ConfigurationError(f"Need at least 2N + 1 = {2 * self.fourier_order + 1} collocation points, got {points}.")
        if self.check_points < points:
            raise ConfigurationError(f"`check_points` ({self.check_points}) must not be below the collocation points ({points}).")

        return replace(self, Q=Q, Gamma=Gamma, collocation_points=points)


# --------------------------------------------------------------------------- #
# Fourier representation


def fourier_basis(s: np.ndarray, order: int, s_max: float = TWO_PI) -> Tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of ``[1, cos(k w s), sin(k w s)]``, ``k = 1..order``."""

    s = np.atleast_1d(np.asarray(s, dtype=float))
    w = TWO_PI / s_max
    k = np.arange(1, order + 1)
    ks = w * np.outer(s, k)
    values = np.hstack((np.ones((s.size, 1)), np.cos(ks), np.sin(ks)))
    derivative = np.hstack((np.zeros((s.size, 1)), -w * k * np.sin(ks), w * k * np.cos(ks)))
    return values, derivative


def upper_entries(n: int) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i, n)]


def _unit_matrices(n: int) -> np.ndarray:
    entries = upper_entries(n)
    E = np.zeros((len(entries), n, n))
    for e, (i, j) in enumerate(entries):
        E[e, i, j] = E[e, j, i] = 1.0
    return E


def _assemble(entry_values: np.ndarray, n: int) -> np.ndarray:
    """``(m, p)`` upper triangular entries to ``(m, n, n)`` symmetric matrices."""

    iu, ju = np.triu_indices(n)
    R = np.zeros((entry_values.shape[0], n, n))
    R[:, iu, ju] = entry_values
    R[:, ju, iu] = entry_values
    return R


@dataclass(frozen=True)
class GainSchedule:
    """Trigonometric polynomial ``R(s)`` and the gain ``K(s) = -Gamma^-1 B(s)^T R(s)``.

    :attr coefficients: ``(p, 2N + 1)`` coefficients ``[c0, a_1..a_N, b_1..b_N]``
        of the upper triangular entries in row-major order.
    :attr residual_max: Largest Frobenius residual on the check grid.
    :attr min_eigenvalue: Smallest eigenvalue of ``R`` on the check grid.
    :attr multipliers: Closed loop Floquet multipliers.
    :attr floquet: The closed loop Floquet analysis run by :func:`solve`.
    :attr collocation_points: Collocation grid of the accepted fit.
    """

    coefficients: np.ndarray
    n_x: int
    Gamma: np.ndarray
    linearization: TransverseLinearization = field(repr=False, compare=False)
    s_max: float = TWO_PI
    residual_max: float = float("nan")
    min_eigenvalue: float = float("nan")
    multipliers: Tuple[complex, ...] = ()
    outer_iterations: int = 0
    collocation_points: int = 0
    floquet: Optional["FloquetResult"] = field(default=None, repr=False, compare=False)

    @property
    def order(self) -> int:
        return (self.coefficients.shape[1] - 1) // 2

    def _evaluate(self, s, derivative: bool) -> np.ndarray:
        values, slopes = fourier_basis(s, self.order, self.s_max)
        basis = slopes if derivative else values
        R = _assemble(basis @ self.coefficients.T, self.n_x)
        return R[0] if np.ndim(s) == 0 else R

    def R(self, s) -> np.ndarray:
        return self._evaluate(s, False)

    def dR(self, s) -> np.ndarray:
        return self._evaluate(s, True)

    def K(self, s) -> np.ndarray:
        B = self.linearization.B(s)
        return -np.linalg.solve(self.Gamma, np.swapaxes(B, -1, -2) @ self.R(s))

    def table(self) -> Tuple[List[str], np.ndarray]:
        """Rows ``entry_i, entry_j, harmonic, cos_coef, sin_coef``."""

        N = self.order
        rows = []
        for e, (i, j) in enumerate(upper_entries(self.n_x)):
            c = self.coefficients[e]
            rows.append([i, j, 0, c[0], 0.0])
            for k in range(1, N + 1):
                rows.append([i, j, k, c[k], c[N + k]])
        return ["entry_i", "entry_j", "harmonic", "cos_coef", "sin_coef"], np.array(rows, dtype=float)

    @classmethod
    def from_table(
        cls, rows: np.ndarray, linearization: TransverseLinearization, Gamma: np.ndarray, s_max: float = TWO_PI
    ) -> "GainSchedule":
        rows = np.asarray(rows, dtype=float)
        n_x = linearization.n_x
        N = int(rows[:, 2].max())
        index = {entry: e for e, entry in enumerate(upper_entries(n_x))}
        coefficients = np.zeros((len(index), 2 * N + 1))
        for i, j, k, cos_coef, sin_coef in rows:
            e, k = index[(int(i), int(j))], int(k)
            coefficients[e, k] = cos_coef
            if k > 0:
                coefficients[e, N + k] = sin_coef
        return cls(coefficients=coefficients, n_x=n_x, Gamma=np.asarray(Gamma, dtype=float), linearization=linearization, s_max=s_max)


# --------------------------------------------------------------------------- #
# Residual


def _has_normal(tv: TransverseLinearization) -> bool:
    return bool(np.max(np.linalg.norm(tv.dP, axis=1)) >= KERNEL_FLOOR)


def projection_at(tv: TransverseLinearization, s) -> np.ndarray:
    """``Omega = I - x_s' DP / (DP x_s')`` from the interpolated tangent and ``DP``.

    Built from the same interpolants as the pin, so ``DP Omega = 0`` and
    ``Omega x_s' = 0`` hold exactly between grid nodes too.
    """

    s = np.atleast_1d(np.asarray(s, dtype=float))
    if not _has_normal(tv):
        return tv.Omega(s)
    dP, tangent = tv.DP(s), tv.tangent_at(s)
    scale = np.sum(dP * tangent, axis=1)
    return np.eye(tv.n_x)[None] - np.einsum("mi,mj->mij", tangent, dP) / scale[:, None, None]


def _sandwich(tv: TransverseLinearization, cfg: SolverConfig, s: np.ndarray, R: np.ndarray, dR: np.ndarray) -> np.ndarray:

    A, B, Omega, rho = tv.A(s), tv.B(s), projection_at(tv, s), tv.rho_at(s)
    S = B @ np.linalg.solve(cfg.Gamma, np.swapaxes(B, -1, -2))
    At = np.swapaxes(A, -1, -2)
    X = rho[:, None, None] * dR + At @ R + R @ A + cfg.Q + cfg.kappa * R - R @ S @ R
    return np.swapaxes(Omega, -1, -2) @ X @ Omega


def pre_residual(tv: TransverseLinearization, schedule, cfg: SolverConfig, s: float) -> np.ndarray:
    """``Omega^T [R' rho + A^T R + R A + Q + kappa R - R S R] Omega`` at ``s``.

    ``schedule`` is anything exposing ``R(s)`` and ``dR(s)``.
    """

    cfg = cfg.resolved(tv.n_x, tv.n_u)
    s_arr = np.atleast_1d(float(s))
    R = np.asarray(schedule.R(s_arr)).reshape(1, tv.n_x, tv.n_x)
    dR = np.asarray(schedule.dR(s_arr)).reshape(1, tv.n_x, tv.n_x)
    return _sandwich(tv, cfg, s_arr, R, dR)[0]


def residual_profile(tv: TransverseLinearization, gs: GainSchedule, cfg: SolverConfig, points: int) -> np.ndarray:
    """Frobenius norm of the residual on ``points`` uniform nodes."""

    cfg = cfg.resolved(tv.n_x, tv.n_u)
    s = np.linspace(0.0, tv.s_max, points, endpoint=False)
    return np.linalg.norm(_sandwich(tv, cfg, s, gs.R(s), gs.dR(s)), axis=(1, 2))


def pin_target(tv: TransverseLinearization, s, level: float) -> Tuple[np.ndarray, np.ndarray]:
    """Tangent ``x_s'`` and the pinned image ``level |x_s'|^2 DP^T`` of ``R x_s'``.

    The scaling gives the tangent direction the Rayleigh quotient ``level``.
    """

    s = np.atleast_1d(np.asarray(s, dtype=float))
    tangent = tv.tangent_at(s)
    return tangent, level * np.sum(tangent * tangent, axis=1)[:, None] * tv.DP(s)


# --------------------------------------------------------------------------- #
# Initialization


@dataclass(frozen=True)
class KernelFrame:
    """Orthonormal basis ``T(s)`` of ``ker DP(s)`` and the unit normal ``n(s)``.

    ``T`` is the Householder reflection sending a fixed reference axis to
    ``-n``, with that axis' column dropped, which keeps it smooth in ``s``.
    """

    normal: Optional[CubicSpline]
    basis: CubicSpline

    def T(self, s) -> np.ndarray:
        return self.basis(s)

    def dT(self, s) -> np.ndarray:
        return self.basis(s, 1)

    def n(self, s) -> Optional[np.ndarray]:
        return None if self.normal is None else self.normal(s)


def kernel_frame(tv: TransverseLinearization) -> KernelFrame:

    n_x = tv.n_x
    closed = np.append(tv.s_grid, tv.s_grid[0] + tv.s_max)
    if not _has_normal(tv):
        eye = np.repeat(np.eye(n_x)[None], closed.size, axis=0)
        return KernelFrame(normal=None, basis=CubicSpline(closed, eye, axis=0, bc_type="periodic"))

    normal = tv.dP / np.linalg.norm(tv.dP, axis=1)[:, None]
    axes = [(k, sign) for k in range(n_x) for sign in (1.0, -1.0)]
    clearance = [np.min(np.linalg.norm(normal + sign * np.eye(n_x)[k], axis=1)) for k, sign in axes]
    k, sign = axes[int(np.argmax(clearance))]

    u = normal + sign * np.eye(n_x)[k]
    H = np.eye(n_x)[None] - 2.0 * np.einsum("mi,mj->mij", u, u) / np.sum(u * u, axis=1)[:, None, None]
    T = np.delete(H, k, axis=2)
    return KernelFrame(
        normal=CubicSpline(closed, np.vstack((normal, normal[:1])), axis=0, bc_type="periodic"),
        basis=CubicSpline(closed, np.concatenate((T, T[:1])), axis=0, bc_type="periodic"),
    )


def _reduced_pair(tv: TransverseLinearization, frame: KernelFrame, cfg: SolverConfig, s: float):
    """``A~ = T^T A T + rho T'^T T``, ``B~ = T^T B``, ``Q~ = T^T Q T`` and ``rho`` at ``s``."""

    T, dT, rho = frame.T(s), frame.dT(s), float(tv.rho_at(s))
    return T.T @ tv.A(s) @ T + rho * dT.T @ T, T.T @ tv.B(s), T.T @ cfg.Q @ T, rho


def frozen_solutions(
    tv: TransverseLinearization, frame: KernelFrame, cfg: SolverConfig, phases: Optional[np.ndarray] = None
) -> List[Optional[np.ndarray]]:
    """Algebraic Riccati solutions of the reduced pair frozen at each phase, the grid nodes by default."""

    out: List[Optional[np.ndarray]] = []
    for s in tv.s_grid if phases is None else phases:
        A, B, Q, _ = _reduced_pair(tv, frame, cfg, s)
        try:
            out.append(solve_continuous_are(A + 0.5 * cfg.kappa * np.eye(A.shape[0]), B, Q, cfg.Gamma))
        except (LinAlgError, ValueError) as err:
            logging.warning(f"Frozen Riccati solve failed at s = {s:.6g}: {err}")
            out.append(None)
    return out


def backward_sweep(
    tv: TransverseLinearization,
    frame: KernelFrame,
    cfg: SolverConfig,
    terminal: np.ndarray,
    phases: Optional[np.ndarray] = None,
) -> Optional[np.ndarray]:
    """Integrate the reduced Riccati equation backwards over ``sweep_periods`` periods.

    ``terminal`` is imposed at phase 0. Returns the reduced solution at
    ``phases`` (the grid nodes by default) of the last period, or ``None``
    when the integration fails.
    """

    d = terminal.shape[0]
    Gamma_inv = np.linalg.inv(cfg.Gamma)
    phases = tv.s_grid if phases is None else np.asarray(phases, dtype=float)

    def rhs(s, y):
        R = y.reshape(d, d)
        A, B, Q, rho = _reduced_pair(tv, frame, cfg, s)
        R = 0.5 * (R + R.T)
        flow = A.T @ R + R @ A + Q + cfg.kappa * R - R @ B @ Gamma_inv @ B.T @ R
        return (-flow / rho).ravel()

    end = cfg.sweep_periods * tv.s_max
    sol = solve_ivp(rhs, (end, 0.0), terminal.ravel(), method="DOP853", t_eval=phases[::-1], rtol=1e-10, atol=1e-12)
    if not sol.success:
        logging.warning(f"Backward Riccati sweep failed: {sol.message}")
        return None
    R = sol.y.T[::-1].reshape(-1, d, d)
    return 0.5 * (R + np.swapaxes(R, 1, 2))


def reduced_solutions(tv: TransverseLinearization, frame: KernelFrame, cfg: SolverConfig, phases: np.ndarray) -> np.ndarray:
    """Reduced Riccati solutions at ``phases``: the periodic limit of the backward sweep, else the frozen ones."""

    frozen = frozen_solutions(tv, frame, cfg, phases)
    d = frame.T(0.0).shape[1]
    valid = [R for R in frozen if R is not None]
    logging.info(f"Frozen Riccati solves succeeded on {len(valid)} of {len(frozen)} phases.")
    fallback = np.mean(valid, axis=0) if valid else np.eye(d)
    reduced = np.array([fallback if R is None else R for R in frozen])

    if cfg.sweep_periods > 0:
        swept = backward_sweep(tv, frame, cfg, reduced[0], phases)
        if swept is not None:
            reduced = swept
    return reduced


def pin_level(cfg: SolverConfig, reduced: np.ndarray) -> float:
    """Rayleigh quotient assigned to the tangent: the median smallest reduced eigenvalue."""

    return max(cfg.psd_margin, float(np.median(np.linalg.eigvalsh(reduced)[:, 0])), PIN_FLOOR)


def lift(tv: TransverseLinearization, frame: KernelFrame, phases: np.ndarray, reduced: np.ndarray, level: float) -> np.ndarray:
    """``Omega^T T R~ T^T Omega + level |x_s'|^2 DP^T DP``, the pinned representative."""

    T = frame.T(phases)
    R = T @ reduced @ np.swapaxes(T, 1, 2)
    if frame.normal is None:
        return R
    Omega = projection_at(tv, phases)
    _, image = pin_target(tv, phases, level)
    dP = tv.DP(phases)
    return np.swapaxes(Omega, 1, 2) @ R @ Omega + np.einsum("mi,mj->mij", image, dP)


def initial_schedule(tv: TransverseLinearization, cfg: SolverConfig, frame: KernelFrame) -> Tuple[np.ndarray, float]:
    """Fourier coefficients of the lifted reduced solution, fitted on the check grid, and the pin level."""

    phases = np.linspace(0.0, tv.s_max, cfg.check_points, endpoint=False)
    reduced = reduced_solutions(tv, frame, cfg, phases)
    level = pin_level(cfg, reduced)
    lifted = lift(tv, frame, phases, reduced, level)

    basis, _ = fourier_basis(phases, cfg.fourier_order, tv.s_max)
    iu, ju = np.triu_indices(tv.n_x)
    coefficients, *_ = np.linalg.lstsq(basis, lifted[:, iu, ju], rcond=None)
    return coefficients.T, level


# --------------------------------------------------------------------------- #
# Solve


class _Collocation:
    """Residual vector and Jacobian of the least squares problem on ``points`` nodes."""

    def __init__(self, tv: TransverseLinearization, cfg: SolverConfig, points: int, level: float, psd_weight: float):

        n = tv.n_x
        self.n, self.cfg, self.tv, self.points = n, cfg, tv, points
        self.s = np.linspace(0.0, tv.s_max, points, endpoint=False)
        self.basis, self.slopes = fourier_basis(self.s, cfg.fourier_order, tv.s_max)
        self.A, B, self.Omega, self.rho = tv.A(self.s), tv.B(self.s), projection_at(tv, self.s), tv.rho_at(self.s)
        self.S = B @ np.linalg.solve(cfg.Gamma, np.swapaxes(B, -1, -2))
        self.E = _unit_matrices(n)
        self.iu, self.ju = np.triu_indices(n)
        self.weights = np.where(self.iu == self.ju, 1.0, np.sqrt(2.0))
        self.tangent, self.image = pin_target(tv, self.s, level) if _has_normal(tv) else (None, None)
        self.psd_weight = psd_weight

        # d(Omega^T dR Omega) / d(entry)
        G = np.einsum("mai,eab,mbj->meij", self.Omega, self.E, self.Omega)
        self.G = np.swapaxes(G[:, :, self.iu, self.ju], 1, 2) * self.weights[None, :, None]

    def matrices(self, c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        coefficients = c.reshape(len(self.iu), -1)
        return _assemble(self.basis @ coefficients.T, self.n), _assemble(self.slopes @ coefficients.T, self.n)

    def residual(self, c: np.ndarray) -> np.ndarray:

        R, dR = self.matrices(c)
        Y = _sandwich(self.tv, self.cfg, self.s, R, dR)
        parts = [Y[:, self.iu, self.ju] * self.weights]
        if self.tangent is not None:
            pinned = np.einsum("mij,mj->mi", R, self.tangent) - self.image
            parts.append(self.cfg.pin_weight * pinned)
        eigenvalues = np.linalg.eigvalsh(R)
        parts.append(self.psd_weight * np.minimum(eigenvalues - self.cfg.psd_margin, 0.0))
        return np.concatenate([p.ravel() for p in parts])

    def jacobian(self, c: np.ndarray) -> np.ndarray:

        R, _ = self.matrices(c)
        E, A, Omega, cfg = self.E, self.A, self.Omega, self.cfg
        SR, RS = self.S @ R, R @ self.S
        inner = (
            np.einsum("mba,ebc->meac", A, E)
            + np.einsum("eab,mbc->meac", E, A)
            + cfg.kappa * E[None]
            - np.einsum("eab,mbc->meac", E, SR)
            - np.einsum("mab,ebc->meac", RS, E)
        )
        H = np.einsum("mai,meab,mbj->meij", Omega, inner, Omega)
        H = np.swapaxes(H[:, :, self.iu, self.ju], 1, 2) * self.weights[None, :, None]

        m, K = self.basis.shape
        blocks = [
            (np.einsum("m,mk,mfe->mfek", self.rho, self.slopes, self.G) + np.einsum("mk,mfe->mfek", self.basis, H)).reshape(-1, E.shape[0] * K)
        ]
        if self.tangent is not None:
            P = np.einsum("eab,mb->mae", E, self.tangent)
            blocks.append(cfg.pin_weight * np.einsum("mk,mae->maek", self.basis, P).reshape(-1, E.shape[0] * K))

        eigenvalues, vectors = np.linalg.eigh(R)
        active = (eigenvalues - cfg.psd_margin < 0.0).astype(float)
        D = np.einsum("mai,eab,mbi->mie", vectors, E, vectors) * active[:, :, None]
        blocks.append(self.psd_weight * np.einsum("mk,mie->miek", self.basis, D).reshape(-1, E.shape[0] * K))
        return np.vstack(blocks)


def _min_eigenvalue(gs: GainSchedule, points: int) -> float:
    s = np.linspace(0.0, gs.s_max, points, endpoint=False)
    return float(np.min(np.linalg.eigvalsh(gs.R(s))))


def solve(tv: TransverseLinearization, cfg: SolverConfig) -> GainSchedule:
    """Fit a periodic Riccati solution and certify it.

    Raises :class:`NoCertificateError` when the residual stays above
    ``residual_tol``, :class:`InfeasiblePsdError` when ``R`` keeps a negative
    eigenvalue, and :class:`VerificationFailedError` when a transverse Floquet
    multiplier leaves the unit disk or the neutral eigenvector strays from
    ``x_s'(0)`` by more than ``NEUTRAL_ANGLE_TOLERANCE``.
    """

    cfg = cfg.resolved(tv.n_x, tv.n_u)
    frame = kernel_frame(tv)
    coefficients, level = initial_schedule(tv, cfg, frame)
    c = coefficients.ravel()

    def schedule(c: np.ndarray, **extra) -> GainSchedule:
        return GainSchedule(
            coefficients=c.reshape(coefficients.shape), n_x=tv.n_x, Gamma=cfg.Gamma, linearization=tv, s_max=tv.s_max, **extra
        )

    start = float(np.max(residual_profile(tv, schedule(c), cfg, cfg.check_points)))
    logging.info(f"Initial Riccati residual {start:.3e}, tangent pinned at level {level:.3e}.")

    psd_weight, points = cfg.psd_weight, cfg.collocation_points
    candidates: List[Tuple[float, float, np.ndarray, int]] = []
    outer = 0
    for outer in range(1, cfg.max_outer_iterations + 1):
        problem = _Collocation(tv, cfg, points, level, psd_weight)
        fit = least_squares(
            problem.residual,
            c,
            jac=problem.jacobian,
            method="trf",
            tr_solver="exact",
            x_scale="jac",
            ftol=1e-15,
            xtol=1e-15,
            gtol=1e-15,
            max_nfev=cfg.max_evaluations,
        )
        c = fit.x
        residual = float(np.max(residual_profile(tv, schedule(c), cfg, cfg.check_points)))
        min_eig = _min_eigenvalue(schedule(c), cfg.check_points)
        logging.info(
            f"Riccati outer iteration {outer} on {points} nodes: {fit.nfev} evaluations, "
            f"residual {residual:.3e}, min eigenvalue {min_eig:.3e}."
        )
        candidates.append((residual, min_eig, c, points))

        feasible = min_eig >= cfg.psd_margin - PSD_TOLERANCE
        if residual <= cfg.residual_tol and feasible:
            break
        if not feasible:
            psd_weight *= 10.0
        if residual > cfg.residual_tol and points < cfg.check_points:
            points = min(2 * points, cfg.check_points)

    pool = [cand for cand in candidates if cand[1] >= cfg.psd_margin - PSD_TOLERANCE] or candidates
    best, min_eig, best_c, points = min(pool, key=lambda cand: cand[0])
    if best > cfg.residual_tol:
        logging.fatal(f"Riccati residual {best:.3e} above tolerance {cfg.residual_tol:.3e}.")
        raise NoCertificateError(f"Best residual {best:.6e} exceeds tolerance {cfg.residual_tol:.6e}.", best_residual=best)
    if min_eig < -PSD_TOLERANCE:
        logging.fatal(f"Riccati solution has eigenvalue {min_eig:.3e}.")
        raise InfeasiblePsdError(f"Solution has minimum eigenvalue {min_eig:.6e} < -{PSD_TOLERANCE:.0e}.")

    gs = schedule(best_c)
    floquet = floquet_multipliers(tv, gs)
    gs = replace(
        gs,
        residual_max=best,
        min_eigenvalue=min_eig,
        multipliers=tuple(floquet.multipliers),
        outer_iterations=outer,
        collocation_points=points,
        floquet=floquet,
    )
    unstable = [m for m in floquet.transverse if abs(m) >= 1.0]
    if unstable:
        logging.fatal(f"Transverse Floquet multipliers {unstable} are not inside the unit disk.")
        raise VerificationFailedError(f"Closed loop has transverse Floquet multipliers {unstable} with modulus >= 1.")
    if floquet.tangent_angle is not None and floquet.tangent_angle > NEUTRAL_ANGLE_TOLERANCE:
        logging.fatal(f"Neutral Floquet direction is {floquet.tangent_angle:.3e} rad away from x_s'(0).")
        raise VerificationFailedError(
            f"Neutral eigenvector deviates {floquet.tangent_angle:.6e} rad from the tangent, above {NEUTRAL_ANGLE_TOLERANCE:.0e}."
        )

    logging.info(f"Riccati solution certified: residual {best:.3e}, |transverse multipliers| {np.abs(floquet.transverse)}.")
    return gs


# --------------------------------------------------------------------------- #
# Verification


@dataclass(frozen=True)
class FloquetResult:
    """Monodromy eigenvalues with the neutral one identified.

    :attr neutral_index: Index of the multiplier whose eigenvector leaves
        ``ker DP(0)``, ``None`` when ``DP`` vanishes.
    :attr tangent_angle: Angle between that eigenvector and ``x_s'(0)``.
    """

    multipliers: np.ndarray
    monodromy: np.ndarray
    neutral_index: Optional[int]
    tangent_angle: Optional[float]

    @property
    def transverse(self) -> np.ndarray:
        keep = [i for i in range(self.multipliers.size) if i != self.neutral_index]
        return self.multipliers[keep]


def floquet_multipliers(tv: TransverseLinearization, gs: Optional[GainSchedule] = None) -> FloquetResult:
    """Eigenvalues of the one period transition matrix of ``A - S R`` (``A`` alone without ``gs``)."""

    n = tv.n_x
    Gamma_inv = None if gs is None else np.linalg.inv(gs.Gamma)

    def rhs(s, y):
        A = tv.A(s)
        if gs is not None:
            B = tv.B(s)
            A = A - B @ Gamma_inv @ B.T @ gs.R(s)
        return (A @ y.reshape(n, n) / tv.rho_at(s)).ravel()

    sol = solve_ivp(rhs, (0.0, tv.s_max), np.eye(n).ravel(), method="DOP853", rtol=1e-10, atol=1e-12)
    if not sol.success:
        logging.fatal(f"Monodromy integration failed: {sol.message}")
        raise IntegrationError(f"Monodromy integration failed: {sol.message}")

    monodromy = sol.y[:, -1].reshape(n, n)
    multipliers, vectors = np.linalg.eig(monodromy)
    dP0 = tv.DP(0.0)
    if np.linalg.norm(dP0) < KERNEL_FLOOR:
        return FloquetResult(multipliers=multipliers, monodromy=monodromy, neutral_index=None, tangent_angle=None)

    vectors = vectors / np.linalg.norm(vectors, axis=0)
    neutral = int(np.argmax(np.abs(dP0 @ vectors)))
    v = np.real(vectors[:, neutral])
    tangent = tv.tangent_at(0.0)
    cosine = abs(v @ tangent) / (np.linalg.norm(v) * np.linalg.norm(tangent))
    angle = float(np.arccos(np.clip(cosine, 0.0, 1.0)))
    logging.info(f"Floquet multipliers {multipliers}; neutral {multipliers[neutral]:.6g} at {angle:.3e} rad from x_s'(0).")
    return FloquetResult(multipliers=multipliers, monodromy=monodromy, neutral_index=neutral, tangent_angle=angle)


@dataclass(frozen=True)
class LyapunovReport:
    """Decrease of ``V = x^T R x`` on random transverse samples.

    :attr max_vdot: Largest closed form ``Vdot``.
    :attr max_relative_discrepancy: Largest relative gap to the finite difference ``Vdot``.
    :attr bound_violations: Samples with ``Vdot > -lambda_min(Q) |x|^2``.
    """

    samples: int
    max_vdot: float
    max_relative_discrepancy: float
    bound_violations: int


def _closed_flow(tv: TransverseLinearization, gs: GainSchedule, Gamma_inv: np.ndarray):

    def flow(state):
        w, s = state[:-1], state[-1]
        B = tv.B(s)
        A = tv.A(s) - B @ Gamma_inv @ B.T @ gs.R(s)
        return np.append(A @ w, tv.rho_at(s))

    return flow


def _rk4(flow, state: np.ndarray, dt: float) -> np.ndarray:
    k1 = flow(state)
    k2 = flow(state + 0.5 * dt * k1)
    k3 = flow(state + 0.5 * dt * k2)
    k4 = flow(state + dt * k3)
    return state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def lyapunov_decrease_check(
    tv: TransverseLinearization,
    gs: GainSchedule,
    cfg: SolverConfig,
    samples: int = 1000,
    seed: int = 0,
    dt: float = 1e-5,
) -> LyapunovReport:
    """Compare ``Vdot = x^T (-Q - kappa R - R S R) x`` with finite differences along the linear flow."""

    cfg = cfg.resolved(tv.n_x, tv.n_u)
    rng = np.random.Generator(np.random.Philox(seed))
    Gamma_inv = np.linalg.inv(cfg.Gamma)
    flow = _closed_flow(tv, gs, Gamma_inv)
    q_floor = float(np.min(np.linalg.eigvalsh(cfg.Q)))

    vdots, gaps, violations = [], [], 0
    for _ in range(samples):
        s = rng.uniform(0.0, tv.s_max)
        w = tv.Omega(s) @ rng.standard_normal(tv.n_x)
        w /= np.linalg.norm(w)

        R, B = gs.R(s), tv.B(s)
        closed_form = float(w @ (-cfg.Q - cfg.kappa * R - R @ B @ Gamma_inv @ B.T @ R) @ w)

        state = np.append(w, s)
        ahead, behind = _rk4(flow, state, dt), _rk4(flow, state, -dt)
        V = [x[:-1] @ gs.R(x[-1]) @ x[:-1] for x in (ahead, behind)]
        finite = (V[0] - V[1]) / (2.0 * dt)

        vdots.append(closed_form)
        gaps.append(abs(finite - closed_form) / abs(closed_form))
        violations += closed_form > -q_floor * (w @ w) + 1e-12

    report = LyapunovReport(
        samples=samples, max_vdot=float(np.max(vdots)), max_relative_discrepancy=float(np.max(gaps)), bound_violations=violations
    )
    logging.info(f"Lyapunov check on {samples} samples: max Vdot {report.max_vdot:.3e}, discrepancy {report.max_relative_discrepancy:.3e}.")
    if report.max_vdot >= 0.0:
        logging.fatal(f"Lyapunov derivative {report.max_vdot:.3e} is not negative.")
        raise DecreaseViolatedError(f"Closed form Vdot reaches {report.max_vdot:.6e} >= 0.")
    return report


def hamiltonian_are(A: np.ndarray, B: np.ndarray, Q: np.ndarray, Gamma: np.ndarray) -> np.ndarray:
    """Stabilizing algebraic Riccati solution from the stable invariant subspace of the Hamiltonian."""

    n = A.shape[0]
    S = B @ np.linalg.solve(Gamma, B.T)
    H = np.block([[A, -S], [-Q, -A.T]])
    eigenvalues, vectors = np.linalg.eig(H)
    stable = vectors[:, eigenvalues.real < 0]
    X1, X2 = stable[:n], stable[n:]
    return np.real(X2 @ np.linalg.inv(X1))

