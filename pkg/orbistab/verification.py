"""The property battery behind ``orbistab verify``.

Each check measures one quantity and compares it with a threshold. A check
whose computation itself raises an :class:`OrbistabError` is recorded as
failed with the error as detail, so one broken stage never hides the others.
"""

import logging
import operator
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import OrbistabError
from .mechanics import MechanicalSystem
from .orbit import OrbitParameterization, eval_xs, eval_xs_prime, feasibility_residual, reduced_dynamics, rho_time_oracle
from .projection import ProjectionOperator, dP_on_orbit, omega_matrix, project, wrap_signed
from .riccati import NEUTRAL_ANGLE_TOLERANCE, PSD_TOLERANCE, GainSchedule, SolverConfig, floquet_multipliers, lyapunov_decrease_check, residual_profile
from .schemas import VerifyCheck, VerifyReport
from .tvlin import FeedforwardChoice, TransverseLinearization, jacobian_form, linearization_order, transverse_node

COMPARISONS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge, "==": operator.eq}

PROJECTION_GRID = 512
JACOBIAN_FORM_POINTS = 16
ORDER_PHASES = (0.3, 1.9, 4.1)


def check(name: str, measured: float, threshold: float, comparison: str, detail: Optional[str] = None) -> VerifyCheck:

    measured = float(measured)
    passed = bool(np.isfinite(measured)) and COMPARISONS[comparison](measured, threshold)
    level = logging.INFO if passed else logging.WARNING
    logging.log(level, f"Check `{name}`: {measured:.6e} {comparison} {threshold:.1e} -> {'pass' if passed else 'FAIL'}.")
    return VerifyCheck(name=name, measured=measured, threshold=threshold, comparison=comparison, passed=passed, detail=detail)


class Battery:
    """Collects checks, turning library errors into failed checks."""

    def __init__(self):
        self.checks: List[VerifyCheck] = []

    def run(self, names: List[Tuple[str, float, str]], measure: Callable[[], Tuple]):
        """Run ``measure`` and record one check per ``(name, threshold, comparison)``.

        ``measure`` returns the measured values in the same order, optionally
        followed by a detail string.
        """

        try:
            values = measure()
        except OrbistabError as err:
            logging.warning(f"Checks {[n for n, _, _ in names]} failed to evaluate: {err}")
            for name, threshold, comparison in names:
                self.checks.append(
                    VerifyCheck(name=name, measured=float("nan"), threshold=threshold, comparison=comparison, passed=False, detail=str(err))
                )
            return

        detail = values[len(names)] if len(values) > len(names) else None
        for (name, threshold, comparison), value in zip(names, values):
            self.checks.append(check(name, value, threshold, comparison, detail))


def projection_matrix_checks(orbit: OrbitParameterization, op: ProjectionOperator, grid: int = PROJECTION_GRID):
    """Worst idempotence, annihilator and normalization errors of ``Omega`` on a grid."""

    idempotence = annihilates_dp = annihilates_tangent = normalization = 0.0
    rank_defect = 0
    for s in np.linspace(0.0, orbit.s_max, grid, endpoint=False):
        dP = dP_on_orbit(op, s)
        omega = omega_matrix(op, s, dP)
        tangent = eval_xs_prime(orbit, s)
        idempotence = max(idempotence, float(np.linalg.norm(omega @ omega - omega)))
        annihilates_dp = max(annihilates_dp, float(np.linalg.norm(dP @ omega)))
        annihilates_tangent = max(annihilates_tangent, float(np.linalg.norm(omega @ tangent)))
        normalization = max(normalization, abs(float(dP @ tangent) - 1.0))
        rank_defect = max(rank_defect, abs(int(np.linalg.matrix_rank(omega, tol=1e-8)) - (op.n_x - 1)))
    return idempotence, annihilates_dp, annihilates_tangent, normalization, rank_defect


def projection_consistency(orbit: OrbitParameterization, op: ProjectionOperator, grid: int = 64) -> float:
    """Largest ``|P(x_s(s)) - s|`` modulo the period."""

    worst = 0.0
    for s in np.linspace(0.0, orbit.s_max, grid, endpoint=False):
        worst = max(worst, abs(wrap_signed(project(op, eval_xs(orbit, s)).s - s)))
    return worst


def run_battery(
    sys: MechanicalSystem,
    orbit: OrbitParameterization,
    op: ProjectionOperator,
    ff: FeedforwardChoice,
    lin: TransverseLinearization,
    gs: GainSchedule,
    cfg: SolverConfig,
    config_hash: str,
) -> VerifyReport:
    """Evaluate every orbit, linearization and Riccati property into a report."""

    cfg = cfg.resolved(lin.n_x, lin.n_u)
    battery = Battery()

    battery.run([("projection_consistency", 1e-10, "<")], lambda: (projection_consistency(orbit, op),))
    battery.run(
        [
            ("omega_idempotent", 1e-10, "<"),
            ("dp_annihilated", 1e-10, "<"),
            ("tangent_annihilated", 1e-10, "<"),
            ("dp_tangent_normalized", 1e-8, "<"),
            ("omega_rank_defect", 0, "=="),
        ],
        lambda: projection_matrix_checks(orbit, op),
    )

    def reduced():
        rd = orbit.reduced if orbit.reduced is not None else reduced_dynamics(sys, orbit.template)
        anchors = max(abs(rd.beta(s) * orbit.rho(s) ** 2 + rd.gamma(s)) for s in rd.singular_points)
        oracle = rho_time_oracle(rd, orbit.rho).max_relative_error
        positive = float(np.min(orbit.rho.rho_grid))
        return anchors, oracle, positive, f"{len(rd.singular_points)} singular points"

    battery.run([("anchor_condition", 1e-6, "<"), ("rho_time_oracle", 1e-5, "<"), ("rho_positive", 0.0, ">")], reduced)
    battery.run([("feasibility_residual", 1e-6, "<")], lambda: (feasibility_residual(sys, orbit),))

    def b_leak():
        return (max(float(np.max(np.abs(lin.DP(s) @ lin.B(s)))) for s in lin.s_grid),)

    battery.run([("dp_b_perp", 1e-8, "<")], b_leak)

    def order():
        rng = np.random.Generator(np.random.Philox(1))
        orders = []
        for s0 in ORDER_PHASES:
            direction = rng.standard_normal(op.n_x)
            result = linearization_order(sys, orbit, op, ff, s0, direction / np.linalg.norm(direction), rng.standard_normal(sys.n_u))
            orders.append(result.observed_order)
        return (min(orders),)

    battery.run([("linearization_order", 1.8, ">=")], order)

    def jacobian_form_gap():
        worst = 0.0
        for s in np.linspace(0.0, orbit.s_max, JACOBIAN_FORM_POINTS, endpoint=False):
            node = transverse_node(sys, orbit, op, ff, s)
            worst = max(worst, float(np.linalg.norm((node.a_perp - jacobian_form(sys, orbit, op, ff, s)) @ node.omega)))
        return (worst,)

    battery.run([("jacobian_form_agreement", 1e-6, "<")], jacobian_form_gap)

    def riccati():
        residual = float(np.max(residual_profile(lin, gs, cfg, cfg.check_points)))
        s = np.linspace(0.0, lin.s_max, cfg.check_points, endpoint=False)
        min_eig = float(np.min(np.linalg.eigvalsh(gs.R(s))))
        return residual, min_eig

    battery.run([("riccati_residual", cfg.residual_tol, "<="), ("riccati_min_eigenvalue", -PSD_TOLERANCE, ">=")], riccati)

    def floquet():
        closed = floquet_multipliers(lin, gs)
        opened = floquet_multipliers(lin)
        detail = f"closed loop {np.round(closed.multipliers, 6).tolist()}, neutral angle {closed.tangent_angle}"
        angle = float("nan") if closed.tangent_angle is None else closed.tangent_angle
        return float(np.max(np.abs(closed.transverse))), float(np.max(np.abs(opened.multipliers))), angle, detail

    battery.run(
        [
            ("closed_loop_transverse_multipliers", 1.0, "<"),
            ("open_loop_max_multiplier", 1.0, ">"),
            ("neutral_tangent_angle", NEUTRAL_ANGLE_TOLERANCE, "<="),
        ],
        floquet,
    )

    def lyapunov():
        report = lyapunov_decrease_check(lin, gs, cfg)
        return report.max_vdot, report.max_relative_discrepancy, f"{report.bound_violations} bound violations"

    battery.run([("lyapunov_max_vdot", 0.0, "<"), ("lyapunov_discrepancy", 1e-3, "<")], lyapunov)

    report = VerifyReport(config_hash=config_hash, checks=battery.checks)
    logging.info(f"Verification: {len(report.checks) - len(report.failures)}/{len(report.checks)} checks passed.")
    return report
