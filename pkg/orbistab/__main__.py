#!/usr/bin/python3.10
"""Command line frontend.

Each subcommand reads the run configuration, loads what earlier commands wrote
to the output directory, and writes its own artifacts there:

``plan``       ``orbit.csv``, ``rho_fig2.csv`` and ``plots/rho.svg``
``linearize``  ``linearization.csv``
``riccati``    ``gains.csv`` and ``riccati_summary.json``
``simulate``   ``trace.csv``, ``simulation_summary.json`` and three figures
``verify``     ``verify_report.json``

Errors are printed on standard error as ``<tag>: <message>`` and mapped to the
exit code of their class.
"""

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from . import __version__, plots
from .artifacts import ArtifactStore
from .configuration import RunConfig
from .errors import EscapedTubeError, MissingArtifactError, NumericBlowupError, OrbistabError, VerificationFailedError
from .mechanics import MechanicalSystem
from .orbit import OrbitParameterization, orbit_from_table, orbit_table, plan_orbit
from .projection import ProjectionOperator
from .riccati import GainSchedule, solve
from .schemas import Multiplier, RiccatiSummary, SimulationSummary
from .sim import SimulationTrace, simulate
from .tvlin import TransverseLinearization, build, linearization_table, rebuild, split_linearization_table
from .verification import run_battery


class Main:

    __commands__ = ("plan", "linearize", "riccati", "simulate", "verify")

    @classmethod
    def parser(cls) -> argparse.ArgumentParser:

        parser = argparse.ArgumentParser(prog="orbistab", description="Orbital stabilization of underactuated mechanical systems.")
        parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
        parser.add_argument("command", choices=cls.__commands__)
        parser.add_argument("--config", required=True, help="JSON (or YAML) run configuration.")
        parser.add_argument("--out", required=True, help="Output directory shared by all commands.")
        parser.add_argument("--seed", type=int, default=None, help="Override `simulation.seed`.")
        parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")
        return parser

    # Loading what earlier commands wrote
    @classmethod
    def load_orbit(cls, config: RunConfig, store: ArtifactStore) -> OrbitParameterization:
        header, rows = store.read_table("orbit.csv", "orbit")
        return orbit_from_table(config.make_template(), header, rows)

    @classmethod
    def load_linearization(
        cls, config: RunConfig, store: ArtifactStore, system: MechanicalSystem, orbit: OrbitParameterization, op: ProjectionOperator
    ) -> TransverseLinearization:

        header, rows = store.read_table("linearization.csv", "transverse linearization")
        try:
            s_grid, a_perp, b_perp = split_linearization_table(header, rows, system.n_x, system.n_u)
        except ValueError as err:
            raise MissingArtifactError(f"malformed transverse linearization: {err}") from err
        provenance = {"variant": op.variant, "feedforward": config.linearization.feedforward}
        return rebuild(orbit, op, s_grid, a_perp, b_perp, provenance)

    @classmethod
    def load_gains(cls, config: RunConfig, lin: TransverseLinearization, rows: np.ndarray) -> GainSchedule:
        solver = config.make_solver().resolved(lin.n_x, lin.n_u)
        return GainSchedule.from_table(rows, lin, solver.Gamma, lin.s_max)

    # Commands
    @classmethod
    def handle_plan(cls, config: RunConfig, store: ArtifactStore):

        system = config.make_system()
        orbit = plan_orbit(system, config.make_template(), config.orbit.grid)

        store.write_table("orbit.csv", *orbit_table(system, orbit))
        rho = orbit.rho.rho_grid
        store.write_table("rho_fig2.csv", ["s", "rho", "rho_squared"], np.column_stack((orbit.rho.s_grid, rho, rho**2)))
        plots.rho_figure(orbit, store.prepare("plots/rho.svg"))
        store.register("plots/rho.svg")

    @classmethod
    def handle_linearize(cls, config: RunConfig, store: ArtifactStore):

        system = config.make_system()
        orbit = cls.load_orbit(config, store)
        op = config.make_projection(orbit)
        lin = build(system, orbit, op, config.linearization.feedforward, config.linearization.grid)
        store.write_table("linearization.csv", *linearization_table(lin))

    @classmethod
    def handle_riccati(cls, config: RunConfig, store: ArtifactStore):

        system = config.make_system()
        orbit = cls.load_orbit(config, store)
        op = config.make_projection(orbit)
        lin = cls.load_linearization(config, store, system, orbit, op)
        solver = config.make_solver().resolved(lin.n_x, lin.n_u)

        gs = solve(lin, solver)
        floquet = gs.floquet
        store.write_table("gains.csv", *gs.table())
        store.write_document(
            "riccati_summary.json",
            RiccatiSummary(
                residual_max=gs.residual_max,
                residual_tol=solver.residual_tol,
                min_eigenvalue=gs.min_eigenvalue,
                fourier_order=solver.fourier_order,
                collocation_points=gs.collocation_points,
                outer_iterations=gs.outer_iterations,
                multipliers=[Multiplier(real=m.real, imag=m.imag, modulus=abs(m)) for m in floquet.multipliers],
                neutral_index=floquet.neutral_index,
                neutral_tangent_angle=floquet.tangent_angle,
                config=config.riccati.model_dump(mode="json"),
            ),
        )

    @classmethod
    def write_trace(cls, store: ArtifactStore, trace: SimulationTrace, orbit: OrbitParameterization):

        store.write_table("trace.csv", *trace.table())
        for name, draw in (
            ("plots/phase_portraits.svg", lambda path: plots.phase_portraits(trace, orbit, path)),
            ("plots/transverse_norm.svg", lambda path: plots.transverse_norm(trace, path)),
            ("plots/control.svg", lambda path: plots.control(trace, path)),
        ):
            draw(store.prepare(name))
            store.register(name)

    @classmethod
    def handle_simulate(cls, config: RunConfig, store: ArtifactStore):

        sim_config = config.make_simulation()
        system = config.make_system()
        closed_loop = sim_config.controller == "closed_loop"
        if closed_loop:
            _, gains = store.read_table("gains.csv", "gain schedule")

        orbit = cls.load_orbit(config, store)
        op = config.make_projection(orbit)
        gs = None
        if closed_loop:
            gs = cls.load_gains(config, cls.load_linearization(config, store, system, orbit, op), gains)

        try:
            trace = simulate(system, orbit, op, gs, sim_config)
        except (EscapedTubeError, NumericBlowupError) as err:
            if err.trace is not None and len(err.trace.t):
                cls.write_trace(store, err.trace, orbit)
            raise

        cls.write_trace(store, trace, orbit)
        norms = trace.norm_x_perp
        store.write_document(
            "simulation_summary.json",
            SimulationSummary(
                controller=sim_config.controller,
                integrator=sim_config.integrator,
                samples=len(trace.t),
                period=float(trace.metadata["period"]),
                convergence_time=trace.convergence_time,
                final_norm_x_perp=float(norms[-1]),
                max_norm_x_perp=float(np.max(norms)),
                seed=sim_config.seed,
            ),
        )

    @classmethod
    def handle_verify(cls, config: RunConfig, store: ArtifactStore):

        system = config.make_system()
        orbit = cls.load_orbit(config, store)
        op = config.make_projection(orbit)
        lin = cls.load_linearization(config, store, system, orbit, op)
        _, gains = store.read_table("gains.csv", "gain schedule")
        gs = cls.load_gains(config, lin, gains)

        report = run_battery(system, orbit, op, config.linearization.feedforward, lin, gs, config.make_solver(), config.config_hash())
        store.write_document("verify_report.json", report)
        if not report.passed:
            names = ", ".join(check.name for check in report.failures)
            logging.fatal(f"Verification failed: {names}.")
            raise VerificationFailedError(f"{len(report.failures)} of {len(report.checks)} checks failed: {names}.")

    @classmethod
    def invoke(cls, argv: Optional[List[str]] = None) -> int:

        args = cls.parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s", force=True)

        try:
            config = RunConfig.load(args.config).with_seed(args.seed)
            store = ArtifactStore(args.out, config.config_hash(), args.command, __version__)
            logging.info(f"Running `{args.command}` with configuration `{args.config}` (hash {store.config_hash[:12]}).")
            match args.command:
                case "plan":
                    cls.handle_plan(config, store)
                case "linearize":
                    cls.handle_linearize(config, store)
                case "riccati":
                    cls.handle_riccati(config, store)
                case "simulate":
                    cls.handle_simulate(config, store)
                case "verify":
                    cls.handle_verify(config, store)
        except OrbistabError as err:
            print(str(err), file=sys.stderr)
            return err.exit_code

        return 0


def main():
    sys.exit(Main.invoke())


if __name__ == "__main__":
    main()
