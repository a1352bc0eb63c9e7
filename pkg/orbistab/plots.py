"""SVG figures of the velocity profile and of simulation traces."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .orbit import OrbitParameterization, eval_xs  # noqa: E402
from .sim import SimulationTrace  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "orbistab"
matplotlib.rcParams["svg.fonttype"] = "none"


def _save(fig, filepath: str):
    fig.savefig(filepath, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)


def rho_figure(orbit: OrbitParameterization, filepath: str):
    """``rho`` over one period with the singular points marked."""

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(orbit.rho.s_grid, orbit.rho.rho_grid, color="C0")
    if orbit.reduced is not None:
        points = np.array(orbit.reduced.singular_points)
        ax.plot(points, orbit.rho(points), "o", color="C3", label="singular points")
        ax.legend()
    ax.set_xlabel("s")
    ax.set_ylabel("rho(s)")
    ax.set_xlim(0.0, orbit.s_max)
    ax.grid(True, alpha=0.3)
    _save(fig, filepath)


def phase_portraits(trace: SimulationTrace, orbit: OrbitParameterization, filepath: str):
    """Cart and pendulum phase portraits against the nominal orbit."""

    nominal = np.array([eval_xs(orbit, s) for s in np.linspace(0.0, orbit.s_max, 400)])
    n_q = orbit.n_q
    fig, axes = plt.subplots(1, n_q, figsize=(5 * n_q, 4))
    for i, ax in enumerate(np.atleast_1d(axes)):
        ax.plot(trace.x[:, i], trace.x[:, n_q + i], color="C0", linewidth=0.8, label="simulated")
        ax.plot(nominal[:, i], nominal[:, n_q + i], "--", color="C3", label="orbit")
        ax.set_xlabel(f"q{i + 1}")
        ax.set_ylabel(f"dq{i + 1}/dt")
        ax.grid(True, alpha=0.3)
    np.atleast_1d(axes)[0].legend()
    _save(fig, filepath)


def transverse_norm(trace: SimulationTrace, filepath: str):

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(trace.t, trace.norm_x_perp, color="C0")
    if trace.convergence_time is not None:
        ax.axvline(trace.convergence_time, linestyle=":", color="C3")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|x_perp|")
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, filepath)


def control(trace: SimulationTrace, filepath: str):

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(trace.t, trace.u, color="C0", linewidth=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("u")
    ax.grid(True, alpha=0.3)
    _save(fig, filepath)
