"""Closed loop simulation of the mechanical system around a planned orbit.

The true state is integrated with fixed steps; the controller sees the state
through additive Gaussian measurement noise held constant over each step. In
closed loop the input is ``u = B^+ Uhat(x_m, s) + K(s) x_perp`` with
``(s, x_perp)`` the projection of the measured state ``x_m``. Without
feedback a lost projection is recorded as NaN and the run continues.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    ConfigurationError,
    EscapedTubeError,
    ImplicitFunctionError,
    IntegrationError,
    NumericBlowupError,
    OutsideNeighborhoodError,
)
from .mechanics import MechanicalSystem, forward_dynamics
from .orbit import OrbitParameterization, nominal_input, time_law
from .projection import ProjectionOperator, project
from .riccati import GainSchedule
from .tvlin import FeedforwardChoice, u_hat

Controller = Literal["closed_loop", "open_loop", "none"]
Integrator = Literal["rk4", "rk45"]

BLOWUP_NORM = 1e6


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    :attr noise_std: Measurement noise standard deviation, one value or one per channel.
    :attr sample_interval: Spacing of the recorded trace.
    :attr convergence_threshold: ``|x_perp|`` level that must hold for one nominal period.
    """

    initial_state: Sequence[float]
    duration: float
    step: float = 1e-3
    integrator: Integrator = "rk4"
    noise_std: Union[float, Sequence[float]] = 0.0
    seed: int = 0
    controller: Controller = "closed_loop"
    feedforward: FeedforwardChoice = "mixed"
    sample_interval: float = 1e-2
    convergence_threshold: float = 0.01
    rtol: float = 1e-8
    atol: float = 1e-10

    def __post_init__(self):

        if not (self.step > 0 and self.duration > 0 and self.sample_interval > 0):
            raise ConfigurationError("`step`, `duration` and `sample_interval` must be positive.")
        every = self.sample_interval / self.step
        if abs(every - round(every)) > 1e-9 or round(every) < 1:
            raise ConfigurationError(f"`sample_interval` {self.sample_interval} is not a multiple of `step` {self.step}.")
        if self.integrator not in ("rk4", "rk45"):
            raise ConfigurationError(f"Unknown integrator `{self.integrator}`.")
        if self.controller not in ("closed_loop", "open_loop", "none"):
            raise ConfigurationError(f"Unknown controller `{self.controller}`.")


def noise_stream(seed: int, std: Union[float, Sequence[float]], count: int, channels: Optional[int] = None) -> np.ndarray:
    """Gaussian measurement noise from a Philox counter-based generator keyed by ``seed``.

    Draws are ``standard_normal`` doubles in row-major ``(count, channels)`` order,
    scaled per channel.
    """

    std = np.atleast_1d(np.asarray(std, dtype=float))
    channels = std.size if channels is None else channels
    if std.size not in (1, channels):
        raise ConfigurationError(f"Expected 1 or {channels} noise levels, got {std.size}.")
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.standard_normal((count, channels)) * std


@dataclass(frozen=True)
class SimulationTrace:
    """Uniformly sampled simulation records.

    ``s``, ``x_perp``, ``u``, ``v`` and ``V`` are computed from the measured state.
    """

    t: np.ndarray
    x: np.ndarray
    x_measured: np.ndarray
    s: np.ndarray
    x_perp: np.ndarray
    u: np.ndarray
    v: np.ndarray
    V: np.ndarray
    convergence_time: Optional[float] = None
    metadata: Dict[str, object] = field(default_factory=dict, compare=False)

    @property
    def norm_x_perp(self) -> np.ndarray:
        return np.linalg.norm(self.x_perp, axis=1)

    def table(self) -> Tuple[List[str], np.ndarray]:
        n_x, n_u = self.x.shape[1], self.u.shape[1]
        inputs = ["u", "v"] if n_u == 1 else [f"u{j + 1}" for j in range(n_u)] + [f"v{j + 1}" for j in range(n_u)]
        header = ["t"] + [f"x{i + 1}" for i in range(n_x)] + ["s"] + [f"xp{i + 1}" for i in range(n_x)] + inputs + ["V", "normxp"]
        rows = np.hstack((self.t[:, None], self.x, self.s[:, None], self.x_perp, self.u, self.v, self.V[:, None], self.norm_x_perp[:, None]))
        return header, rows


def convergence_time(t: np.ndarray, norms: np.ndarray, threshold: float, window: float) -> Optional[float]:
    """First sample time after which ``norms < threshold`` holds for ``window`` seconds."""

    below = norms < threshold
    for k in np.flatnonzero(below):
        inside = (t >= t[k]) & (t <= t[k] + window)
        if t[k] + window > t[-1] + 1e-12:
            return None
        if np.all(below[inside]):
            return float(t[k])
    return None


class _Recorder:

    def __init__(self):
        self.rows: Dict[str, List] = {key: [] for key in ("t", "x", "x_measured", "s", "x_perp", "u", "v", "V")}

    def add(self, **values):
        for key, value in values.items():
            self.rows[key].append(value)

    def trace(self, **extra) -> SimulationTrace:
        arrays = {key: np.array(value, dtype=float) for key, value in self.rows.items()}
        return SimulationTrace(**arrays, **extra)


def simulate(
    sys: MechanicalSystem,
    orbit: OrbitParameterization,
    op: ProjectionOperator,
    gs: Optional[GainSchedule],
    cfg: SimConfig,
) -> SimulationTrace:
    """Integrate the system under the configured controller and record a trace."""

    if cfg.controller == "closed_loop" and gs is None:
        raise ConfigurationError("Closed loop simulation needs a gain schedule.")

    n_x = sys.n_x
    x = np.asarray(cfg.initial_state, dtype=float)
    if x.shape != (n_x,):
        raise ConfigurationError(f"Initial state has shape {x.shape}, expected ({n_x},).")

    n_steps = int(round(cfg.duration / cfg.step))
    every = int(round(cfg.sample_interval / cfg.step))
    noise = noise_stream(cfg.seed, cfg.noise_std, n_steps + 1, n_x)
    period = time_law(orbit).period
    recorder = _Recorder()
    open_loop = cfg.controller == "open_loop"

    def measure(x_true: np.ndarray, k: int, hint: Optional[float]):
        x_m = x_true + noise[k]
        try:
            result = project(op, x_m, hint=hint)
        except (OutsideNeighborhoodError, ImplicitFunctionError) as err:
            if cfg.controller != "closed_loop":
                return x_m, float("nan"), np.full(n_x, np.nan)
            logging.fatal(f"Projection lost at step {k}: {err}")
            raise EscapedTubeError(f"State left the projection tube at t = {k * cfg.step:.6g}: {err}", trace=recorder.trace()) from err
        return x_m, result.s, result.x_perp

    def control(x_m: np.ndarray, s: float, x_perp: np.ndarray, s_nominal: float):
        v = np.zeros(sys.n_u)
        match cfg.controller:
            case "closed_loop":
                v = gs.K(s) @ x_perp
                u = sys.input_left_inverse @ u_hat(sys, orbit, cfg.feedforward, x_m, s) + v
            case "open_loop":
                u = nominal_input(sys, orbit, s_nominal)
            case _:
                u = np.zeros(sys.n_u)
        return u, v

    def field_at(state: np.ndarray, k: int, hint: float) -> np.ndarray:
        x_true = state[:n_x]
        x_m, s, x_perp = measure(x_true, k, hint) if cfg.controller == "closed_loop" else (None, hint, None)
        u, _ = control(x_m, s, x_perp, state[n_x])
        return np.append(forward_dynamics(sys, x_true, u), orbit.rho(state[n_x]))

    def blowup(state: np.ndarray, t: float):
        if not np.all(np.isfinite(state)) or np.linalg.norm(state[:n_x]) > BLOWUP_NORM:
            logging.fatal(f"State blew up at t = {t:.6g}.")
            raise NumericBlowupError(f"Non-finite or unbounded state at t = {t:.6g}.", trace=recorder.trace())

    _, s0, _ = measure(x, 0, None)
    s0 = s0 if np.isfinite(s0) else 0.0
    state = np.append(x, s0)
    s_hint = s0
    for k in range(n_steps + 1):
        t = k * cfg.step
        x_m, s_k, x_perp = measure(state[:n_x], k, s_hint)
        s_hint = s_k if np.isfinite(s_k) else s_hint
        u, v = control(x_m, s_hint, x_perp, state[n_x])
        if k % every == 0:
            V = float(x_perp @ gs.R(s_hint) @ x_perp) if gs is not None else float("nan")
            recorder.add(t=t, x=state[:n_x].copy(), x_measured=x_m, s=s_k, x_perp=x_perp, u=u, v=v, V=V)
        if k == n_steps:
            break

        h = cfg.step
        if cfg.integrator == "rk4":
            k1 = field_at(state, k, s_hint)
            k2 = field_at(state + 0.5 * h * k1, k, s_hint)
            k3 = field_at(state + 0.5 * h * k2, k, s_hint)
            k4 = field_at(state + h * k3, k, s_hint)
            state = state + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            sol = solve_ivp(lambda _, y: field_at(y, k, s_hint), (t, t + h), state, method="RK45", rtol=cfg.rtol, atol=cfg.atol)
            if not sol.success:
                raise IntegrationError(f"Adaptive step failed at t = {t:.6g}: {sol.message}")
            state = sol.y[:, -1]
        blowup(state, t + h)

    trace = recorder.trace()
    converged = convergence_time(trace.t, trace.norm_x_perp, cfg.convergence_threshold, period)
    if open_loop:
        logging.info(f"Open loop replay finished; max |x_perp| = {np.nanmax(trace.norm_x_perp):.3e}.")
    elif converged is None:
        logging.warning(f"No convergence below {cfg.convergence_threshold} within {cfg.duration} s.")
    else:
        logging.info(f"Converged below {cfg.convergence_threshold} at t = {converged:.3f} s (period {period:.4f} s).")

    return SimulationTrace(
        **{key: getattr(trace, key) for key in ("t", "x", "x_measured", "s", "x_perp", "u", "v", "V")},
        convergence_time=converged,
        metadata={"controller": cfg.controller, "integrator": cfg.integrator, "period": period, "seed": cfg.seed},
    )
