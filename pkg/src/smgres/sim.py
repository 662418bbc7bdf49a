"""Fixed-step time-domain simulation of the nonlinear microgrid model."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import ConfigError, EmptyWindow, NonPhysicalState
from .model import Equilibrium, SmgParams, solve_equilibrium

DEFAULT_DT = 5e-5
DEFAULT_KI = 5.0


@dataclass(frozen=True)
class Perturbation:
    amplitude: float
    frequency: float  # rad/s
    start: float = 0.0


@dataclass(frozen=True)
class DisturbanceSchedule:
    t_end: float
    load_steps: tuple[tuple[float, float], ...] = ()
    perturbation: Perturbation | None = None

    def __post_init__(self):
        steps = tuple((float(t), float(dp)) for t, dp in self.load_steps)
        object.__setattr__(self, "load_steps", steps)
        times = [t for t, _ in steps]
        if any(t < 0 for t in times):
            raise ConfigError("load step times must be non-negative", key="load_steps")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("load step times must be strictly increasing", key="load_steps")
        last = max(times + ([self.perturbation.start] if self.perturbation else []), default=0.0)
        if not self.t_end > last:
            raise ConfigError("t_end must exceed the last scheduled event", key="t_end")
        if self.perturbation is not None and self.perturbation.start < 0:
            raise ConfigError("perturbation start must be non-negative", key="perturbation")


@dataclass(frozen=True)
class SecondaryControl:
    """Centralized integral restoration of the bus voltage via droop setpoints."""

    enabled: bool = False
    k_i: float = DEFAULT_KI
    target: float | None = None  # defaults to v_n

    def __post_init__(self):
        if self.enabled and not self.k_i > 0:
            raise ConfigError("secondary k_i must be > 0 when enabled", key="k_i")

    def target_for(self, params: SmgParams) -> float:
        return params.v_n if self.target is None else self.target


@dataclass(frozen=True)
class Trajectory:
    dt: float
    t: np.ndarray
    states: np.ndarray
    p_load: np.ndarray
    delta: np.ndarray
    branch_ids: tuple[str, ...]
    annotations: tuple[tuple[float, str], ...] = field(default=())

    @property
    def v_bus(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def index_at(self, time: float) -> int:
        return int(round(time / self.dt))

    def currents(self) -> np.ndarray:
        return self.states[:, 1:1 + len(self.branch_ids)]


class WindowStats(NamedTuple):
    mean: float
    min: float
    max: float
    max_deviation: float


def restored_equilibrium(params: SmgParams, p_load: float, target: float):
    """Operating point with secondary control settled: v_bus = target.

    Returns ``(equilibrium, delta)`` where ``delta`` is the setpoint offset the
    integrator holds.
    """
    g = params.droop_conductance
    if g == 0.0:
        raise ConfigError("secondary control needs at least one droop branch")
    delta = p_load / (target * g) + target - params.v_ref
    i_star = np.array([(params.v_ref + delta - target) / b.series_resistance if b.is_droop else 0.0
                       for b in params.branches])
    v_z = np.full(len(params.integral_branches), params.v_ref - target)
    return Equilibrium(target, i_star, float(p_load), v_z), delta


def check_step_size(params: SmgParams, dt: float) -> None:
    if not dt > 0:
        raise ConfigError("dt must be > 0", key="dt")
    tau = min(b.time_constant for b in params.branches)
    if dt >= tau / 10.0:
        raise ConfigError(
            f"dt={dt:g} s is too coarse; smallest branch time constant is {tau:g} s "
            f"(need dt < {tau / 10:g})", key="dt")


def initial_state(params: SmgParams, secondary: SecondaryControl | None = None,
                  p_load: float | None = None) -> tuple[np.ndarray, float]:
    p = params.P_load_base if p_load is None else p_load
    if secondary is not None and secondary.enabled:
        eq, delta = restored_equilibrium(params, p, secondary.target_for(params))
    else:
        eq, delta = solve_equilibrium(params, p), 0.0
    return eq.state().as_vector(), delta


def _run(params, x0, delta0, dt, n_steps, p_steps, perturbation, secondary, record_every,
         bus_only):
    ind, rt, ch, zidx = params.kernel_arrays()
    xa = np.append(x0, delta0)
    if perturbation is None:
        amp, omega, start = 0.0, 0.0, 0.0
    else:
        amp, omega, start = perturbation.amplitude, perturbation.frequency, perturbation.start
    k_i = secondary.k_i if secondary is not None and secondary.enabled else 0.0
    target = secondary.target_for(params) if secondary is not None else params.v_n
    rec, status, failed = _kernels.rk4_run(
        xa, float(dt), int(n_steps), np.ascontiguousarray(p_steps, dtype=float),
        float(amp), float(omega), float(start), params.C_eq, params.v_ref, ind, rt, ch, zidx,
        float(k_i), float(target), int(record_every), bool(bus_only))
    if status != _kernels.OK:
        t_fail = failed * dt
        raise NonPhysicalState(f"bus voltage collapsed at t = {t_fail:.6g} s", time=t_fail)
    return rec


def simulate(params: SmgParams, schedule: DisturbanceSchedule,
             secondary: SecondaryControl | None = None, dt: float = DEFAULT_DT) -> Trajectory:
    """Integrate the nonlinear model with classical RK4 from the pre-disturbance equilibrium.

    Load steps are snapped to the nearest grid point and act from that sample on.
    With secondary control enabled the run starts from the restored operating point.
    """
    secondary = secondary or SecondaryControl()
    check_step_size(params, dt)
    n_steps = int(np.ceil(schedule.t_end / dt - 1e-9))
    p_steps = np.full(n_steps, params.P_load_base, dtype=float)
    annotations = []
    for t_step, dp in schedule.load_steps:
        k = int(round(t_step / dt))
        p_steps[k:] += dp
        annotations.append((k * dt, f"load_step {dp:+.6g} W"))
    if schedule.perturbation is not None:
        pert = schedule.perturbation
        annotations.append((pert.start, f"perturbation {pert.amplitude:g} A @ {pert.frequency:g} rad/s"))
    x0, delta0 = initial_state(params, secondary)
    rec = _run(params, x0, delta0, dt, n_steps, p_steps, schedule.perturbation, secondary, 1, False)
    t = np.arange(n_steps + 1) * dt
    p_rec = np.append(p_steps, p_steps[-1] if n_steps else params.P_load_base)
    return Trajectory(dt=dt, t=t, states=rec[:, :-1], p_load=p_rec, delta=rec[:, -1],
                      branch_ids=tuple(b.id for b in params.branches),
                      annotations=tuple(annotations))


def steady_window(traj: Trajectory, start: float) -> WindowStats:
    """Mean, extremes, and largest excursion from the mean of v_bus over [start, t_end]."""
    if not start < traj.t_end:
        raise EmptyWindow(f"window start {start} is not before t_end {traj.t_end}")
    v = traj.v_bus[traj.t >= start - 1e-12 * max(1.0, abs(start))]
    if v.size == 0:
        raise EmptyWindow("no samples in window")
    mean = float(v.mean())
    return WindowStats(mean, float(v.min()), float(v.max()), float(np.max(np.abs(v - mean))))


def write_trajectory_csv(traj: Trajectory, path, decimate: int = 1) -> None:
    if decimate < 1:
        raise ConfigError("decimation factor must be >= 1", key="decimate")
    header = ["t", "v_bus"] + [f"i_{b}" for b in traj.branch_ids] + ["p_load"]
    cur = traj.currents()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(0, len(traj.t), decimate):
            w.writerow([f"{traj.t[k]:.9g}", f"{traj.v_bus[k]:.12g}"]
                       + [f"{c:.12g}" for c in cur[k]] + [f"{traj.p_load[k]:.12g}"])
