"""Time-domain resilience metrics computed from a bus-voltage trajectory."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import EmptyWindow, WindowOutOfRange
from .sim import Trajectory

MODES = ("deviation-from-nominal", "deviation-from-predisturbance", "raw")
DEFAULT_MODE = "deviation-from-nominal"
DEFAULT_ROCOV_WINDOW = 11


@dataclass
class ResilienceReport:
    scenario: str
    E_v: float
    nadir: float
    rocov: float
    pre_disturbance_v: float
    E_v_mode: str = DEFAULT_MODE
    tau1: float | None = None
    tau2: float | None = None
    C_eq: float | None = None
    secondary: bool = False
    h2_zbus: float | None = None
    hinf_zbus: float | None = None
    h2_gpv: float | None = None
    hinf_gpv: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def nadir_depth(self) -> float:
        return self.pre_disturbance_v - self.nadir

    def as_record(self) -> dict:
        """Flat key/value view; ``extra`` entries are merged in at the end."""
        rec = asdict(self)
        extra = rec.pop("extra")
        rec["nadir_depth"] = self.nadir_depth
        rec.update(extra)
        return rec


def _window_mask(traj: Trajectory, tau1: float, tau2: float) -> np.ndarray:
    eps = 1e-9 * max(1.0, traj.t_end)
    if not tau1 < tau2:
        raise WindowOutOfRange(f"tau1={tau1} must be < tau2={tau2}")
    if tau1 < traj.t[0] - eps or tau2 > traj.t_end + eps:
        raise WindowOutOfRange(
            f"window [{tau1}, {tau2}] outside trajectory span [{traj.t[0]}, {traj.t_end}]")
    return (traj.t >= tau1 - eps) & (traj.t <= tau2 + eps)


def deviation(traj: Trajectory, mode: str, v_n: float, tau1: float) -> np.ndarray:
    v = traj.v_bus
    if mode == "raw":
        return v
    if mode == "deviation-from-nominal":
        return v - v_n
    if mode == "deviation-from-predisturbance":
        pre = v[traj.t < tau1 - 1e-9 * max(1.0, traj.t_end)]
        if pre.size == 0:
            raise EmptyWindow("no samples before tau1 to form the pre-disturbance reference")
        return v - pre.mean()
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def energy_imbalance(traj: Trajectory, tau1: float, tau2: float, mode: str = DEFAULT_MODE,
                     v_n: float | None = None) -> float:
    """Trapezoidal integral of the squared bus-voltage deviation over [tau1, tau2].

    ``v_n`` is required for ``deviation-from-nominal``.
    """
    mask = _window_mask(traj, tau1, tau2)
    if mode == "deviation-from-nominal" and v_n is None:
        raise ValueError("v_n is required for deviation-from-nominal mode")
    dv = deviation(traj, mode, v_n if v_n is not None else 0.0, tau1)[mask]
    return float(trapezoid(dv * dv, traj.t[mask]))


def nadir(traj: Trajectory, after: float = 0.0) -> float:
    v = traj.v_bus[traj.t >= after - 1e-9 * max(1.0, traj.t_end)]
    if v.size == 0:
        raise EmptyWindow(f"no samples after t = {after}")
    return float(v.min())


def rocov(traj: Trajectory, after: float = 0.0, smooth_window: int = DEFAULT_ROCOV_WINDOW) -> float:
    """Largest |dv_bus/dt| after ``after``, from central differences of a moving average."""
    if smooth_window < 1:
        raise ValueError("smooth_window must be >= 1")
    v = traj.v_bus
    if smooth_window > 1:
        # valid-mode average keeps edges free of zero-padding artifacts
        smooth = np.convolve(v, np.ones(smooth_window) / smooth_window, mode="valid")
        t = traj.t[(smooth_window - 1) // 2: (smooth_window - 1) // 2 + smooth.size]
    else:
        smooth, t = v, traj.t
    if smooth.size < 3:
        raise EmptyWindow("trajectory too short for a central difference")
    slope = (smooth[2:] - smooth[:-2]) / (t[2:] - t[:-2])
    tc = t[1:-1]
    sel = slope[tc >= after - 1e-9 * max(1.0, traj.t_end)]
    if sel.size == 0:
        raise EmptyWindow(f"no samples after t = {after}")
    return float(np.max(np.abs(sel)))


def pre_disturbance_level(traj: Trajectory, before: float) -> float:
    v = traj.v_bus[traj.t < before - 1e-9 * max(1.0, traj.t_end)]
    if v.size == 0:
        raise EmptyWindow(f"no samples before t = {before}")
    return float(v[-1])


def default_window(t_step: float, t_end: float) -> tuple[float, float]:
    return max(0.0, t_step - 0.5), min(t_end, t_step + 9.5)


def report(traj: Trajectory, *, v_n: float, t_event: float, tau1: float | None = None,
           tau2: float | None = None, mode: str = DEFAULT_MODE,
           smooth_window: int = DEFAULT_ROCOV_WINDOW, scenario: str = "",
           C_eq: float | None = None, secondary: bool = False) -> ResilienceReport:
    d1, d2 = default_window(t_event, traj.t_end)
    tau1 = d1 if tau1 is None else tau1
    tau2 = d2 if tau2 is None else tau2
    pre = pre_disturbance_level(traj, t_event) if t_event > traj.t[0] else float(traj.v_bus[0])
    return ResilienceReport(
        scenario=scenario,
        E_v=energy_imbalance(traj, tau1, tau2, mode, v_n),
        nadir=nadir(traj, t_event),
        rocov=rocov(traj, t_event, smooth_window),
        pre_disturbance_v=pre,
        E_v_mode=mode, tau1=tau1, tau2=tau2, C_eq=C_eq, secondary=secondary,
    )
