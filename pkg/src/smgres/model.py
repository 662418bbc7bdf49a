"""Reduced-order droop-controlled DC microgrid: parameters, dynamics, equilibrium, linearization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .errors import ConfigError, Infeasible, NonPhysicalState, NotConverged

DROOP = "droop"
INTEGRAL_DROOP = "integral-droop"

#: Input ordering of :attr:`LinearModel.B`.
INPUTS = ("dP_load", "di_inj", "dv_ref")
#: Output ordering of :attr:`LinearModel.C`.
OUTPUTS = ("dv_bus",)


@dataclass(frozen=True)
class BranchParams:
    """One source branch feeding the bus.

    ``droop`` branches follow ``v = v_ref - R*i`` behind ``L`` and parasitic ``r``;
    ``integral-droop`` branches emulate a capacitor ``C_h`` instead of ``R``.
    """

    id: str
    kind: str
    L: float
    r: float = 0.0
    R: float | None = None
    C_h: float | None = None

    def __post_init__(self):
        if self.kind not in (DROOP, INTEGRAL_DROOP):
            raise ConfigError(f"branch {self.id!r}: unknown kind {self.kind!r}", key="kind")
        if not self.L > 0:
            raise ConfigError(f"branch {self.id!r}: L must be > 0", key="L")
        if not self.r >= 0:
            raise ConfigError(f"branch {self.id!r}: r must be >= 0", key="r")
        if self.kind == DROOP:
            if self.R is None or not self.R > 0:
                raise ConfigError(f"branch {self.id!r}: droop branch needs R > 0", key="R")
            if self.C_h is not None:
                raise ConfigError(f"branch {self.id!r}: droop branch takes no C_h", key="C_h")
        else:
            if self.C_h is None or not self.C_h > 0:
                raise ConfigError(f"branch {self.id!r}: integral-droop branch needs C_h > 0", key="C_h")
            if self.R is not None:
                raise ConfigError(f"branch {self.id!r}: integral-droop branch takes no R", key="R")

    @property
    def is_droop(self) -> bool:
        return self.kind == DROOP

    @property
    def series_resistance(self) -> float:
        """R_t = R + r for droop branches, r for integral-droop branches."""
        return self.R + self.r if self.is_droop else self.r

    @property
    def time_constant(self) -> float:
        rt = self.series_resistance
        return self.L / rt if rt > 0 else math.inf


@dataclass(frozen=True)
class SmgParams:
    branches: tuple[BranchParams, ...]
    C_eq: float
    v_ref: float
    v_n: float
    P_load_base: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.branches:
            raise ConfigError("at least one branch is required", key="branches")
        ids = [b.id for b in self.branches]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"branch ids must be unique: {ids}", key="branches")
        for name in ("C_eq", "v_ref", "v_n"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0", key=name)
        if not self.P_load_base >= 0:
            raise ConfigError("P_load_base must be >= 0", key="P_load_base")

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def integral_branches(self) -> tuple[BranchParams, ...]:
        return tuple(b for b in self.branches if not b.is_droop)

    @property
    def n_states(self) -> int:
        return 1 + self.n_branches + len(self.integral_branches)

    @property
    def droop_conductance(self) -> float:
        return sum(1.0 / b.series_resistance for b in self.branches if b.is_droop)

    def state_order(self) -> list[str]:
        return (["v_bus"] + [f"i_{b.id}" for b in self.branches]
                + [f"v_z_{b.id}" for b in self.integral_branches])

    def with_changes(self, **kw) -> "SmgParams":
        fields = dict(branches=self.branches, C_eq=self.C_eq, v_ref=self.v_ref,
                      v_n=self.v_n, P_load_base=self.P_load_base)
        fields.update(kw)
        return SmgParams(**fields)

    def kernel_arrays(self):
        """Flat arrays consumed by the compiled right-hand side."""
        ind = np.array([b.L for b in self.branches], dtype=float)
        rt = np.array([b.series_resistance for b in self.branches], dtype=float)
        ch = np.array([b.C_h if b.C_h is not None else 0.0 for b in self.branches], dtype=float)
        zidx = np.full(self.n_branches, -1, dtype=np.int64)
        z = 0
        for k, b in enumerate(self.branches):
            if not b.is_droop:
                zidx[k] = z
                z += 1
        return ind, rt, ch, zidx


@dataclass(frozen=True)
class SystemState:
    v_bus: float
    i: np.ndarray
    v_z: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "i", np.asarray(self.i, dtype=float))
        object.__setattr__(self, "v_z", np.asarray(self.v_z, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.v_bus], self.i, self.v_z))

    @classmethod
    def from_vector(cls, x, params: SmgParams) -> "SystemState":
        x = np.asarray(x, dtype=float)
        if x.shape != (params.n_states,):
            raise ValueError(f"state vector must have length {params.n_states}, got {x.shape}")
        nb = params.n_branches
        return cls(float(x[0]), x[1:1 + nb].copy(), x[1 + nb:].copy())


@dataclass(frozen=True)
class Equilibrium:
    V_bus_star: float
    I_star: np.ndarray
    P_load_star: float
    v_z_star: np.ndarray

    def state(self) -> SystemState:
        return SystemState(self.V_bus_star, self.I_star, self.v_z_star)


@dataclass(frozen=True)
class LinearModel:
    """Small-signal model ``dx/dt = A x + B u``, ``y = C x + D u``.

    Inputs are ordered as :data:`INPUTS`, outputs as :data:`OUTPUTS`; states as
    ``state_order``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state_order: tuple[str, ...]
    inputs: tuple[str, ...] = INPUTS
    outputs: tuple[str, ...] = OUTPUTS

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def is_stable(self) -> bool:
        return bool(np.all(self.eigenvalues().real < 0))

    def frequency_response(self, omega, input=0, output=0) -> np.ndarray:
        """Direct ``C (jwI - A)^-1 B + D`` evaluation by linear solves."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        n = self.A.shape[0]
        b = self.B[:, input]
        c = self.C[output]
        eye = np.eye(n)
        out = np.empty(omega.shape, dtype=complex)
        for k, w in enumerate(omega):
            out[k] = c @ np.linalg.solve(1j * w * eye - self.A, b) + self.D[output, input]
        return out


def derivative(state: SystemState, params: SmgParams, p_load: float, i_inj: float = 0.0,
               v_ref_offset: float = 0.0) -> np.ndarray:
    """Time derivative of the full nonlinear state.

    ``i_inj`` is an extra current injected into the bus node; ``v_ref_offset`` is
    added to the setpoint of droop branches only.
    """
    x = state.as_vector() if isinstance(state, SystemState) else np.asarray(state, dtype=float)
    if x.shape != (params.n_states,):
        raise ValueError(f"state vector must have length {params.n_states}")
    out = np.zeros_like(x)
    ind, rt, ch, zidx = params.kernel_arrays()
    status = _kernels.rhs(x, out, params.C_eq, params.v_ref, ind, rt, ch, zidx,
                          float(p_load), float(i_inj), float(v_ref_offset))
    if status != _kernels.OK:
        raise NonPhysicalState(f"bus voltage {x[0]!r} V is not positive")
    return out


def solve_equilibrium(params: SmgParams, p_load: float, v_ref_offset: float = 0.0) -> Equilibrium:
    """High-voltage operating point of the droop network feeding a constant-power load.

    Solves ``G*(v_ref + offset - V) = p_load / V`` for the root nearest the setpoint.
    """
    p_load = float(p_load)
    if p_load < 0:
        raise Infeasible("load power must be non-negative")
    v_set = params.v_ref + v_ref_offset
    g = params.droop_conductance
    if p_load == 0.0:
        v_star = v_set
    else:
        if g == 0.0 or p_load > g * v_set ** 2 / 4.0:
            raise Infeasible(
                f"load {p_load:.6g} W exceeds the droop network capability "
                f"{g * v_set ** 2 / 4.0:.6g} W")
        v_star = _high_root(g, v_set, p_load)
    if not v_star > 0:
        raise Infeasible("no positive equilibrium voltage")
    i_star = np.array([(v_set - v_star) / b.series_resistance if b.is_droop else 0.0
                       for b in params.branches])
    v_z = np.full(len(params.integral_branches), params.v_ref - v_star)
    return Equilibrium(v_star, i_star, p_load, v_z)


def _high_root(g, v_set, p):
    def f(v):
        return g * (v_set - v) - p / v

    tol = 1e-9 * v_set
    v = v_set
    for _ in range(50):
        step = f(v) / (-g + p / v ** 2)
        v -= step
        if abs(step) < tol:
            break
    v_peak = math.sqrt(p / g)
    lo = max(0.25 * v_set, v_peak)
    if lo < v <= v_set and abs(f(v)) <= 1e-9 * g * v_set:
        return v
    if f(lo) < 0:
        lo = v_peak
    try:
        return brentq(f, lo, v_set, xtol=tol)
    except ValueError as exc:  # pragma: no cover - bracket guaranteed by capability check
        raise NotConverged(f"equilibrium root finder failed: {exc}") from exc


def linearize(params: SmgParams, eq: Equilibrium) -> LinearModel:
    """Jacobian linearization about ``eq``.

    The constant-power load enters the bus row as the incremental conductance
    ``P*/V*^2`` acting on the bus-voltage deviation.
    """
    if not eq.V_bus_star > 0:
        raise NonPhysicalState("equilibrium bus voltage must be positive")
    n = params.n_states
    nb = params.n_branches
    A = np.zeros((n, n))
    B = np.zeros((n, len(INPUTS)))
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    v = eq.V_bus_star
    A[0, 0] = eq.P_load_star / v ** 2 / params.C_eq
    B[0, 0] = -1.0 / (params.C_eq * v)
    B[0, 1] = 1.0 / params.C_eq
    z = 0
    for k, b in enumerate(params.branches):
        row = 1 + k
        A[0, row] = 1.0 / params.C_eq
        A[row, 0] = -1.0 / b.L
        A[row, row] = -b.series_resistance / b.L
        if b.is_droop:
            B[row, 2] = 1.0 / b.L
        else:
            zrow = 1 + nb + z
            A[row, zrow] = -1.0 / b.L
            A[zrow, row] = 1.0 / b.C_h
            z += 1
    return LinearModel(A, B, C, np.zeros((1, len(INPUTS))), tuple(params.state_order()))


def table1_params(C_eq: float = 0.1, P_load_base: float = 5e6, v_ref: float = 6000.0,
                  v_n: float = 6000.0) -> SmgParams:
    """Six-source shipboard system: two generators, two batteries, two supercapacitors."""
    r = 0.05
    branches = (
        BranchParams("sga", DROOP, L=1e-3, R=0.05, r=r),
        BranchParams("sgb", DROOP, L=1e-3, R=0.1, r=r),
        BranchParams("ba", DROOP, L=0.8e-3, R=0.225, r=r),
        BranchParams("bb", DROOP, L=0.8e-3, R=0.45, r=r),
        BranchParams("sca", INTEGRAL_DROOP, L=0.4e-3, C_h=5.0, r=r),
        BranchParams("scb", INTEGRAL_DROOP, L=0.4e-3, C_h=10.0, r=r),
    )
    return SmgParams(branches, C_eq=C_eq, v_ref=v_ref, v_n=v_n, P_load_base=P_load_base)
