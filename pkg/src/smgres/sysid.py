"""Bus-impedance identification: swept-sine injection, single-bin DFT, vector fitting."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NotSettled, RankDeficient, SmgError, WindowTooShort
from .model import SmgParams
from .sim import (DEFAULT_DT, Perturbation, SecondaryControl, _run, check_step_size,
                  initial_state)
from .tf import FreqSample, RationalTf

WEIGHTINGS = ("uniform", "inverse-magnitude")
ASYMPTOTES = ("none", "D", "DE")
RELOCATION_TOL = 1e-6
DRIFT_LIMIT = 0.05


@dataclass(frozen=True)
class SweepPlan:
    frequencies: tuple[float, ...]  # rad/s
    amplitude: float = 10.0
    settle_periods: int = 5
    measure_periods: int = 10
    min_measure_time: float = 0.2

    def __post_init__(self):
        w = tuple(float(x) for x in self.frequencies)
        object.__setattr__(self, "frequencies", w)
        if not w or any(x <= 0 for x in w) or any(b <= a for a, b in zip(w, w[1:])):
            raise ConfigError("sweep frequencies must be positive and strictly increasing",
                              key="frequencies")
        if not self.amplitude > 0:
            raise ConfigError("sweep amplitude must be > 0", key="amplitude")
        if self.measure_periods < 1 or self.settle_periods < 0:
            raise ConfigError("need measure_periods >= 1 and settle_periods >= 0",
                              key="measure_periods")

    @classmethod
    def log_spaced(cls, f_min_hz=0.1, f_max_hz=1000.0, n_points=30, **kw) -> "SweepPlan":
        f = np.logspace(math.log10(f_min_hz), math.log10(f_max_hz), n_points)
        return cls(tuple(2 * math.pi * f), **kw)


@dataclass
class FitReport:
    tf: RationalTf
    rel_rms_error: float
    iterations_used: int
    pole_movement_history: list[float] = field(default_factory=list)
    converged: bool = True
    failed_frequencies: list[tuple[float, str]] = field(default_factory=list)


def single_bin_dft(signal, dt: float, omega: float, periods: int) -> complex:
    """Complex amplitude of the ``omega`` component over an integer number of periods.

    Uses the first ``round(periods*2*pi/(omega*dt))`` samples. Normalized so that
    ``A*sin(omega*t + phi)`` maps to ``A*exp(j*phi)``.
    """
    x = np.asarray(signal, dtype=float)
    n = int(round(periods * 2 * math.pi / (omega * dt)))
    if n < 2 or x.size < n:
        raise WindowTooShort(f"need {n} samples for {periods} periods, have {x.size}")
    k = np.arange(n)
    proj = 2.0 / n * np.dot(x[:n], np.exp(-1j * omega * dt * k))
    return complex(1j * proj)


def _measure_one(params, x0, delta0, omega, plan, secondary, dt_max, p_load):
    period = 2 * math.pi / omega
    spp = int(math.ceil(period / dt_max - 1e-9))
    dt = period / spp
    n_meas = plan.measure_periods
    # total run bounded below by min_measure_time; the extra time goes to settling
    n_total = max(plan.settle_periods + n_meas,
                  int(math.ceil(plan.min_measure_time / period - 1e-9)))
    n_settle = n_total - n_meas
    n_steps = (n_settle + n_meas) * spp
    p_steps = np.full(n_steps, p_load)
    rec = _run(params, x0, delta0, dt, n_steps, p_steps, Perturbation(plan.amplitude, omega, 0.0),
               secondary, 1, True)
    v = rec[n_settle * spp: (n_settle + n_meas) * spp, 0]
    t = (n_settle * spp + np.arange(v.size)) * dt
    i_inj = plan.amplitude * np.sin(omega * t)
    v_hat = single_bin_dft(v - v.mean(), dt, omega, n_meas)
    i_hat = single_bin_dft(i_inj, dt, omega, n_meas)
    drift = abs(v[-spp:].mean() - v[:spp].mean())
    if drift > DRIFT_LIMIT * abs(v_hat):
        raise NotSettled(f"bus voltage drift {drift:.3g} V exceeds {DRIFT_LIMIT:.0%} of the "
                         f"response amplitude {abs(v_hat):.3g} V at omega={omega:.6g} rad/s")
    return v_hat / i_hat


def sweep_frequency_response(params: SmgParams, base_p_load: float, plan: SweepPlan,
                             secondary: SecondaryControl | None = None, dt: float = DEFAULT_DT,
                             threads: int = 1):
    """Run every sweep point; returns ``(samples, failures)`` with failures as (omega, message)."""
    secondary = secondary or SecondaryControl()
    check_step_size(params, dt)
    x0, delta0 = initial_state(params, secondary, p_load=base_p_load)

    def one(w):
        try:
            return w, _measure_one(params, x0, delta0, w, plan, secondary, dt, base_p_load), None
        except SmgError as exc:
            return w, None, exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, plan.frequencies))
    else:
        results = [one(w) for w in plan.frequencies]
    samples = [FreqSample(w, z) for w, z, err in results if err is None]
    failures = [(w, err) for w, _, err in results if err is not None]
    return samples, failures


def measure_frequency_response(params: SmgParams, base_p_load: float, plan: SweepPlan,
                               secondary: SecondaryControl | None = None,
                               dt: float = DEFAULT_DT, threads: int = 1) -> list[FreqSample]:
    """Measured ``V(jw)/I(jw)`` at each sweep frequency (ohms); raises on the first failed point."""
    samples, failures = sweep_frequency_response(params, base_p_load, plan, secondary, dt, threads)
    if failures:
        raise failures[0][1]
    return samples


# -- vector fitting -----------------------------------------------------------------


def _initial_poles(order, w_min, w_max):
    beta = np.logspace(math.log10(w_min), math.log10(w_max), order // 2) if order >= 2 else []
    poles = []
    if order % 2:
        poles.append(complex(-w_min, 0.0))
    for b in beta:
        p = complex(-b / 100.0, b)
        poles += [p, p.conjugate()]
    return np.array(poles, dtype=complex)


def _basis(s, poles):
    """Real-coefficient partial-fraction basis; pairs occupy two adjacent columns."""
    cols = np.empty((s.size, poles.size), dtype=complex)
    k = 0
    while k < poles.size:
        p = poles[k]
        if p.imag == 0.0:
            cols[:, k] = 1.0 / (s - p)
            k += 1
        else:
            a, b = 1.0 / (s - p), 1.0 / (s - p.conjugate())
            cols[:, k] = a + b
            cols[:, k + 1] = 1j * a - 1j * b
            k += 2
    return cols


def _solve_real(M, rhs, weights):
    """Weighted least squares over stacked real/imag parts with column equilibration."""
    Mw = M * weights[:, None]
    bw = rhs * weights
    A = np.vstack([Mw.real, Mw.imag])
    b = np.concatenate([bw.real, bw.imag])
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    x, _, rank, sv = np.linalg.lstsq(A / scale, b, rcond=None)
    if rank < A.shape[1]:
        raise RankDeficient(
            f"least-squares system is rank deficient ({rank} < {A.shape[1]}); "
            "fit order is likely too high for the data")
    return x / scale


def _coeffs_to_residues(c, poles):
    res = np.empty(poles.size, dtype=complex)
    k = 0
    while k < poles.size:
        if poles[k].imag == 0.0:
            res[k] = c[k]
            k += 1
        else:
            r = complex(c[k], c[k + 1])
            res[k], res[k + 1] = r, r.conjugate()
            k += 2
    return res


def _asymptote_cols(s, asymptote):
    cols = []
    if asymptote in ("D", "DE"):
        cols.append(np.ones_like(s))
    if asymptote == "DE":
        cols.append(s)
    return cols


def _fit_residues(s, f, poles, weights, asymptote):
    phi = _basis(s, poles)
    extra = _asymptote_cols(s, asymptote)
    M = np.column_stack([phi] + extra) if extra else phi
    x = _solve_real(M, f, weights)
    n = poles.size
    d = x[n] if asymptote in ("D", "DE") else 0.0
    e = x[n + 1] if asymptote == "DE" else 0.0
    return _coeffs_to_residues(x[:n], poles), d, e


def _relocate(s, f, poles, weights, asymptote):
    n = poles.size
    phi = _basis(s, poles)
    extra = _asymptote_cols(s, asymptote)
    M = np.column_stack([phi] + extra + [-f[:, None] * phi])
    x = _solve_real(M, f, weights)
    c_sigma = x[-n:]
    A = np.zeros((n, n))
    b = np.zeros(n)
    k = 0
    while k < n:
        p = poles[k]
        if p.imag == 0.0:
            A[k, k] = p.real
            b[k] = 1.0
            k += 1
        else:
            A[k:k + 2, k:k + 2] = [[p.real, p.imag], [-p.imag, p.real]]
            b[k] = 2.0
            k += 2
    new = np.linalg.eigvals(A - np.outer(b, c_sigma))
    new = np.where(new.real > 0, -new.real + 1j * new.imag, new)
    return _order_poles(new)


def _order_poles(poles):
    scale = np.maximum(np.abs(poles), 1e-300)
    real = np.sort(poles[np.abs(poles.imag) <= 1e-12 * scale].real)
    cplx = poles[np.abs(poles.imag) > 1e-12 * scale]
    upper = sorted(cplx[cplx.imag > 0], key=lambda p: (p.imag, p.real))
    out = [complex(r, 0.0) for r in real]
    for p in upper:
        out += [p, p.conjugate()]
    if len(out) != poles.size:  # unmatched complex pole: treat as real
        return _order_poles(poles.real + 0j)
    return np.array(out, dtype=complex)


def _displacement(old, new):
    if old.size != new.size or np.any((old.imag == 0) != (new.imag == 0)):
        return math.inf
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), 1e-300)))


def _samples_to_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 2:
        w, f = samples
        return np.asarray(w, dtype=float), np.asarray(f, dtype=complex)
    w = np.array([smp.omega for smp in samples], dtype=float)
    f = np.array([smp.value for smp in samples], dtype=complex)
    return w, f


def vector_fit(samples, order: int, max_iterations: int = 30,
               weighting: str = "inverse-magnitude", asymptote: str = "DE") -> FitReport:
    """Fit ``sum R_i/(s - p_i) + D + s E`` to frequency-response samples by pole relocation.

    ``samples`` is a list of :class:`FreqSample` or an ``(omega, values)`` pair.
    ``asymptote`` selects which of D and E are estimated ("none", "D", "DE").
    The returned model is the best iterate by relative RMS error, so it is never
    worse than the fit on the starting poles.
    """
    w, f = _samples_to_arrays(samples)
    if order < 1:
        raise ConfigError("fit order must be >= 1", key="order")
    if w.size < 2 * order + 2:
        raise ConfigError(f"need at least {2 * order + 2} samples for order {order}, have {w.size}",
                          key="order")
    if np.unique(w).size != w.size or np.any(w <= 0):
        raise ConfigError("samples must be at distinct positive frequencies", key="samples")
    if weighting not in WEIGHTINGS:
        raise ConfigError(f"unknown weighting {weighting!r}", key="weighting")
    if asymptote not in ASYMPTOTES:
        raise ConfigError(f"unknown asymptote option {asymptote!r}", key="asymptote")
    s = 1j * w
    weights = np.ones(w.size) if weighting == "uniform" else 1.0 / np.maximum(np.abs(f), 1e-300)
    fnorm = np.linalg.norm(f)

    def score(poles):
        res, d, e = _fit_residues(s, f, poles, weights, asymptote)
        tf = RationalTf(poles, res, d, e)
        return tf, float(np.linalg.norm(tf(s) - f) / fnorm)

    poles = _initial_poles(order, w.min(), w.max())
    best_tf, best_err = score(poles)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        new = _relocate(s, f, poles, weights, asymptote)
        move = _displacement(poles, new)
        history.append(move)
        poles = new
        tf, err = score(poles)
        if err <= best_err:
            best_tf, best_err = tf, err
        if move < RELOCATION_TOL:
            converged = True
            break
    return FitReport(best_tf, best_err, it, history, converged)


def identify_zbus(params: SmgParams, base_p_load: float, plan: SweepPlan, order: int = 9,
                  secondary: SecondaryControl | None = None, max_iterations: int = 30,
                  weighting: str = "inverse-magnitude", dt: float = DEFAULT_DT,
                  threads: int = 1, asymptote: str = "none") -> FitReport:
    """Measure the bus impedance by simulation and fit a rational model to it.

    Failed sweep points are dropped and listed in the report provided enough
    points remain for the requested order.
    """
    samples, failures = sweep_frequency_response(params, base_p_load, plan, secondary, dt, threads)
    if failures and len(samples) < 2 * order + 2:
        raise failures[0][1]
    rep = vector_fit(samples, order, max_iterations, weighting, asymptote)
    rep.failed_frequencies = [(w, f"{err.code}: {err}") for w, err in failures]
    return rep


def write_frequency_response_csv(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["omega_rad_s", "re", "im"])
        for smp in samples:
            w.writerow([f"{smp.omega:.15g}", f"{smp.value.real:.15g}", f"{smp.value.imag:.15g}"])


def read_frequency_response_csv(path) -> list[FreqSample]:
    """Read ``omega_rad_s,re,im`` rows; a Bode export (``omega_rad_s,mag,mag_db,phase_deg``) is also accepted."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty frequency-response file", key="import_csv")
        header = [h.strip() for h in header]
        if header == ["omega_rad_s", "re", "im"]:
            kind = "reim"
        elif header == ["omega_rad_s", "mag", "mag_db", "phase_deg"]:
            kind = "bode"
        else:
            raise ConfigError(f"{path}: row 1: unrecognized header {header}", key="import_csv")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
                if len(vals) != len(header):
                    raise ValueError(f"expected {len(header)} columns, got {len(vals)}")
                if not all(math.isfinite(v) for v in vals):
                    raise ValueError("non-finite value")
                if kind == "reim":
                    smp = FreqSample(vals[0], complex(vals[1], vals[2]))
                else:
                    smp = FreqSample(vals[0], vals[1] * complex(math.cos(math.radians(vals[3])),
                                                                math.sin(math.radians(vals[3]))))
            except ValueError as exc:
                raise ConfigError(f"{path}: row {lineno}: {exc}", key=f"row {lineno}") from exc
            out.append(smp)
    return out
