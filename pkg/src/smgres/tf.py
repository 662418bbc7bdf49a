"""Pole/residue transfer functions, the bus-impedance and load-to-voltage TFs, H2/H-infinity norms."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_continuous_lyapunov
from scipy.optimize import minimize_scalar

from .errors import (DefectiveMatrix, ImproperTf, PoleOnAxis, Unbounded, UnstableModel,
                     UnstablePoles)
from .model import Equilibrium, LinearModel, SmgParams, linearize

log = logging.getLogger(__name__)

PAIR_TOL = 1e-6
HINF_GRID = (1e-3, 1e7)
HINF_POINTS_PER_DECADE = 2000
HINF_REFINE_TOL = 1e-6
PROPER_TOL = 1e-9


def _canonical(poles, residues, tol=PAIR_TOL):
    """Order as [real poles..., (p, conj p) pairs...] and make the pairing exact.

    Raises ValueError when the set is not closed under conjugation.
    """
    poles = np.asarray(poles, dtype=complex).ravel()
    residues = np.asarray(residues, dtype=complex).ravel()
    if poles.shape != residues.shape:
        raise ValueError("poles and residues must have the same length")
    scale = np.maximum(np.abs(poles), 1e-300)
    is_real = np.abs(poles.imag) <= 1e-12 * scale
    real_p, real_r = [], []
    for p, r in zip(poles[is_real], residues[is_real]):
        rscale = max(abs(r), 1e-300)
        if abs(r.imag) > tol * rscale and abs(r.imag) > 1e-14:
            raise ValueError(f"real pole {p.real:g} carries complex residue {r}")
        real_p.append(complex(p.real, 0.0))
        real_r.append(complex(r.real, 0.0))
    upper = [(p, r) for p, r in zip(poles[~is_real], residues[~is_real]) if p.imag > 0]
    lower = [(p, r) for p, r in zip(poles[~is_real], residues[~is_real]) if p.imag < 0]
    if len(upper) != len(lower):
        raise ValueError("complex poles are not closed under conjugation")
    pair_p, pair_r = [], []
    used = np.zeros(len(lower), dtype=bool)
    for p, r in sorted(upper, key=lambda pr: (pr[0].imag, pr[0].real)):
        dist = [abs(np.conj(q) - p) if not used[k] else np.inf for k, (q, _) in enumerate(lower)]
        k = int(np.argmin(dist))
        if dist[k] > tol * abs(p):
            raise ValueError(f"pole {p} has no conjugate partner")
        used[k] = True
        q, s = lower[k]
        pm = 0.5 * (p + np.conj(q))
        rm = 0.5 * (r + np.conj(s))
        pair_p += [pm, np.conj(pm)]
        pair_r += [rm, np.conj(rm)]
    order = np.argsort([p.real for p in real_p], kind="stable")
    real_p = [real_p[k] for k in order]
    real_r = [real_r[k] for k in order]
    return np.array(real_p + pair_p, dtype=complex), np.array(real_r + pair_r, dtype=complex)


@dataclass(frozen=True)
class RationalTf:
    """``G(s) = sum_i R_i/(s - p_i) + D + s E`` with conjugate-closed poles and residues."""

    poles: np.ndarray
    residues: np.ndarray
    D: float = 0.0
    E: float = 0.0

    def __post_init__(self):
        p, r = _canonical(self.poles, self.residues)
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "poles", p)
        object.__setattr__(self, "residues", r)
        object.__setattr__(self, "D", float(self.D))
        object.__setattr__(self, "E", float(self.E))

    @property
    def order(self) -> int:
        return len(self.poles)

    def is_stable(self) -> bool:
        return bool(np.all(self.poles.real < 0))

    def scaled(self, alpha: float) -> "RationalTf":
        return RationalTf(self.poles, alpha * self.residues, alpha * self.D, alpha * self.E)

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        out = np.full(s.shape, self.D, dtype=complex) + s * self.E
        for p, r in zip(self.poles, self.residues):
            out = out + r / (s - p)
        return out


@dataclass(frozen=True)
class FreqSample:
    omega: float
    value: complex

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"frequency sample needs omega > 0, got {self.omega}")


def evaluate(tf: RationalTf, omega):
    """Frequency response at ``j*omega``; scalar in, scalar out."""
    w = np.asarray(omega, dtype=float)
    s = 1j * w
    d = np.abs(s[..., None] - tf.poles) if tf.order else np.full(w.shape + (1,), np.inf)
    if np.any(d <= 1e-14 * np.maximum(1.0, np.abs(tf.poles))):
        raise PoleOnAxis(f"j*omega coincides with a pole for omega={omega}")
    out = tf(s)
    return complex(out) if np.ndim(out) == 0 else out


def to_state_space(tf: RationalTf):
    """Real block-diagonal modal realization ``(A, B, C, D)`` of ``tf`` (E ignored)."""
    n = tf.order
    A = np.zeros((n, n))
    B = np.zeros((n, 1))
    C = np.zeros((1, n))
    k = 0
    while k < n:
        p, r = tf.poles[k], tf.residues[k]
        if p.imag == 0.0:
            A[k, k] = p.real
            B[k, 0] = 1.0
            C[0, k] = r.real
            k += 1
        else:
            sig, om = p.real, p.imag
            A[k:k + 2, k:k + 2] = [[sig, om], [-om, sig]]
            B[k, 0] = 1.0
            C[0, k:k + 2] = [2 * r.real, 2 * r.imag]
            k += 2
    return A, B, C, np.array([[tf.D]])


def ss_to_tf(model: LinearModel, input: int = 0, output: int = 0,
             cond_limit: float = 1e10) -> RationalTf:
    """Pole/residue form of one input-output channel via eigendecomposition of A."""
    lam, V = np.linalg.eig(model.A)
    if np.linalg.cond(V) > cond_limit:
        raise DefectiveMatrix("state matrix is close to defective; eigenvector basis ill-conditioned")
    W = np.linalg.inv(V)
    res = (model.C[output] @ V) * (W @ model.B[:, input])
    return RationalTf(lam, res, D=float(model.D[output, input]))


def _require_stable(params, eq) -> LinearModel:
    lm = linearize(params, eq)
    if not lm.is_stable():
        raise UnstableModel("linearized system has eigenvalues with non-negative real part")
    return lm


def analytic_gpv(params: SmgParams, eq: Equilibrium) -> RationalTf:
    """Load-power to bus-voltage TF from the linear model."""
    return ss_to_tf(_require_stable(params, eq), input=0, output=0)


def gpv_literal(params: SmgParams, eq: Equilibrium, omega) -> np.ndarray:
    """The printed closed-form load-to-voltage expression, kept only for comparison.

    Branch admittances carry a leading minus and use the droop gain R_k (not R_k + r_k).
    """
    s = 1j * np.asarray(omega, dtype=float)
    yt = np.zeros(s.shape, dtype=complex)
    for b in params.branches:
        if b.is_droop:
            yt += -1.0 / (b.L * s + b.R)
        else:
            yt += -b.C_h * s / (b.L * b.C_h * s ** 2 + b.r * b.C_h * s + 1.0)
    v = eq.V_bus_star
    return params.C_eq / (eq.P_load_star + v ** 2 * (yt - params.C_eq * s))


def gpv_literal_deviation(params: SmgParams, eq: Equilibrium, omega) -> float:
    """Max relative gap between the printed expression and the state-space G_pv."""
    ref = evaluate(analytic_gpv(params, eq), omega)
    return float(np.max(np.abs(gpv_literal(params, eq, omega) - ref) / np.abs(ref)))


def bus_admittance(params: SmgParams, eq: Equilibrium, s):
    """Total admittance seen from the bus: branches + C_eq*s - P*/V*^2."""
    s = np.asarray(s, dtype=complex)
    y = params.C_eq * s - eq.P_load_star / eq.V_bus_star ** 2
    for b in params.branches:
        if b.is_droop:
            y = y + 1.0 / (b.L * s + b.series_resistance)
        else:
            y = y + b.C_h * s / (b.L * b.C_h * s ** 2 + b.r * b.C_h * s + 1.0)
    return y


def _bus_admittance_slope(params, eq, s):
    y = params.C_eq + 0j * s
    for b in params.branches:
        if b.is_droop:
            y = y - b.L / (b.L * s + b.series_resistance) ** 2
        else:
            q = b.L * b.C_h * s ** 2 + b.r * b.C_h * s + 1.0
            y = y + b.C_h * (1.0 - b.L * b.C_h * s ** 2) / q ** 2
    return y


def analytic_zbus(params: SmgParams, eq: Equilibrium) -> RationalTf:
    """Bus impedance as the reciprocal of the parallel branch admittances.

    Poles are the zeros of the bus admittance (polynomial roots, Newton-polished);
    residues are ``1 / Y'(pole)``. Checked against the state-space current-injection
    channel.
    """
    lm = _require_stable(params, eq)
    num = np.array([params.C_eq, -eq.P_load_star / eq.V_bus_star ** 2])
    dens, nums = [], []
    for b in params.branches:
        if b.is_droop:
            dens.append(np.array([b.L, b.series_resistance]))
            nums.append(np.array([1.0]))
        else:
            dens.append(np.array([b.L * b.C_h, b.r * b.C_h, 1.0]))
            nums.append(np.array([b.C_h, 0.0]))
    q_all = np.array([1.0])
    for d in dens:
        q_all = np.polymul(q_all, d)
    total = np.polymul(num, q_all)
    for k, nk in enumerate(nums):
        rest = np.array([1.0])
        for j, d in enumerate(dens):
            if j != k:
                rest = np.polymul(rest, d)
        total = np.polyadd(total, np.polymul(nk, rest))
    poles = np.roots(total)
    for _ in range(20):
        step = bus_admittance(params, eq, poles) / _bus_admittance_slope(params, eq, poles)
        poles = poles - step
        if np.all(np.abs(step) <= 1e-15 * np.abs(poles)):
            break
    residues = 1.0 / _bus_admittance_slope(params, eq, poles)
    zbus = RationalTf(poles, residues)
    if not zbus.is_stable():
        raise UnstableModel("bus impedance has right-half-plane poles")
    grid = np.logspace(-1, 6, 50)
    ss = lm.frequency_response(grid, input=1)
    dev = np.max(np.abs(evaluate(zbus, grid) - ss) / np.abs(ss))
    if dev > 1e-6:
        log.warning("bus impedance deviates from state-space response by %.3g", dev)
    return zbus


def _require_norm_ready(tf: RationalTf):
    if not tf.is_stable():
        raise UnstablePoles("transfer function has poles with non-negative real part")


def h2_norm(tf: RationalTf) -> float:
    """H2 norm from the controllability Gramian of a modal realization."""
    _require_norm_ready(tf)
    if tf.D != 0.0 or tf.E != 0.0:
        peak = _grid_peak(tf.__class__(tf.poles, tf.residues))
        wscale = float(np.max(np.abs(tf.poles))) if tf.order else 1.0
        if abs(tf.D) > PROPER_TOL * peak or abs(tf.E) * wscale > PROPER_TOL * peak:
            raise ImproperTf(f"H2 norm is infinite with D={tf.D:g}, E={tf.E:g}")
    if tf.order == 0:
        return 0.0
    A, B, C, _ = to_state_space(tf)
    P = solve_continuous_lyapunov(A, -B @ B.T)
    val = float((C @ P @ C.T)[0, 0])
    return math.sqrt(max(val, 0.0))


def h2_norm_quadrature(tf: RationalTf) -> float:
    """Independent H2 check: sqrt((1/pi) * integral_0^inf |G(jw)|^2 dw) by adaptive quadrature."""
    _require_norm_ready(tf)
    if tf.order == 0:
        return 0.0
    mags = np.abs(tf.poles)
    w_lo, w_hi = mags.min() * 1e-6, mags.max() * 1e6
    strict = tf.__class__(tf.poles, tf.residues)

    def integrand(u):
        w = math.exp(u)
        return abs(complex(strict(1j * w))) ** 2 * w

    breaks = sorted({math.log(m) for m in mags} | {math.log(abs(p.imag)) for p in tf.poles if p.imag > 0})
    edges = [math.log(w_lo)] + [b for b in breaks if math.log(w_lo) < b < math.log(w_hi)] + [math.log(w_hi)]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        val, _ = quad(integrand, a, b, epsabs=0.0, epsrel=1e-11, limit=500)
        total += val
    total += abs(complex(strict(0j))) ** 2 * w_lo
    total += abs(complex(np.sum(tf.residues))) ** 2 / w_hi
    return math.sqrt(total / math.pi)


def _grid(tf: RationalTf, points_per_decade=HINF_POINTS_PER_DECADE):
    lo, hi = HINF_GRID
    if tf.order:
        mags = np.abs(tf.poles)
        lo = min(lo, mags.min() * 1e-3)
        hi = max(hi, mags.max() * 1e3)
    n = int(math.ceil(math.log10(hi / lo) * points_per_decade)) + 1
    w = np.logspace(math.log10(lo), math.log10(hi), n)
    extra = np.abs(tf.poles.imag[tf.poles.imag > 0])
    return np.unique(np.concatenate([w, extra]))


def _grid_peak(tf: RationalTf) -> float:
    w = _grid(tf, 200)
    return float(max(np.max(np.abs(tf(1j * w))), abs(complex(tf(0j)))))


def hinf_norm(tf: RationalTf, points_per_decade: int = HINF_POINTS_PER_DECADE):
    """Peak gain ``max_w |G(jw)|`` and the frequency where it occurs.

    Dense log grid plus golden-section refinement of the grid maximum; the DC
    value and the high-frequency limit ``|D|`` are included.
    """
    _require_norm_ready(tf)
    if tf.E != 0.0:
        raise Unbounded("gain grows without bound when E != 0")
    w = _grid(tf, points_per_decade)
    mag = np.abs(tf(1j * w))
    k = int(np.argmax(mag))
    best_val, best_w = float(mag[k]), float(w[k])
    if 0 < k < len(w) - 1 and mag[k - 1] < mag[k] > mag[k + 1]:
        f = lambda u: -abs(complex(tf(1j * math.exp(u))))  # noqa: E731
        bracket = (math.log(w[k - 1]), math.log(w[k]), math.log(w[k + 1]))
        res = minimize_scalar(f, bracket=bracket, method="golden",
                              options={"xtol": HINF_REFINE_TOL})
        if -res.fun > best_val:
            best_val, best_w = float(-res.fun), float(math.exp(res.x))
    dc = abs(complex(tf(0j)))
    if dc >= best_val:
        best_val, best_w = dc, 0.0
    if abs(tf.D) > best_val:
        best_val, best_w = abs(tf.D), math.inf
    return best_val, best_w


def bode(tf: RationalTf, grid) -> list[FreqSample]:
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) < 0):
        raise ValueError("Bode grid must be positive and sorted")
    vals = evaluate(tf, grid)
    return [FreqSample(float(w), complex(v)) for w, v in zip(grid, np.atleast_1d(vals))]


def bode_rows(samples: list[FreqSample]):
    for smp in samples:
        mag = abs(smp.value)
        yield (smp.omega, mag, 20.0 * math.log10(mag) if mag > 0 else -math.inf,
               math.degrees(math.atan2(smp.value.imag, smp.value.real)))


def write_bode_csv(samples: list[FreqSample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["omega_rad_s", "mag", "mag_db", "phase_deg"])
        for row in bode_rows(samples):
            w.writerow([f"{x:.12g}" for x in row])
