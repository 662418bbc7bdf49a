"""Compiled inner loops: the nonlinear right-hand side and the RK4 stepper.

State vector layout: ``[v_bus, i_1..i_nb, v_z_1..v_z_nz, delta]`` where the
trailing ``delta`` (secondary-control offset) is only present in the stepper.
"""
import math

import numpy as np
from numba import njit

OK = 0
COLLAPSE = 1


@njit(cache=True, nogil=True)
def rhs(x, out, c_eq, v_ref, ind, rt, ch, zidx, p_load, i_inj, offset):
    """Write d/dt of the physical state into ``out``; return COLLAPSE if v_bus <= 0."""
    v = x[0]
    if not v > 0.0:
        return COLLAPSE
    nb = ind.shape[0]
    total = 0.0
    for k in range(nb):
        i_k = x[1 + k]
        total += i_k
        z = zidx[k]
        if z < 0:
            out[1 + k] = (v_ref + offset - rt[k] * i_k - v) / ind[k]
        else:
            vz = x[1 + nb + z]
            out[1 + k] = (v_ref - rt[k] * i_k - vz - v) / ind[k]
            out[1 + nb + z] = i_k / ch[k]
    out[0] = (total + i_inj - p_load / v) / c_eq
    return OK


@njit(cache=True, nogil=True)
def _full_rhs(x, out, n, c_eq, v_ref, ind, rt, ch, zidx, p_load, i_inj, k_i, target):
    status = rhs(x, out, c_eq, v_ref, ind, rt, ch, zidx, p_load, i_inj, x[n])
    out[n] = k_i * (target - x[0])
    return status


@njit(cache=True, nogil=True)
def rk4_run(x0, dt, n_steps, p_steps, amp, omega, t_start, c_eq, v_ref, ind, rt, ch,
            zidx, k_i, target, record_every, bus_only):
    """Integrate ``n_steps`` classical RK4 steps.

    ``p_steps[j]`` is the load power held over step j. The perturbation current is
    ``amp*sin(omega*(t - t_start))`` for ``t >= t_start``. Returns
    ``(records, status, failed_step)``; ``records`` has one row per recorded
    sample (the initial state included) holding either the full augmented state
    or just v_bus.
    """
    m = x0.shape[0]
    n = m - 1
    n_rec = n_steps // record_every + 1
    width = 1 if bus_only else m
    rec = np.empty((n_rec, width))
    x = x0.copy()
    k1 = np.zeros(m)
    k2 = np.zeros(m)
    k3 = np.zeros(m)
    k4 = np.zeros(m)
    tmp = np.empty(m)
    for c in range(width):
        rec[0, c] = x[c]
    r = 1
    for j in range(n_steps):
        t = j * dt
        p = p_steps[j]
        th = t + 0.5 * dt
        t1 = t + dt
        ia = 0.0
        ib = 0.0
        ic = 0.0
        if amp != 0.0:
            if t >= t_start:
                ia = amp * math.sin(omega * (t - t_start))
            if th >= t_start:
                ib = amp * math.sin(omega * (th - t_start))
            if t1 >= t_start:
                ic = amp * math.sin(omega * (t1 - t_start))
        if _full_rhs(x, k1, n, c_eq, v_ref, ind, rt, ch, zidx, p, ia, k_i, target) != OK:
            return rec[:r], COLLAPSE, j
        for q in range(m):
            tmp[q] = x[q] + 0.5 * dt * k1[q]
        if _full_rhs(tmp, k2, n, c_eq, v_ref, ind, rt, ch, zidx, p, ib, k_i, target) != OK:
            return rec[:r], COLLAPSE, j
        for q in range(m):
            tmp[q] = x[q] + 0.5 * dt * k2[q]
        if _full_rhs(tmp, k3, n, c_eq, v_ref, ind, rt, ch, zidx, p, ib, k_i, target) != OK:
            return rec[:r], COLLAPSE, j
        for q in range(m):
            tmp[q] = x[q] + dt * k3[q]
        if _full_rhs(tmp, k4, n, c_eq, v_ref, ind, rt, ch, zidx, p, ic, k_i, target) != OK:
            return rec[:r], COLLAPSE, j
        for q in range(m):
            x[q] += dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
        if not x[0] > 0.0:
            return rec[:r], COLLAPSE, j + 1
        if (j + 1) % record_every == 0:
            for c in range(width):
                rec[r, c] = x[c]
            r += 1
    return rec[:r], OK, -1
