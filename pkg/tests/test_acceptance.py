"""Acceptance gate: one PASS/FAIL line per criterion, printed in the pytest summary."""
import csv
import math
import time

import numpy as np
import pytest

from conftest import fd_jacobian, linear_step_response, random_stable_tf, random_system
from smgres.cli import analytic_norms, main, run_simulation
from smgres.config import load_config, preset_names
from smgres.metrics import nadir, rocov
from smgres.model import linearize, solve_equilibrium, table1_params
from smgres.sim import DisturbanceSchedule, simulate
from smgres.sysid import vector_fit
from smgres.tf import RationalTf, analytic_zbus, evaluate, h2_norm, h2_norm_quadrature, hinf_norm

C_VALUES = (20, 30, 40)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def command_for(preset):
    return {"table1": "simulate", "table2": "simulate", "fig4": "norms", "identify": "identify",
            "sweep": "sweep"}[preset.split("_")[0]]


def test_1_energy_trend(verdict):
    t0 = time.perf_counter()
    wo = [run_simulation(load_config(f"table2_wo_secondary_{c}mF"))[1].E_v for c in C_VALUES]
    w = [run_simulation(load_config(f"table2_w_secondary_{c}mF"))[1].E_v for c in C_VALUES]
    elapsed = time.perf_counter() - t0
    ok = wo[0] < wo[1] < wo[2] and w[0] > w[1] > w[2] and elapsed < 120
    detail = (f"without secondary {', '.join(f'{x:.9g}' for x in wo)}; "
              f"with secondary {', '.join(f'{x:.9g}' for x in w)}; {elapsed:.1f}s")
    assert verdict("1 energy-imbalance trend vs C_eq", ok, detail)


def test_2_impedance_norm_trend(verdict):
    t0 = time.perf_counter()
    cfg = load_config("fig4_norms")
    params = cfg.params()
    h2, hinf = [], []
    for c in cfg.norms.C_eq_values:
        p = params.with_changes(C_eq=c)
        an = analytic_norms(p, p.P_load_base)
        h2.append(an["h2_zbus"])
        hinf.append(an["hinf_zbus"][0])
    elapsed = time.perf_counter() - t0
    drop = 1 - hinf[2] / hinf[0]
    ok = h2[0] > h2[1] > h2[2] and hinf[0] > hinf[1] > hinf[2] and drop > 0.25 and elapsed < 10
    detail = (f"H2 {', '.join(f'{x:.5g}' for x in h2)}; Hinf {', '.join(f'{x:.5g}' for x in hinf)}; "
              f"Hinf drop {drop:.1%}; {elapsed:.2f}s")
    assert verdict("2 Z_bus norm trend vs C_eq", ok, detail)


def test_3_norm_oracles(verdict):
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(100):
        tf = random_stable_tf(rng, max_order=12)
        worst = max(worst, abs(h2_norm(tf) / h2_norm_quadrature(tf) - 1))
    first = h2_norm(RationalTf([-1.0], [1.0]))
    zeta = 0.1
    p = complex(-zeta, math.sqrt(1 - zeta ** 2))
    res = 1 / (p - p.conjugate())
    peak = hinf_norm(RationalTf([p, p.conjugate()], [res, res.conjugate()]))[0]
    ok = worst < 1e-3 and abs(first - 0.70711) <= 1e-5 and abs(peak - 5.0252) <= 1e-3
    detail = f"worst Gramian/quadrature mismatch {worst:.2e}; H2 first order {first:.6f}; Hinf resonance {peak:.5f}"
    assert verdict("3 norm oracles", ok, detail)


def test_4_linearization_fidelity(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        params, p_load = random_system(rng)
        eq = solve_equilibrium(params, p_load)
        A = linearize(params, eq).A
        J = fd_jacobian(params, eq)
        worst = max(worst, float(np.max(np.abs(A - J) / (np.abs(J) + 1e-9))))
    table1 = table1_params(C_eq=0.02)
    dp = 0.01 * table1.P_load_base
    traj = simulate(table1, DisturbanceSchedule(3.0, ((0.5, dp),)))
    lm = linearize(table1, solve_equilibrium(table1, table1.P_load_base))
    k0 = traj.index_at(0.5)
    lin = linear_step_response(lm, traj.t[k0:] - traj.t[k0], dp)
    step_err = np.max(np.abs(traj.v_bus[k0:] - traj.v_bus[0] - lin)) / np.max(np.abs(lin))
    ok = worst <= 1e-6 and step_err < 0.02
    detail = f"worst Jacobian rel. error {worst:.2e} over 50 systems; 1% step error {step_err:.2%} of peak"
    assert verdict("4 linearization fidelity", ok, detail)


def test_5_identification(verdict, tmp_path):
    t0 = time.perf_counter()
    notes, ok = [], True
    for c in C_VALUES:
        preset = f"identify_{c}mF"
        out = tmp_path / preset
        assert main(["identify", "--config", preset, "--out", str(out)]) == 0
        params = load_config(preset).params()
        z = analytic_zbus(params, solve_equilibrium(params, params.P_load_base))
        fr = read_csv(out / "frequency_response.csv")
        w = np.array([float(r["omega_rad_s"]) for r in fr])
        meas = np.array([complex(float(r["re"]), float(r["im"])) for r in fr])
        ref = evaluate(z, w)
        mag = np.max(np.abs(np.abs(meas) / np.abs(ref) - 1))
        ph = np.max(np.abs(np.degrees(np.angle(meas / ref))))
        rows = {r["label"]: r for r in read_csv(out / "identified_norms.csv")}
        if "identified" not in rows:
            ok = False
            notes.append(f"{c}mF: no stable identified model")
            continue
        e2 = abs(float(rows["identified"]["h2"]) / float(rows["analytic"]["h2"]) - 1)
        einf = abs(float(rows["identified"]["hinf"]) / float(rows["analytic"]["hinf"]) - 1)
        ok &= len(fr) == 30 and mag < 0.02 and ph < 3.0 and e2 < 0.03 and einf < 0.03
        notes.append(f"{c}mF: |Z| err {mag:.2%}, phase err {ph:.3f} deg, H2 err {e2:.2%}, Hinf err {einf:.2%}")
    fixture = RationalTf([-2.0, -50.0, -5 + 40j, -5 - 40j, -30 + 300j, -30 - 300j],
                         [3.0, 40.0, 2 + 5j, 2 - 5j, 60 - 10j, 60 + 10j])
    wf = np.logspace(-1, 4, 200)
    fit = vector_fit((wf, evaluate(fixture, wf)), order=6, asymptote="none").tf
    pole_err = np.max(np.abs(fit.poles - fixture.poles) / np.abs(fixture.poles))
    res_err = np.max(np.abs(fit.residues - fixture.residues) / np.abs(fixture.residues))
    elapsed = time.perf_counter() - t0
    ok &= pole_err < 1e-6 and res_err < 1e-6 and elapsed < 300
    notes.append(f"order-6 round trip pole err {pole_err:.1e}, residue err {res_err:.1e}; {elapsed:.0f}s")
    assert verdict("5 identification pipeline", ok, "; ".join(notes))


def _step_metrics(c_eq, dp):
    p = table1_params(C_eq=c_eq)
    traj = simulate(p, DisturbanceSchedule(12.0, ((10.0, dp),)))
    depth = traj.v_bus[traj.index_at(9.99)] - nadir(traj, 10.0)
    return depth, rocov(traj, 10.0)


def test_6a_proportional_to_disturbance(verdict):
    d1, r1 = _step_metrics(0.02, 2.5e6)
    d2, r2 = _step_metrics(0.02, 5e6)
    ok = abs(d2 / d1 / 2 - 1) < 0.10 and abs(r2 / r1 / 2 - 1) < 0.10
    detail = f"nadir depth ratio {d2 / d1:.3f}, RoCoV ratio {r2 / r1:.3f} (target 2)"
    assert verdict("6a nadir and RoCoV proportional to step size", ok, detail)


def test_6b_inverse_to_inertia(verdict):
    d1, r1 = _step_metrics(0.02, 5e6)
    d2, r2 = _step_metrics(0.04, 5e6)
    rocov_ok = abs(r1 / r2 / 2 - 1) < 0.10
    nadir_ok = abs(d1 / d2 / 2 - 1) < 0.10
    detail = (f"RoCoV ratio {r1 / r2:.3f} ({'ok' if rocov_ok else 'off'}), "
              f"nadir depth ratio {d1 / d2:.3f} ({'ok' if nadir_ok else 'off'}); target 2")
    assert verdict("6b nadir and RoCoV inversely proportional to C_eq", rocov_ok and nadir_ok, detail)


def test_7_determinism(verdict, tmp_path):
    mismatched, n_files = [], 0
    for preset in preset_names():
        runs = []
        for k in range(2):
            out = tmp_path / f"{preset}_{k}"
            assert main([command_for(preset), "--config", preset, "--out", str(out)]) == 0
            runs.append(out)
        for f in sorted(runs[0].glob("*.csv")):
            n_files += 1
            other = runs[1] / f.name
            if not other.is_file() or f.read_bytes() != other.read_bytes():
                mismatched.append(f"{preset}/{f.name}")
    ok = not mismatched and n_files > 0
    detail = f"{n_files} CSVs across {len(preset_names())} presets" + (
        f"; differing: {', '.join(mismatched)}" if mismatched else "")
    assert verdict("7 byte-identical reruns", ok, detail)
