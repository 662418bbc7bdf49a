import math

import numpy as np
import pytest

from smgres.errors import ConfigError, RankDeficient, WindowTooShort
from smgres.model import solve_equilibrium
from smgres.sysid import (SweepPlan, identify_zbus, measure_frequency_response, read_frequency_response_csv,
                          single_bin_dft, vector_fit, write_frequency_response_csv)
from smgres.tf import FreqSample, RationalTf, analytic_zbus, evaluate, h2_norm, hinf_norm

from conftest import random_stable_tf


def sampled(tf, w):
    return (w, evaluate(tf, w))


ORDER6 = RationalTf([-2.0, -50.0, -5 + 40j, -5 - 40j, -30 + 300j, -30 - 300j],
                    [3.0, 40.0, 2 + 5j, 2 - 5j, 60 - 10j, 60 + 10j])


def test_dft_pure_tone():
    w, dt = 2 * math.pi * 8.0, 1e-4
    t = np.arange(20000) * dt
    z = single_bin_dft(3.0 * np.sin(w * t + 0.4), dt, w, 10)
    assert abs(z - 3.0 * np.exp(0.4j)) < 1e-6


def test_dft_constant_and_leakage():
    w, dt = 2 * math.pi * 5.0, 1e-4
    t = np.arange(40000) * dt
    assert abs(single_bin_dft(np.full(t.size, 7.0), dt, w, 10)) < 1e-9
    # second tone at an integer multiple of the fundamental over the window
    two = 2.0 * np.sin(w * t) + 5.0 * np.sin(3 * w * t + 1.0)
    assert abs(single_bin_dft(two, dt, w, 10) - 2.0) < 1e-3 * 2.0
    with pytest.raises(WindowTooShort):
        single_bin_dft(np.ones(10), dt, w, 10)


def test_fit_first_order_with_feedthrough():
    w = np.logspace(-1, 3, 40)
    rep = vector_fit(sampled(RationalTf([-3.0], [2.0], D=1.0), w), order=1)
    assert rep.rel_rms_error < 1e-9
    assert rep.tf.poles[0] == pytest.approx(-3.0, abs=1e-6)
    assert rep.tf.residues[0] == pytest.approx(2.0, abs=1e-6)
    assert rep.tf.D == pytest.approx(1.0, abs=1e-6)


def test_fit_order6_round_trip():
    w = np.logspace(-1, 4, 200)
    rep = vector_fit(sampled(ORDER6, w), order=6, asymptote="none")
    assert rep.rel_rms_error < 1e-8
    assert rep.iterations_used <= 10
    np.testing.assert_allclose(rep.tf.poles, ORDER6.poles, atol=1e-6 * 300)
    np.testing.assert_allclose(rep.tf.residues, ORDER6.residues, atol=1e-6 * 60)


def test_fit_idempotent():
    w = np.logspace(-1, 4, 200)
    first = vector_fit(sampled(ORDER6, w), order=6, asymptote="none").tf
    second = vector_fit(sampled(first, w), order=6, asymptote="none").tf
    assert np.max(np.abs(evaluate(first, w) - evaluate(second, w))) < 1e-9 * np.max(np.abs(evaluate(first, w)))


def test_fit_stays_stable_on_noisy_data():
    rng = np.random.default_rng(3)
    for _ in range(5):
        tf = random_stable_tf(rng, max_order=8)
        w = np.logspace(-2, 4, 120)
        f = evaluate(tf, w) * (1 + 0.05 * (rng.normal(size=w.size) + 1j * rng.normal(size=w.size)))
        rep = vector_fit((w, f), order=tf.order + 2)
        assert rep.tf.is_stable()


def test_best_iterate_never_worse_than_start():
    w = np.logspace(-1, 4, 200)
    f = evaluate(ORDER6, w)
    start = vector_fit((w, f), order=6, max_iterations=1, asymptote="none")
    for n in (2, 3, 5, 20):
        assert vector_fit((w, f), order=6, max_iterations=n, asymptote="none").rel_rms_error \
            <= start.rel_rms_error * (1 + 1e-12)


def test_noisy_zbus_hinf(table1):
    z = analytic_zbus(table1, solve_equilibrium(table1, table1.P_load_base))
    w = 2 * np.pi * np.logspace(-1, 3, 60)
    rng = np.random.default_rng(2024)
    f = evaluate(z, w) * (1 + 0.01 * (rng.normal(size=w.size) + 1j * rng.normal(size=w.size)) / np.sqrt(2))
    rep = vector_fit((w, f), order=9, asymptote="none")
    assert hinf_norm(rep.tf)[0] == pytest.approx(hinf_norm(z)[0], rel=0.05)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rank_deficient():
    w = np.logspace(0, 2, 20)
    with pytest.raises(RankDeficient):
        vector_fit((w, np.zeros(w.size)), order=2)


def test_fit_input_validation():
    w = np.logspace(0, 2, 5)
    with pytest.raises(ConfigError):
        vector_fit((w, np.ones(5)), order=4)
    with pytest.raises(ConfigError):
        vector_fit((np.ones(20), np.ones(20)), order=2)
    with pytest.raises(ConfigError):
        vector_fit((np.logspace(0, 2, 20), np.ones(20)), order=2, weighting="bogus")


def test_frequency_response_csv_round_trip(tmp_path):
    samples = [FreqSample(w, complex(np.cos(w), -np.sin(w) / 3)) for w in (0.5, 1.0, 2e3)]
    path = tmp_path / "fr.csv"
    write_frequency_response_csv(samples, path)
    back = read_frequency_response_csv(path)
    assert [b.omega for b in back] == [s.omega for s in samples]
    np.testing.assert_allclose([b.value for b in back], [s.value for s in samples], rtol=1e-14)
    path.write_text("omega_rad_s,re,im\n1.0,2.0,3.0\n2.0,abc,1.0\n")
    with pytest.raises(ConfigError, match="row 3"):
        read_frequency_response_csv(path)


def test_sweep_plan_validation():
    with pytest.raises(ConfigError):
        SweepPlan((10.0, 5.0))
    with pytest.raises(ConfigError):
        SweepPlan((1.0,), amplitude=0.0)
    plan = SweepPlan.log_spaced(0.1, 1000.0, 30)
    assert len(plan.frequencies) == 30
    assert plan.frequencies[0] == pytest.approx(2 * np.pi * 0.1)


REDUCED = tuple(2 * np.pi * f for f in (0.3, 3.0, 30.0, 300.0))


def test_measured_points_match_analytic(table1):
    z = analytic_zbus(table1, solve_equilibrium(table1, table1.P_load_base))
    meas = measure_frequency_response(table1, table1.P_load_base, SweepPlan(REDUCED))
    for smp in meas:
        ref = complex(evaluate(z, smp.omega))
        assert abs(abs(smp.value) / abs(ref) - 1) < 0.02
        assert abs(np.degrees(np.angle(smp.value / ref))) < 3.0


def test_measurement_is_linear_in_amplitude(table1):
    a = measure_frequency_response(table1, table1.P_load_base, SweepPlan(REDUCED, amplitude=5.0))
    b = measure_frequency_response(table1, table1.P_load_base, SweepPlan(REDUCED, amplitude=20.0))
    for x, y in zip(a, b):
        assert abs(x.value - y.value) < 0.01 * abs(y.value)


@pytest.mark.slow
def test_identify_end_to_end(table1):
    z = analytic_zbus(table1, solve_equilibrium(table1, table1.P_load_base))
    rep = identify_zbus(table1, table1.P_load_base, SweepPlan.log_spaced(), order=9)
    w = 2 * np.pi * np.logspace(-1, 3, 200)
    ref = evaluate(z, w)
    err = np.sqrt(np.mean(np.abs(evaluate(rep.tf, w) - ref) ** 2 / np.abs(ref) ** 2))
    assert err < 0.01
    assert rep.tf.is_stable() and not rep.failed_frequencies
    assert h2_norm(rep.tf) == pytest.approx(h2_norm(z), rel=0.03)
