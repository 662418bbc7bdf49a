"""Command-line entry point: ``smgres {simulate,norms,identify,sweep,bode}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 instability.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics, sim, sysid, tf
from .config import ScenarioConfig, build_config, load_config, preset_names
from .errors import ConfigError, SmgError, UnstableModel
from .model import solve_equilibrium

log = logging.getLogger("smgres")

NORM_HEADER = ["label", "C_eq", "tf", "h2", "hinf", "omega_peak", "literal_max_rel_dev"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_record(path: Path, record: dict) -> None:
    """One header row of keys, one row of values."""
    _write_rows(path, list(record), [list(record.values())])


def _bode_grid(cfg: ScenarioConfig) -> np.ndarray:
    b = cfg.norms.bode
    return np.logspace(math.log10(b.w_min), math.log10(b.w_max), b.n_points)


def _norm_rows(label, c_eq, model: tf.RationalTf, name, literal_dev=None):
    h2 = tf.h2_norm(model)
    hinf, w_peak = tf.hinf_norm(model)
    return [label, c_eq, name, h2, hinf, w_peak, literal_dev]


def analytic_norms(params, p_load, grid=None) -> dict:
    """Analytic Z_bus / G_pv models and their norms at the ``p_load`` operating point."""
    eq = solve_equilibrium(params, p_load)
    zbus = tf.analytic_zbus(params, eq)
    gpv = tf.analytic_gpv(params, eq)
    out = {"eq": eq, "zbus": zbus, "gpv": gpv,
           "h2_zbus": tf.h2_norm(zbus), "hinf_zbus": tf.hinf_norm(zbus),
           "h2_gpv": tf.h2_norm(gpv), "hinf_gpv": tf.hinf_norm(gpv)}
    if grid is not None:
        out["literal_dev"] = tf.gpv_literal_deviation(params, eq, grid)
    return out


# -- commands ----------------------------------------------------------------------


def run_simulation(cfg: ScenarioConfig):
    """Simulate the configured scenario and compute its resilience report."""
    params = cfg.params()
    secondary = cfg.secondary_obj()
    traj = sim.simulate(params, cfg.schedule_obj(), secondary, cfg.simulation.dt)
    m = cfg.metrics
    rep = metrics.report(traj, v_n=params.v_n, t_event=cfg.event_time(), tau1=m.tau1, tau2=m.tau2,
                         mode=m.mode, smooth_window=m.rocov_window, scenario=cfg.name,
                         C_eq=params.C_eq, secondary=secondary.enabled)
    try:
        an = analytic_norms(params, params.P_load_base)
    except UnstableModel as exc:
        log.warning("norms skipped: %s", exc)
    else:
        rep.h2_zbus, rep.hinf_zbus = an["h2_zbus"], an["hinf_zbus"][0]
        rep.h2_gpv, rep.hinf_gpv = an["h2_gpv"], an["hinf_gpv"][0]
    return traj, rep


def cmd_simulate(cfg: ScenarioConfig, out: Path, threads: int = 1):
    traj, rep = run_simulation(cfg)
    sim.write_trajectory_csv(traj, out / "trajectory.csv", cfg.simulation.decimate)
    write_record(out / "report.csv", rep.as_record())
    if cfg.output.plots:
        _plot_trajectory(traj, out / "trajectory.png")
    return rep


def _custom_tf(c) -> tf.RationalTf:
    return tf.RationalTf([complex(*p) for p in c.poles], [complex(*r) for r in c.residues], c.D, c.E)


def cmd_norms(cfg: ScenarioConfig, out: Path, threads: int = 1):
    params = cfg.params()
    grid = _bode_grid(cfg)
    rows = []
    for c_eq in cfg.norms.C_eq_values or [params.C_eq]:
        p = params.with_changes(C_eq=c_eq)
        an = analytic_norms(p, p.P_load_base, grid)
        label = f"C_eq={c_eq:g}"
        rows.append(_norm_rows(label, c_eq, an["zbus"], "zbus"))
        rows.append(_norm_rows(label, c_eq, an["gpv"], "gpv", an["literal_dev"]))
        tag = f"{c_eq * 1e3:g}mF"
        tf.write_bode_csv(tf.bode(an["zbus"], grid), out / f"bode_zbus_{tag}.csv")
        tf.write_bode_csv(tf.bode(an["gpv"], grid), out / f"bode_gpv_{tag}.csv")
    for c in cfg.norms.custom:
        rows.append(_norm_rows(c.label, None, _custom_tf(c), "custom"))
    _write_rows(out / "norms.csv", NORM_HEADER, rows)
    if cfg.output.plots:
        _plot_bode(out)
    return rows


def cmd_bode(cfg: ScenarioConfig, out: Path, threads: int = 1):
    params = cfg.params()
    grid = _bode_grid(cfg)
    eq = solve_equilibrium(params, params.P_load_base)
    zb = tf.bode(tf.analytic_zbus(params, eq), grid)
    gp = tf.bode(tf.analytic_gpv(params, eq), grid)
    tf.write_bode_csv(zb, out / "bode_zbus.csv")
    tf.write_bode_csv(gp, out / "bode_gpv.csv")
    return zb, gp


def cmd_identify(cfg: ScenarioConfig, out: Path, threads: int = 1):
    ic = cfg.identify
    params = cfg.params()
    if ic.import_csv:
        samples = sysid.read_frequency_response_csv(ic.import_csv)
        failures = []
    else:
        base = params.P_load_base if ic.base_p_load is None else ic.base_p_load
        samples, failures = sysid.sweep_frequency_response(
            params, base, cfg.sweep_plan_obj(), cfg.secondary_obj(), cfg.simulation.dt, threads)
        for w, err in failures:
            log.warning("sweep point omega=%.6g rad/s failed: %s: %s", w, err.code, err)
        if failures and len(samples) < 2 * ic.order + 2:
            raise failures[0][1]
    sysid.write_frequency_response_csv(samples, out / "frequency_response.csv")
    rep = sysid.vector_fit(samples, ic.order, ic.max_iterations, ic.weighting, ic.asymptote)
    rep.failed_frequencies = [(w, f"{e.code}: {e}") for w, e in failures]
    _write_rows(out / "fit_poles.csv", ["pole_re", "pole_im", "residue_re", "residue_im"],
                [[p.real, p.imag, r.real, r.imag] for p, r in zip(rep.tf.poles, rep.tf.residues)])
    _write_rows(out / "failed_frequencies.csv", ["omega_rad_s", "error"], rep.failed_frequencies)
    record = {"scenario": cfg.name, "order": ic.order, "n_samples": len(samples),
              "rel_rms_error": rep.rel_rms_error, "iterations_used": rep.iterations_used,
              "converged": rep.converged, "D": rep.tf.D, "E": rep.tf.E,
              "n_failed_frequencies": len(failures)}
    write_record(out / "fit_report.csv", record)
    rows = []
    if rep.tf.is_stable() and rep.tf.E == 0.0:
        hinf, w_peak = tf.hinf_norm(rep.tf)
        try:
            h2 = tf.h2_norm(rep.tf)
        except SmgError:
            h2 = math.inf
        rows.append(["identified", params.C_eq, "zbus", h2, hinf, w_peak, None])
    if not ic.import_csv:
        base = params.P_load_base if ic.base_p_load is None else ic.base_p_load
        an = analytic_norms(params, base)
        rows.append(_norm_rows("analytic", params.C_eq, an["zbus"], "zbus"))
    _write_rows(out / "identified_norms.csv", NORM_HEADER, rows)
    return rep, rows


SWEEP_HEADER = ["parameter", "value", "metric", "result", "status"]


def _sweep_one(cfg: ScenarioConfig, value: float):
    key = cfg.sweep.parameter
    sub = build_config(cfg.model_dump(mode="json"), [(key, value)], source=f"sweep:{key}={value}")
    rows = []
    if cfg.sweep.command in ("simulate", "both"):
        _, rep = run_simulation(sub)
        for name in ("E_v", "nadir", "nadir_depth", "rocov"):
            rows.append((name, rep.as_record()[name]))
    if cfg.sweep.command in ("norms", "both"):
        p = sub.params()
        an = analytic_norms(p, p.P_load_base)
        rows += [("h2_zbus", an["h2_zbus"]), ("hinf_zbus", an["hinf_zbus"][0]),
                 ("h2_gpv", an["h2_gpv"]), ("hinf_gpv", an["hinf_gpv"][0])]
    return rows


def cmd_sweep(cfg: ScenarioConfig, out: Path, threads: int = 1):
    sw = cfg.sweep
    if not sw.parameter or not sw.values:
        raise ConfigError("sweep needs sweep.parameter and sweep.values", key="sweep")
    base = cfg.model_dump(mode="json")
    cur = base
    for part in sw.parameter.split("."):
        try:
            cur = cur[int(part)] if isinstance(cur, list) else cur[part]
        except (KeyError, IndexError, ValueError, TypeError):
            raise ConfigError(f"sweep parameter {sw.parameter!r} does not exist", key="sweep.parameter") from None
    if isinstance(cur, bool) or not isinstance(cur, (int, float)):
        raise ConfigError(f"sweep parameter {sw.parameter!r} is not numeric", key="sweep.parameter")

    def one(value):
        try:
            return value, _sweep_one(cfg, value), None
        except SmgError as exc:
            return value, [], exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, sw.values))
    else:
        results = [one(v) for v in sw.values]
    rows = []
    for value, metric_rows, err in results:
        if err is not None:
            rows.append([sw.parameter, value, "error", None, f"error:{err.code}"])
        for name, result in metric_rows:
            rows.append([sw.parameter, value, name, result, "ok"])
    _write_rows(out / "sweep.csv", SWEEP_HEADER, rows)
    return rows


COMMANDS = {"simulate": cmd_simulate, "norms": cmd_norms, "identify": cmd_identify,
            "sweep": cmd_sweep, "bode": cmd_bode}


# -- optional figures ----------------------------------------------------------------


def _plot_trajectory(traj, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(traj.t, traj.v_bus, lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("v_bus [V]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_bode(out: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for kind in ("zbus", "gpv"):
        files = sorted(out.glob(f"bode_{kind}_*.csv"))
        if not files:
            continue
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
        for f in files:
            data = np.loadtxt(f, delimiter=",", skiprows=1)
            a1.semilogx(data[:, 0], data[:, 2], label=f.stem.split("_")[-1])
            a2.semilogx(data[:, 0], data[:, 3])
        a1.set_ylabel("|G| [dB]")
        a2.set_ylabel("phase [deg]")
        a2.set_xlabel("omega [rad/s]")
        a1.legend()
        fig.tight_layout()
        fig.savefig(out / f"bode_{kind}.png", dpi=120)
        plt.close(fig)


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smgres", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="scenario YAML file or bundled preset name "
                             f"({', '.join(preset_names())})")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. system.C_eq=0.03 (repeatable)")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--plots", action="store_true", help="also write PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} command")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.override)
        if args.plots:
            cfg.output.plots = True
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1", key="--threads")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.effective.yaml").write_text(cfg.dump())
        COMMANDS[args.command](cfg, out, args.threads)
    except SmgError as exc:
        key = getattr(exc, "key", None)
        tail = f" key={key}" if key else ""
        print(f"error code={exc.code} exit={exc.exit_status}{tail} msg={str(exc)!r}", file=sys.stderr)
        return exc.exit_status
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
