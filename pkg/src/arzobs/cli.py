"""Command line: simulate | observe | aggregate | calibrate | gains | validate.

Exit codes: 0 success, 2 configuration (including regime and initial CFL
problems), 3 numerical blow-up, 4 data error.
"""
import argparse
import logging
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from . import fd as fdmod
from . import ingest, linearize, metrics, observer, pipeline, solver
from .errors import (CalibrationError, ConfigError, DataError, NumericalError, ParameterError,
                     RegimeError)

log = logging.getLogger("arzobs")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4

# (column suffix, factor from SI) per unit system
UNITS = {
    "si": {"rho": ("veh_per_m", 1.0), "v": ("m_per_s", 1.0), "q": ("veh_per_s", 1.0)},
    "traffic": {"rho": ("veh_per_km", 1000.0), "v": ("km_per_h", 3.6), "q": ("veh_per_h", 3600.0)},
}


def _col(units, kind, stem):
    suffix, _ = UNITS[units][kind]
    return f"{stem}_{suffix}"


def _factor(units, kind):
    return UNITS[units][kind][1]


def write_csv(path, header, columns):
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def read_csv(path):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return {name: data[:, k] for k, name in enumerate(header)}


def _pick(cols, stem, kind, path):
    """Column ``stem`` in whichever supported unit the file uses, returned in SI."""
    for units in UNITS:
        name = _col(units, kind, stem)
        if name in cols:
            return cols[name] / _factor(units, kind)
    raise DataError(f"{path}: no column for {stem} (expected e.g. {_col('si', kind, stem)})")


# -- setup helpers ---------------------------------------------------------------

def build_model(cfg):
    fd = fdmod.from_dict(cfg["model"]["fd"])
    ref = linearize.reference_state(fd, cfg["reference"]["rho_star"], cfg["reference"]["v_star"])
    return fd, cfg["model"]["tau"], cfg["model"]["length"], ref


def build_plant(cfg, fd, ref, length):
    g = cfg["grid"]
    x = (np.arange(g["num_cells"]) + 0.5) * length / g["num_cells"]
    if cfg["initial"]["kind"] == "setpoint":
        ic = solver.uniform_state(g["num_cells"], ref.rho_star, ref.v_star)
    else:
        ic = solver.sinusoidal_ic(x, ref, length, cfg["initial"]["amplitude"], cfg["initial"]["waves"])
    ic.validate(fd)
    dx = length / g["num_cells"]
    bound = dx / solver.max_speed(ic, fd)
    if g["dt"] is None:
        grid = solver.Grid.fitted(length, g["num_cells"], g["total_time"], g["cfl_safety"] * bound)
    else:
        if g["dt"] > bound:
            raise ConfigError(f"grid.dt: {g['dt']} s exceeds the CFL bound {bound:.6g} s "
                              f"(dx={dx:.6g} m, max speed {dx / bound:.6g} m/s)")
        n = g["total_time"] / g["dt"]
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError("grid.dt: must divide grid.total_time")
        grid = solver.Grid(length, g["num_cells"], float(g["dt"]), int(round(n)))
    b = cfg["boundary"]
    inlet = ref.q_star if b["inlet_flux"] is None else b["inlet_flux"]
    if b["outlet"] == "density":
        value = ref.rho_star if b["outlet_value"] is None else b["outlet_value"]
    elif b["outlet"] == "velocity":
        value = ref.v_star if b["outlet_value"] is None else b["outlet_value"]
    else:
        value = None
    bc = solver.BoundarySpec(inlet, b["outlet"], value, cfg["observer"]["v_floor"])
    return ic, bc, grid


def _write_fields(path, times, x, rho, v, units):
    nt, nx = rho.shape
    write_csv(path, ["t", "x", _col(units, "rho", "rho"), _col(units, "v", "v")],
              [np.repeat(times, nx), np.tile(x, nt), rho.ravel() * _factor(units, "rho"),
               v.ravel() * _factor(units, "v")])


def _write_measurements(path, meas, units):
    fq, fv = _factor(units, "q"), _factor(units, "v")
    write_csv(path, ["t_s", _col(units, "q", "q_in"), _col(units, "q", "q_out"), _col(units, "v", "v_out")],
              [meas.times, meas.q_in * fq, meas.q_out * fq, meas.v_out * fv])


def read_measurements(path, max_gap):
    cols = read_csv(path)
    if "t_s" not in cols:
        raise DataError(f"{path}: missing t_s column")
    return observer.BoundaryMeasurements(cols["t_s"], _pick(cols, "q_in", "q", path),
                                         _pick(cols, "q_out", "q", path),
                                         _pick(cols, "v_out", "v", path), max_gap)


def _write_errors(path, series):
    write_csv(path, ["t_s", "e_rho", "e_v"], [series.times, series.e_rho, series.e_v])


def _summary(series, threshold):
    tc = metrics.convergence_time(series, threshold)
    er, ev = series.final()
    tc_txt = "none" if tc is None else f"{tc:.6g}"
    return f"convergence_time_s={tc_txt} threshold={threshold:g} final_e_rho={er:.6g} final_e_v={ev:.6g}"


# -- commands ---------------------------------------------------------------------

def cmd_simulate(cfg, out, units):
    fd, tau, length, ref = build_model(cfg)
    ic, bc, grid = build_plant(cfg, fd, ref, length)
    run = solver.simulate_plant(ic, bc, fd, tau, grid, cfg["grid"]["output_stride"])
    _write_fields(os.path.join(out, "trajectory.csv"), run.times, grid.x, run.rho, run.v, units)
    _write_measurements(os.path.join(out, "measurements.csv"),
                        observer.BoundaryMeasurements.from_plant(run), units)
    print(f"simulated {grid.num_steps} steps (dt={grid.dt:.6g} s, dx={grid.dx:.6g} m) -> {out}")
    return run


def cmd_observe(cfg, out, units):
    fd, tau, length, ref = build_model(cfg)
    linearize.require_congested(ref, cfg["observer"]["speed_eps"])
    ob = cfg["observer"]
    data = cfg["data"]
    truth = None
    if data["trajectories"]:
        traj = ingest.read_trajectory_csv(data["trajectories"], data["resolution"])
        agg = ingest.edie_aggregate(traj, data["n_time_cells"], data["n_space_cells"], data["domain"])
        meas, gaps = ingest.boundary_series(agg, data["max_gap"])
        for gap in gaps:
            log.warning("interpolated empty boundary cell: %s at t=%.6g s (between %.6g and %.6g s)", *gap)
        ref = ingest.dataset_averages(agg, fd)
        length = float(agg.x_edges[-1] - agg.x_edges[0])
        t0 = float(agg.t_edges[0])
        meas = observer.BoundaryMeasurements(meas.times - t0, meas.q_in, meas.q_out, meas.v_out, meas.max_gap)
        total = float(agg.t_edges[-1]) - t0
        truth = ("data", agg)
    elif data["measurements"]:
        meas = read_measurements(data["measurements"], data["max_gap"])
        total = float(meas.times[-1] - meas.times[0])
        meas = observer.BoundaryMeasurements(meas.times - meas.times[0], meas.q_in, meas.q_out,
                                             meas.v_out, meas.max_gap)
    else:
        run = cmd_simulate(cfg, out, units)
        meas = observer.BoundaryMeasurements.from_plant(run, ob["max_gap"])
        total = run.grid.total_time
        truth = ("plant", run)
    m = cfg["grid"]["num_cells"]
    est0 = solver.uniform_state(m, ref.rho_star, ref.v_star)
    dt_max = cfg["grid"]["cfl_safety"] * solver.cfl_dt(est0, fd, length / m, 1.0)
    if truth is None and len(meas.times) > 1:
        # step on the measurement cadence when it is finer than the CFL bound
        dt_max = min(dt_max, float(np.min(np.diff(meas.times))))
    grid = solver.Grid.fitted(length, m, total, dt_max)
    if truth is not None and truth[0] == "plant":
        grid = truth[1].grid
    est = observer.run_observer(meas, fd, tau, ref, grid, ob["init"], ob["exponent"], ob["gain_form"],
                                cfg["grid"]["output_stride"], ob["v_floor"])
    _write_fields(os.path.join(out, "estimate.csv"), est.times, grid.x, est.rho, est.v, units)
    if truth is None:
        print(f"observer ran {grid.num_steps} steps -> {out} (no truth available, no error series)")
        return est
    if truth[0] == "plant":
        run = truth[1]
        series = metrics.l2_error_series(run.times, grid.x, run.rho, run.v, est.rho, est.v, ref)
    else:
        agg = truth[1]
        te = agg.t_edges - agg.t_edges[0]
        xc = agg.x_centers - agg.x_edges[0]
        rho_c = np.array([np.interp(xc, grid.x, r) for r in pipeline.cell_means(est.times, est.rho, te)])
        v_c = np.array([np.interp(xc, grid.x, r) for r in pipeline.cell_means(est.times, est.v, te)])
        series = metrics.l2_error_series(te[:-1] + 0.5 * np.diff(te), xc, agg.rho, agg.v, rho_c, v_c,
                                         ref, mask=~agg.empty)
    _write_errors(os.path.join(out, "errors.csv"), series)
    line = _summary(series, ob["threshold"])
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(line + "\n")
    print(line)
    return series


def cmd_aggregate(cfg, out, units):
    data = cfg["data"]
    if not data["trajectories"]:
        raise ConfigError("data.trajectories: required for aggregate")
    traj = ingest.read_trajectory_csv(data["trajectories"], data["resolution"])
    agg = ingest.edie_aggregate(traj, data["n_time_cells"], data["n_space_cells"], data["domain"])
    ingest.write_aggregate_csv(agg, os.path.join(out, "aggregate.csv"))
    print(f"aggregated {len(traj)} samples of {traj.num_vehicles} vehicles on {agg.shape} cells "
          f"({int(agg.empty.sum())} empty) -> {out}")
    return agg


def _rho_m_from(cal):
    if cal["rho_m"] is not None:
        return float(cal["rho_m"])
    parts = (cal["lanes"], cal["vehicle_length"], cal["safety_factor"])
    if any(p is None for p in parts):
        raise ConfigError("calibration.rho_m: give rho_m or lanes, vehicle_length and safety_factor")
    return fdmod.prescribe_rho_m(*parts)


def cmd_calibrate(cfg, out, units, seed):
    cal = cfg["calibration"]
    done = False
    if cal["scatter"]:
        cols = read_csv(cal["scatter"])
        try:
            rho = cols["density_veh_per_km"] / 1000.0
            q = cols["flow_veh_per_h"] / 3600.0
        except KeyError as exc:
            raise DataError(f"{cal['scatter']}: missing column {exc}") from exc
        res = fdmod.calibrate_three_param(np.column_stack([rho, q]), _rho_m_from(cal), seed=seed,
                                          n_starts=cal["n_starts"])
        rho_c = fdmod.critical_density(res.fd)
        cfgmod.dump({"fd": res.fd.as_dict(), "residual": float(res.residual), "rms": float(res.rms),
                     "n_points": int(res.n_points), "critical_density": float(rho_c)},
                    os.path.join(out, "calibration.yaml"))
        print(f"fit {res.fd.as_dict()} residual={res.residual:.6g} rho_c={rho_c:.6g} veh/m "
              f"({rho_c / res.fd.rho_m:.4g} rho_m)")
        done = True
    if cfg["data"]["trajectories"]:
        data = cfg["data"]
        fd = fdmod.from_dict(cfg["model"]["fd"])
        traj = ingest.read_trajectory_csv(data["trajectories"], data["resolution"])
        agg = ingest.edie_aggregate(traj, data["n_time_cells"], data["n_space_cells"], data["domain"])
        meas, _ = ingest.boundary_series(agg, data["max_gap"])
        best, scores = pipeline.select_tau(agg, meas, fd, cal["tau_grid"])
        write_csv(os.path.join(out, "tau_scan.csv"), ["tau_s", "misfit"],
                  [list(scores), [scores[k] for k in scores]])
        print(f"relaxation time with the smallest misfit: tau={best:g} s")
        done = True
    if not done:
        raise ConfigError("calibration.scatter / data.trajectories: nothing to calibrate")


def cmd_gains(cfg, out, units):
    fd, tau, length, ref = build_model(cfg)
    linearize.require_congested(ref, cfg["observer"]["speed_eps"])
    m = cfg["grid"]["num_cells"]
    x = (np.arange(m) + 0.5) * length / m
    x = np.concatenate((x, [length]))
    g = linearize.injection_gains(ref, tau, length, x, cfg["observer"]["gain_form"])
    write_csv(os.path.join(out, "gains.csv"), ["x_m", "r_per_s", "s_per_s"], [g.x_samples, g.r_values, g.s_values])
    print(f"t_f={g.t_f:.6g} s; r(L)={g.r_values[-1]:.6g} 1/s; s(L)={g.s_values[-1]:.6g} 1/s")
    return g


def cmd_validate(cfg, out, units, expect=None, tol=0.02):
    """Check the config; with trajectories, report dataset averages (and compare to ``expect``)."""
    fd, tau, length, ref = build_model(cfg)
    fdmod.check_hyperbolic(fd)
    print(f"config ok: {cfgmod.SCHEMA}; regime {ref.regime.value}; "
          f"lambda1={ref.lambda1:.6g} m/s lambda2={ref.lambda2:.6g} m/s")
    data = cfg["data"]
    if not data["trajectories"]:
        return EXIT_OK
    traj = ingest.read_trajectory_csv(data["trajectories"], data["resolution"])
    agg = ingest.edie_aggregate(traj, data["n_time_cells"], data["n_space_cells"], data["domain"])
    avg, q_direct = ingest.dataset_averages(agg, fd, return_direct_flow=True)
    got = (avg.rho_star * 1000.0, avg.v_star * 3.6, avg.q_star * 3600.0)
    print(f"averages: rho={got[0]:.6g} veh/km v={got[1]:.6g} km/h q=rho*v={got[2]:.6g} veh/h "
          f"(direct flow mean {q_direct * 3600.0:.6g} veh/h)")
    if expect is None:
        return EXIT_OK
    ok = True
    for name, g, e in zip(("rho", "v", "q"), got, expect):
        rel = abs(g - e) / abs(e)
        ok &= rel <= tol
        print(f"{name}: {g:.6g} vs expected {e:.6g} (relative {rel:.3g}) {'PASS' if rel <= tol else 'FAIL'}")
    return EXIT_OK if ok else EXIT_DATA


# -- entry point ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="arzobs", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["simulate", "observe", "aggregate", "calibrate", "gains", "validate"])
    p.add_argument("--config", help="YAML run config (defaults are used when omitted)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--units", choices=sorted(UNITS), default="traffic",
                   help="units of CSV outputs (inputs are recognised by their headers)")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--expect", default=None,
                   help="validate: expected averages 'rho_veh_per_km,v_km_per_h,q_veh_per_h'")
    p.add_argument("--tolerance", type=float, default=0.02, help="validate: relative tolerance")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.resolve({"schema": cfgmod.SCHEMA})
        if args.seed is not None:
            cfg["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        cfgmod.dump(cfg, os.path.join(args.out, "resolved_config.yaml"))
        cmd = args.command
        if cmd == "calibrate":
            cmd_calibrate(cfg, args.out, args.units, cfg["seed"])
        elif cmd == "validate":
            expect = None
            if args.expect:
                try:
                    expect = tuple(float(s) for s in args.expect.split(","))
                except ValueError:
                    expect = ()
                if len(expect) != 3 or not all(math.isfinite(e) and e != 0 for e in expect):
                    raise ConfigError("--expect: need three non-zero numbers 'rho,v,q'")
            return cmd_validate(cfg, args.out, args.units, expect, args.tolerance)
        else:
            {"simulate": cmd_simulate, "observe": cmd_observe, "aggregate": cmd_aggregate,
             "gains": cmd_gains}[cmd](cfg, args.out, args.units)
    except (ConfigError, RegimeError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CalibrationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
