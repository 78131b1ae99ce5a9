"""End-to-end runs built from the modules: twin experiment, synthetic data run,
relaxation-time selection."""
from dataclasses import dataclass
import logging

import numpy as np

from . import ingest, metrics, observer, solver
from .errors import NumericalError
from .fd import GreenshieldParams
from .linearize import convergence_time as analytic_tf, reference_state

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scenario:
    fd: object
    tau: float
    length: float
    rho_star: float
    v_star: float = None

    @property
    def ref(self):
        return reference_state(self.fd, self.rho_star, self.v_star)


def base_scenario():
    """v_f = 40 m/s, rho_m = 0.16 veh/m, gamma = 1, tau = 60 s, rho* = 0.12 veh/m, L = 400 m."""
    return Scenario(GreenshieldParams(40.0, 0.16, 1.0), 60.0, 400.0, 0.12, 10.0)


def setpoint_bc(ref):
    return solver.BoundarySpec(ref.q_star, "density", ref.rho_star)


def plant_grid(ic, fd, length, num_cells, total_time, safety):
    dx = length / num_cells
    return solver.Grid.fitted(length, num_cells, total_time, solver.cfl_dt(ic, fd, dx, safety))


@dataclass
class TwinResult:
    plant: object
    estimate: object
    errors: metrics.ErrorSeries
    ref: object


def twin_experiment(sc, num_cells=41, total_time=240.0, amplitude=0.1, waves=3,
                    safety=solver.DEFAULT_SAFETY, exponent="outlet", gain_form="exact"):
    """Plant from sinusoidal ICs; observer fed the plant's boundary traces."""
    ref = sc.ref
    x = (np.arange(num_cells) + 0.5) * sc.length / num_cells
    ic = solver.sinusoidal_ic(x, ref, sc.length, amplitude, waves)
    grid = plant_grid(ic, sc.fd, sc.length, num_cells, total_time, safety)
    plant = solver.simulate_plant(ic, setpoint_bc(ref), sc.fd, sc.tau, grid)
    meas = observer.BoundaryMeasurements.from_plant(plant)
    est = observer.run_observer(meas, sc.fd, sc.tau, ref, grid, exponent=exponent, gain_form=gain_form)
    errs = metrics.l2_error_series(plant.times, grid.x, plant.rho, plant.v, est.rho, est.v, ref)
    return TwinResult(plant, est, errs, ref)


def cell_means(times, fields, t_edges):
    """Average sampled (n_t, n_x) fields over each time cell [t_i, t_{i+1}]."""
    out = np.empty((len(t_edges) - 1, fields.shape[1]))
    for i in range(len(t_edges) - 1):
        sel = (times >= t_edges[i] - 1e-9) & (times <= t_edges[i + 1] + 1e-9)
        if not np.any(sel):
            raise ValueError(f"no samples in time cell {i}")
        out[i] = fields[sel].mean(axis=0)
    return out


@dataclass
class DataRunResult:
    plant: object
    data: object
    aggregate: object
    measurements: object
    gaps: list
    ref: object
    estimate: object
    errors: metrics.ErrorSeries
    errors_vs_plant: metrics.ErrorSeries
    t_f: float


def synthetic_data_run(sc, num_cells=41, total_time=240.0, amplitude=0.3, waves=1, safety=0.6,
                       n_time_cells=41, n_space_cells=41, sample_dt=0.1, max_gap=ingest.DATA_MAX_GAP,
                       exponent="outlet"):
    """Plant -> vehicle fleet -> Edie grid -> boundary series -> observer.

    The observer sees only the boundary series and a reference taken from the
    data averages. Errors are scored against the aggregated field on the data
    grid (estimate averaged over each time cell, empty cells masked).
    """
    ref_plant = sc.ref
    x = (np.arange(num_cells) + 0.5) * sc.length / num_cells
    ic = solver.sinusoidal_ic(x, ref_plant, sc.length, amplitude, waves)
    grid = plant_grid(ic, sc.fd, sc.length, num_cells, total_time, safety)
    plant = solver.simulate_plant(ic, setpoint_bc(ref_plant), sc.fd, sc.tau, grid)
    data = ingest.synthesize_trajectories(plant, sample_dt)
    agg = ingest.edie_aggregate(data, n_time_cells, n_space_cells, (0.0, total_time, 0.0, sc.length))
    meas, gaps = ingest.boundary_series(agg, max_gap)
    ref = ingest.dataset_averages(agg, sc.fd)
    est = observer.run_observer(meas, sc.fd, sc.tau, ref, grid, exponent=exponent)
    rho_c = _resample_x(cell_means(est.times, est.rho, agg.t_edges), grid.x, agg.x_centers)
    v_c = _resample_x(cell_means(est.times, est.v, agg.t_edges), grid.x, agg.x_centers)
    errs = metrics.l2_error_series(agg.t_centers, agg.x_centers, agg.rho, agg.v, rho_c, v_c, ref,
                                   mask=~agg.empty)
    errs_plant = metrics.l2_error_series(plant.times, grid.x, plant.rho, plant.v, est.rho, est.v, ref)
    return DataRunResult(plant, data, agg, meas, gaps, ref, est, errs, errs_plant,
                         analytic_tf(ref, sc.length))


def _resample_x(fields, x_from, x_to):
    if x_from.shape == x_to.shape and np.allclose(x_from, x_to):
        return fields
    return np.array([np.interp(x_to, x_from, row) for row in fields])


# -- relaxation time ---------------------------------------------------------

def tau_misfit(tau, agg, meas, fd, num_cells=None, safety=0.6):
    """Time mean of E_rho + E_v between the data grid and a plant run that starts
    from the first data row and is driven by the measured inflow and outlet speed."""
    full = ~agg.empty
    if np.any(~full[0]):
        raise ValueError("first data row has empty cells; cannot initialise the plant")
    length = agg.x_edges[-1] - agg.x_edges[0]
    m = num_cells or agg.shape[1]
    x = (np.arange(m) + 0.5) * length / m
    xc = agg.x_centers - agg.x_edges[0]
    ic = solver.StateField(np.interp(x, xc, agg.rho[0]), np.interp(x, xc, agg.v[0]))
    t0 = agg.t_edges[0]
    total = agg.t_edges[-1] - t0
    grid = plant_grid(ic, fd, length, m, total, safety)
    bc = solver.BoundarySpec(lambda t: meas.at(t + t0)[0], "velocity", lambda t: meas.at(t + t0)[2])
    run = solver.simulate_plant(ic, bc, fd, tau, grid)
    rho_c = _resample_x(cell_means(run.times, run.rho, agg.t_edges - t0), x, xc)
    v_c = _resample_x(cell_means(run.times, run.v, agg.t_edges - t0), x, xc)
    ref = ingest.dataset_averages(agg, fd)
    errs = metrics.l2_error_series(agg.t_centers, xc, agg.rho, agg.v, rho_c, v_c, ref, mask=full)
    return float(np.nanmean(errs.e_rho + errs.e_v))


def select_tau(agg, meas, fd, tau_grid=None, **kw):
    """(best tau, {tau: misfit}) over ``tau_grid`` (default 10, 20, ..., 100 s).

    Ties resolve to the first grid entry, so the result does not depend on
    evaluation order.
    """
    taus = np.arange(10.0, 101.0, 10.0) if tau_grid is None else np.asarray(tau_grid, dtype=float)
    scores = {}
    for tau in taus:
        try:
            scores[float(tau)] = tau_misfit(float(tau), agg, meas, fd, **kw)
        except NumericalError as exc:
            log.warning("tau=%g s: plant run failed (%s)", tau, exc)
            scores[float(tau)] = np.inf
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores
