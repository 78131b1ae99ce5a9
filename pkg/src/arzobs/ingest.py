"""Vehicle trajectories to macroscopic fields (Edie's definitions).

Trajectories are treated as piecewise linear between samples. Each segment is
clipped exactly against the space-time cells, so a cell receives the time spent
and distance travelled inside it:

    rho_ij = sum_k t_k / (dx dt),   q_ij = sum_k x_k / (dx dt),   v_ij = q_ij / rho_ij
"""
from dataclasses import dataclass
import logging

import numpy as np
import pandas as pd

from . import kernels
from .errors import DataError
from .linearize import characteristic_speeds, ReferenceState
from .observer import BoundaryMeasurements

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("vehicle_id", "time_s", "position_m")
AGGREGATE_COLUMNS = ("t_index", "x_index", "t_center_s", "x_center_m",
                     "rho_veh_per_km", "flow_veh_per_h", "v_km_per_h", "n_traces")
DATA_MAX_GAP = 30.0


@dataclass
class TrajectoryDataset:
    """Samples (vehicle_id, t, x), sorted by vehicle and then time."""

    vehicle_id: np.ndarray
    t: np.ndarray
    x: np.ndarray
    resolution: float = 0.1

    def __post_init__(self):
        self.vehicle_id = np.asarray(self.vehicle_id)
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if not (self.vehicle_id.shape == self.t.shape == self.x.shape):
            raise DataError("trajectory columns have different lengths")
        if self.resolution <= 0:
            raise DataError("sampling resolution must be positive")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.x))):
            raise DataError("trajectory contains non-finite samples")
        order = np.lexsort((self.t, self.vehicle_id))
        self.vehicle_id, self.t, self.x = self.vehicle_id[order], self.t[order], self.x[order]
        same = self.vehicle_id[1:] == self.vehicle_id[:-1]
        if np.any(same & (np.diff(self.t) == 0)):
            raise DataError("duplicate time stamps within a vehicle trajectory")

    def __len__(self):
        return self.t.shape[0]

    @property
    def num_vehicles(self):
        return np.unique(self.vehicle_id).shape[0]

    def extent(self):
        return float(self.t.min()), float(self.t.max()), float(self.x.min()), float(self.x.max())

    def segments(self):
        """Consecutive-sample segments (ta, xa, tb, xb, vehicle_code)."""
        _, codes = np.unique(self.vehicle_id, return_inverse=True)
        same = codes[1:] == codes[:-1]
        ia = np.flatnonzero(same)
        return (self.t[ia], self.x[ia], self.t[ia + 1], self.x[ia + 1],
                codes[ia].astype(np.int64))

    def time_in_box(self, t0, t1, x0, x1):
        """Total vehicle-seconds inside the box, by direct clipping."""
        ta, xa, tb, xb, _ = self.segments()
        clip = getattr(kernels._clip_to_box, "py_func", kernels._clip_to_box)
        total = 0.0
        for s in range(ta.shape[0]):
            u0, u1 = clip(ta[s], xa[s], tb[s], xb[s], t0, t1, x0, x1)
            if u1 > u0:
                total += (u1 - u0) * (tb[s] - ta[s])
        return total


def read_trajectory_csv(path, resolution=0.1):
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in TRAJECTORY_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return TrajectoryDataset(frame["vehicle_id"].to_numpy(), frame["time_s"].to_numpy(float),
                             frame["position_m"].to_numpy(float), resolution)


def write_trajectory_csv(data, path):
    pd.DataFrame({"vehicle_id": data.vehicle_id, "time_s": data.t, "position_m": data.x}).to_csv(
        path, index=False, float_format="%.17g")


@dataclass
class AggregatedGrid:
    t_edges: np.ndarray
    x_edges: np.ndarray
    time_sum: np.ndarray
    dist_sum: np.ndarray
    n_traces: np.ndarray

    @property
    def shape(self):
        return self.time_sum.shape

    @property
    def cell_area(self):
        return np.diff(self.t_edges)[:, None] * np.diff(self.x_edges)[None, :]

    @property
    def t_centers(self):
        return 0.5 * (self.t_edges[1:] + self.t_edges[:-1])

    @property
    def x_centers(self):
        return 0.5 * (self.x_edges[1:] + self.x_edges[:-1])

    @property
    def empty(self):
        return self.n_traces == 0

    @property
    def rho(self):
        return np.where(self.empty, np.nan, self.time_sum / self.cell_area)

    @property
    def q(self):
        return np.where(self.empty, np.nan, self.dist_sum / self.cell_area)

    @property
    def v(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.empty | (self.time_sum <= 0), np.nan, self.dist_sum / self.time_sum)

    def coarsen(self, ft, fx):
        """Merge ft x fx blocks of cells by summing the Edie totals.

        Trace counts are summed too, which over-counts vehicles seen in several
        merged cells; emptiness is still exact.
        """
        nt, nx = self.shape
        if nt % ft or nx % fx:
            raise ValueError(f"grid {self.shape} is not divisible by ({ft}, {fx})")

        def merge(a):
            return a.reshape(nt // ft, ft, nx // fx, fx).sum(axis=(1, 3))

        return AggregatedGrid(self.t_edges[::ft], self.x_edges[::fx], merge(self.time_sum),
                              merge(self.dist_sum), merge(self.n_traces))


def edie_aggregate(data, n_time_cells=41, n_space_cells=41, domain=None):
    """Aggregate ``data`` on an n_time x n_space grid over ``domain``.

    ``domain`` is (t0, t1, x0, x1); the default is the data extent. Anything
    outside the domain is cropped.
    """
    if len(data) == 0:
        raise DataError("trajectory dataset is empty")
    t0, t1, x0, x1 = data.extent() if domain is None else map(float, domain)
    if not (t1 > t0 and x1 > x0):
        raise DataError(f"degenerate aggregation domain {(t0, t1, x0, x1)}")
    ta, xa, tb, xb, veh = data.segments()
    if ta.shape[0] == 0:
        raise DataError("no trajectory has two samples")
    tsum, dsum, ntr = kernels.edie_accumulate(ta, xa, tb, xb, veh, t0, t1, x0, x1,
                                              int(n_time_cells), int(n_space_cells))
    return AggregatedGrid(np.linspace(t0, t1, n_time_cells + 1), np.linspace(x0, x1, n_space_cells + 1),
                          tsum, dsum, ntr)


def dataset_averages(agg, fd, return_direct_flow=False):
    """Reference state from the mean density and mean speed of non-empty cells.

    q* is recomputed as rho* v*; the plain average of q_ij is only logged (and
    returned when ``return_direct_flow``).
    """
    full = ~agg.empty
    if not np.any(full):
        raise DataError("aggregated grid has no non-empty cells")
    rho_star = float(np.mean(agg.rho[full]))
    v_star = float(np.mean(agg.v[full]))
    q_direct = float(np.mean(agg.q[full]))
    q_star = rho_star * v_star
    log.info("dataset averages: rho*=%.6g veh/m v*=%.6g m/s q*=rho*v*=%.6g veh/s "
             "(direct flow mean %.6g, relative gap %.3g)", rho_star, v_star, q_star, q_direct,
             (q_direct - q_star) / q_star if q_star else np.nan)
    lam1, lam2 = characteristic_speeds(rho_star, v_star, fd)
    ref = ReferenceState(rho_star, v_star, q_star, lam1, lam2)
    return (ref, q_direct) if return_direct_flow else ref


def _fill_column(times, values, max_gap, name):
    ok = np.isfinite(values)
    if not np.any(ok):
        raise DataError(f"{name}: boundary column has no data")
    gaps = []
    if not np.all(ok):
        known = np.flatnonzero(ok)
        for k in np.flatnonzero(~ok):
            before, after = known[known < k], known[known > k]
            if before.size == 0 or after.size == 0:
                raise DataError(f"{name}: no data at the edge of the record around t={times[k]:.6g} s")
            ta, tb = times[before[-1]], times[after[0]]
            if tb - ta > max_gap:
                raise DataError(f"{name}: gap from {ta:.6g} s to {tb:.6g} s exceeds max gap {max_gap} s")
            gaps.append((name, float(times[k]), float(ta), float(tb)))
        values = np.interp(times, times[ok], values[ok])
    return values, gaps


def boundary_series(agg, max_gap=DATA_MAX_GAP):
    """(BoundaryMeasurements, gap report) from the first and last space columns.

    Empty boundary cells are filled by linear interpolation in time when the
    surrounding gap is at most ``max_gap``; each fill is listed in the report as
    (column, t, t_before, t_after).
    """
    times = agg.t_centers
    q_in, g1 = _fill_column(times, agg.q[:, 0], max_gap, "q_in")
    q_out, g2 = _fill_column(times, agg.q[:, -1], max_gap, "q_out")
    v_out, g3 = _fill_column(times, agg.v[:, -1], max_gap, "v_out")
    return BoundaryMeasurements(times, q_in, q_out, v_out, max_gap=max_gap), g1 + g2 + g3


def write_aggregate_csv(agg, path):
    nt, nx = agg.shape
    ti, xi = np.meshgrid(np.arange(nt), np.arange(nx), indexing="ij")
    frame = pd.DataFrame({
        "t_index": ti.ravel(), "x_index": xi.ravel(),
        "t_center_s": np.repeat(agg.t_centers, nx), "x_center_m": np.tile(agg.x_centers, nt),
        "rho_veh_per_km": (agg.rho * 1000.0).ravel(), "flow_veh_per_h": (agg.q * 3600.0).ravel(),
        "v_km_per_h": (agg.v * 3.6).ravel(), "n_traces": agg.n_traces.ravel()})
    frame.to_csv(path, index=False, float_format="%.17g", na_rep="nan")


# -- synthetic fleets ------------------------------------------------------

def velocity_sampler(run):
    """speed(t, x) from a plant run: linear in time between frames and in x
    between cell centres, constant beyond the first/last centre."""
    times, xc, vel = run.times, run.x, run.v

    def speed(t, x):
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        u = np.clip((t - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0)
        return (1 - u) * np.interp(x, xc, vel[k]) + u * np.interp(x, xc, vel[k + 1])

    return speed


def synthesize_trajectories(run, sample_dt=0.1, offset=0.5):
    """Fleet of point vehicles following the plant velocity field.

    Initial vehicles sit where the cumulative initial density crosses
    ``k + offset``; new vehicles enter at x = 0 when the cumulative inflow does.
    Positions advance with Heun steps of ``sample_dt`` and are recorded every
    step until one sample past the outlet.
    """
    speed = velocity_sampler(run)
    length, xc, dx = run.grid.length, run.x, run.grid.dx
    t_end = float(run.times[-1])
    edges = np.concatenate(([0.0], np.cumsum(run.rho[0] * dx)))
    x_edges = np.linspace(0.0, length, len(xc) + 1)
    marks = np.arange(offset, edges[-1], 1.0)
    x_init = np.interp(marks, edges, x_edges)
    cum_in = np.concatenate(([0.0], np.cumsum(0.5 * (run.q_in[1:] + run.q_in[:-1]) * np.diff(run.step_times))))
    marks_in = np.arange(offset, cum_in[-1], 1.0)
    t_entry = np.interp(marks_in, cum_in, run.step_times)

    n_steps = int(round(t_end / sample_dt))
    pos = list(x_init)
    ids = list(range(len(x_init)))
    next_id = len(ids)
    entry_k = 0
    rec_id, rec_t, rec_x = [], [], []
    active_id = np.array(ids, dtype=np.int64)
    active_x = np.array(pos, dtype=float)
    for n in range(n_steps + 1):
        t = n * sample_dt
        # vehicles that entered during the last step start from x = 0 at their entry time
        new_ids, new_x = [], []
        while entry_k < len(t_entry) and t_entry[entry_k] <= t + 1e-12:
            te = t_entry[entry_k]
            lag = t - te
            new_ids.append(next_id)
            new_x.append(lag * float(speed(te, 0.0)))
            if lag > 0:
                rec_id.append(next_id)
                rec_t.append(te)
                rec_x.append(0.0)
            next_id += 1
            entry_k += 1
        if new_ids:
            active_id = np.concatenate((active_id, new_ids))
            active_x = np.concatenate((active_x, new_x))
        rec_id.append(active_id.copy())
        rec_t.append(np.full(active_id.shape, t))
        rec_x.append(active_x.copy())
        keep = active_x < length
        active_id, active_x = active_id[keep], active_x[keep]
        if n == n_steps:
            break
        k1 = speed(t, active_x)
        k2 = speed(min(t + sample_dt, t_end), active_x + sample_dt * k1)
        active_x = active_x + 0.5 * sample_dt * (k1 + k2)
    vid = np.concatenate([np.atleast_1d(a) for a in rec_id])
    tt = np.concatenate([np.atleast_1d(a) for a in rec_t])
    xx = np.concatenate([np.atleast_1d(a) for a in rec_x])
    return TrajectoryDataset(vid, tt, xx, sample_dt)
