"""Boundary observer for the ARZ model and a linear error-system simulator.

The observer is a copy of the nonlinear plant on the same grid. Its inlet ghost
uses the measured inflow, its outlet ghost the measured outlet speed, and the
outlet mismatch in the scaled first Riemann variable drives two injection fields
(E_w, E_v) mapped back onto density and velocity.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import kernels, solver
from .errors import CFLError, DataError, ObserverDivergenceError
from .linearize import c_of_x, injection_gains, require_congested

log = logging.getLogger(__name__)

EXPONENT_MODES = ("outlet", "local")
DEFAULT_MAX_GAP = 2.0


@dataclass
class BoundaryMeasurements:
    """Inlet flux, outlet flux and outlet speed sampled at ``times``."""

    times: np.ndarray
    q_in: np.ndarray
    q_out: np.ndarray
    v_out: np.ndarray
    max_gap: float = DEFAULT_MAX_GAP

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.q_in = np.asarray(self.q_in, dtype=float)
        self.q_out = np.asarray(self.q_out, dtype=float)
        self.v_out = np.asarray(self.v_out, dtype=float)
        n = self.times.shape[0]
        if n == 0:
            raise DataError("measurement series is empty")
        if any(a.shape != (n,) for a in (self.q_in, self.q_out, self.v_out)):
            raise DataError("measurement columns have different lengths")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise DataError("measurement times must be strictly increasing")
        for name in ("q_in", "q_out", "v_out"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite samples")
            if np.any(arr < 0):
                k = int(np.flatnonzero(arr < 0)[0])
                raise DataError(f"{name} is negative at t={self.times[k]:.6g} s")

    @classmethod
    def from_plant(cls, run, max_gap=DEFAULT_MAX_GAP):
        return cls(run.step_times, run.q_in, run.q_out, run.v_out, max_gap)

    def at(self, t, tol=1e-9):
        """Linearly interpolated (q_in, q_out, v_out) at time t.

        Within half a max gap outside the sampled range the end samples are held.
        """
        ts = self.times
        reach = 0.5 * self.max_gap
        if t < ts[0] - reach - tol or t > ts[-1] + reach + tol:
            raise DataError(f"no measurements cover t={t:.6g} s (have {ts[0]:.6g}..{ts[-1]:.6g} s)")
        if t <= ts[0]:
            return self.q_in[0], self.q_out[0], self.v_out[0]
        if t >= ts[-1]:
            return self.q_in[-1], self.q_out[-1], self.v_out[-1]
        k = int(np.searchsorted(ts, t))
        if k < len(ts) and abs(ts[k] - t) <= tol:
            return self.q_in[k], self.q_out[k], self.v_out[k]
        if k > 0 and abs(ts[k - 1] - t) <= tol:
            return self.q_in[k - 1], self.q_out[k - 1], self.v_out[k - 1]
        k = min(max(k, 1), len(ts) - 1)
        t0, t1 = ts[k - 1], ts[k]
        if t1 - t0 > self.max_gap:
            raise DataError(f"measurement gap {t0:.6g}..{t1:.6g} s exceeds max gap {self.max_gap} s")
        u = (t - t0) / (t1 - t0)
        return tuple((1 - u) * a[k - 1] + u * a[k] for a in (self.q_in, self.q_out, self.v_out))


def w_bar_at_outlet(Y_v, Y_q_out, ref, tau, length):
    """Scaled first Riemann variable at x = L from outlet speed/flux deviations."""
    scale = np.exp(length / (tau * ref.lambda1))
    return scale * (ref.rho_star * ref.lambda2 / ref.speed_gap * Y_v + Y_q_out)


def injection_terms(w_bar_L_plant, w_bar_L_estimate, gains):
    mismatch = w_bar_L_plant - w_bar_L_estimate
    return gains.r_values * mismatch, gains.s_values * mismatch


@dataclass
class ObserverState:
    estimate: solver.StateField
    gains: object
    ref: object
    t: float = 0.0
    mismatch: float = 0.0


def _outlet_ghost(est, v_out, fd):
    w_last = est.v[-1] - float(fd.V(est.rho[-1]))
    return solver.outlet_density_for_speed(v_out, w_last, fd), v_out


def observer_step(obs, meas, dt, dx, fd, tau, length, exponent="outlet",
                  v_floor=solver.V_FLOOR, step=None):
    """Advance the observer by one step using the measurement triple at obs.t.

    ``meas`` is (q_in, q_out, v_out). ``exponent`` chooses the factor applied to
    E_w in the density source: ``"outlet"`` uses exp(-L / (tau lam1)) everywhere,
    ``"local"`` uses exp(-x / (tau lam1)).
    """
    q_in, q_out, v_out = meas
    est, ref, gains = obs.estimate, obs.ref, obs.gains
    v0 = est.v[0]
    gl = (q_in / max(v0, v_floor), v0)
    gr = _outlet_ghost(est, v_out, fd)

    w_plant = w_bar_at_outlet(v_out - ref.v_star, q_out - ref.q_star, ref, tau, length)
    w_est = w_bar_at_outlet(gr[1] - ref.v_star, gr[0] * gr[1] - ref.q_star, ref, tau, length)
    e_w, e_v = injection_terms(w_plant, w_est, gains)

    cons = solver.to_conservative(est, fd)
    new, _, _ = solver._advance(cons, solver._cons_ghost(gl, fd), solver._cons_ghost(gr, fd),
                                dt, dx, tau, fd)
    t_new = obs.t + dt
    solver._check_blowup(new.rho, new.y, step, t_new, ObserverDivergenceError, "observer")
    prim = solver.to_primitive(new, fd)

    if exponent == "outlet":
        decay = np.exp(-length / (tau * ref.lambda1))
    elif exponent == "local":
        decay = np.exp(-gains.x_samples / (tau * ref.lambda1))
    else:
        raise ValueError(f"exponent mode must be one of {EXPONENT_MODES}")
    s_rho = (decay * e_w - e_v) / ref.v_star
    s_v = ref.speed_gap / ref.q_star * e_v
    rho = prim.rho + dt * s_rho
    v = prim.v + dt * s_v
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(v))) or np.any(rho <= 0):
        raise ObserverDivergenceError(
            f"observer diverged at t={t_new:.4g} s (step {step})", step=step, time=t_new)
    return ObserverState(solver.StateField(rho, v), gains, ref, t_new, float(w_plant - w_est))


@dataclass
class ObserverRun:
    grid: object
    times: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    mismatch: np.ndarray
    gains: object = None
    extra: dict = field(default_factory=dict)

    @property
    def x(self):
        return self.grid.x


def run_observer(measurements, fd, tau, ref, grid, init="setpoint", exponent="outlet",
                 gain_form="exact", output_stride=1, v_floor=solver.V_FLOOR, check_cfl=True):
    """Run the observer over ``grid`` driven by ``measurements``.

    ``init`` is ``"setpoint"`` (uniform reference) or a StateField.
    """
    require_congested(ref)
    x = grid.x
    gains = injection_gains(ref, tau, grid.length, x, form=gain_form)
    if isinstance(init, str):
        if init != "setpoint":
            raise ValueError(f"unknown init mode {init!r}")
        est = solver.uniform_state(grid.num_cells, ref.rho_star, ref.v_star)
    else:
        est = solver.StateField(init.rho, init.v)
        if est.rho.shape != x.shape:
            raise ValueError("provided initial estimate does not match the grid")
    obs = ObserverState(est, gains, ref, 0.0)
    dt, dx, n = grid.dt, grid.dx, grid.num_steps
    out_t, out_r, out_v = [0.0], [est.rho.copy()], [est.v.copy()]
    mism = np.zeros(n)
    for k in range(n):
        t = k * dt
        if check_cfl:
            smax = solver.max_speed(obs.estimate, fd)
            if smax * dt > dx * (1 + 1e-12):
                raise CFLError(f"observer CFL violated at step {k} (t={t:.4g} s)")
        obs = observer_step(obs, measurements.at(t), dt, dx, fd, tau, grid.length,
                            exponent, v_floor, step=k + 1)
        mism[k] = obs.mismatch
        if (k + 1) % output_stride == 0 or k + 1 == n:
            out_t.append((k + 1) * dt)
            out_r.append(obs.estimate.rho.copy())
            out_v.append(obs.estimate.v.copy())
    return ObserverRun(grid, np.array(out_t), np.array(out_r), np.array(out_v), mism, gains)


@dataclass
class LinearErrorRun:
    times: np.ndarray
    norms: np.ndarray
    w: np.ndarray
    v: np.ndarray
    dt: float


def simulate_linear_error_system(ic_w, ic_v, gains, ref, tau, total_time, safety=0.9, dt=None):
    """First-order upwind simulation of the linear estimation-error system.

        w_t + lam1 w_x = -r(x) w(L),          w(0) = (lam2 / lam1) v(0)
        v_t + lam2 v_x = c(x) w - s(x) w(L),  v(L) = 0

    Returns the L2 norm of (w, v) at every step. ``gains`` is a GainProfile on
    cell centres of a uniform grid over [0, L].
    """
    require_congested(ref)
    w = np.array(ic_w, dtype=float)
    v = np.array(ic_v, dtype=float)
    x = gains.x_samples
    m = x.shape[0]
    if w.shape != (m,) or v.shape != (m,):
        raise ValueError("initial conditions must match the gain samples")
    dx = gains.length / m
    l1, l2 = ref.lambda1, ref.lambda2
    cfl = max(abs(l1), abs(l2))
    if dt is None:
        dt = safety * dx / cfl
    if dt * cfl > dx * (1 + 1e-12):
        raise CFLError(f"dt={dt:.4g} s exceeds the CFL bound {dx / cfl:.4g} s")
    n = max(1, int(np.ceil(total_time / dt - 1e-12)))
    dt = total_time / n
    c = c_of_x(x, tau, l1)
    gw, gv = -gains.r_values, -gains.s_values
    a1, a2, refl = l1 * dt / dx, -l2 * dt / dx, l2 / l1
    norms = np.empty(n + 1)
    norms[0] = np.sqrt(np.sum(w * w + v * v) * dx)
    for k in range(n):
        w, v = kernels.upwind_error_step(w, v, gw, gv, c, a1, a2, refl, dt)
        norms[k + 1] = np.sqrt(np.sum(w * w + v * v) * dx)
    return LinearErrorRun(np.arange(n + 1) * dt, norms, w, v, dt)
