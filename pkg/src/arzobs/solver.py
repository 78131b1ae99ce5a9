"""Finite-volume ARZ engine: two-stage Lax-Wendroff on (rho, y) with ghost cells.

Conservative form::

    rho_t + (rho v)_x = 0
    y_t + (y v)_x = -y / tau,        y = rho (v - V(rho))

Cells are cell-centred on [0, L]; one ghost cell on each side carries the
boundary data.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .errors import BlowUpError, CFLError, DegenerateStateError, DomainError

# relative slack above rho_m before a state counts as inadmissible
RHO_SLACK = 1e-6
DEFAULT_SAFETY = 0.9
V_FLOOR = 0.1


@dataclass(frozen=True)
class Grid:
    length: float
    num_cells: int
    dt: float
    num_steps: int

    def __post_init__(self):
        if self.length <= 0 or self.num_cells < 2:
            raise ValueError("grid needs length > 0 and at least two cells")
        if self.dt <= 0 or self.num_steps < 0:
            raise ValueError("grid needs dt > 0 and num_steps >= 0")

    @property
    def dx(self):
        return self.length / self.num_cells

    @property
    def total_time(self):
        return self.dt * self.num_steps

    @property
    def x(self):
        return (np.arange(self.num_cells) + 0.5) * self.dx

    @classmethod
    def fitted(cls, length, num_cells, total_time, dt_max):
        """Grid whose dt is the largest value <= dt_max that divides total_time."""
        n = max(1, math.ceil(total_time / dt_max - 1e-12))
        return cls(float(length), int(num_cells), total_time / n, n)


@dataclass
class StateField:
    rho: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.rho.shape != self.v.shape:
            raise ValueError("rho and v must have the same shape")

    def copy(self):
        return StateField(self.rho.copy(), self.v.copy())

    def validate(self, fd):
        if not (np.all(np.isfinite(self.rho)) and np.all(np.isfinite(self.v))):
            raise DegenerateStateError("state contains non-finite values")
        if np.any(self.rho <= 0):
            raise DegenerateStateError(f"non-positive density at cells {np.flatnonzero(self.rho <= 0)[:5]}")
        if np.any(self.rho > fd.rho_m * (1 + RHO_SLACK)):
            raise DegenerateStateError("density above rho_m")
        if np.any(self.v < 0):
            raise DegenerateStateError(f"negative velocity at cells {np.flatnonzero(self.v < 0)[:5]}")
        return self

    @property
    def q(self):
        return self.rho * self.v


@dataclass
class ConservativeField:
    rho: np.ndarray
    y: np.ndarray


def uniform_state(num_cells, rho, v):
    return StateField(np.full(num_cells, float(rho)), np.full(num_cells, float(v)))


def sinusoidal_ic(x, ref, length, amplitude=0.1, waves=3):
    """rho* (1 + a sin(k pi x / L)), v* (1 - a sin(k pi x / L))."""
    bump = amplitude * np.sin(waves * np.pi * np.asarray(x) / length)
    return StateField(ref.rho_star * (1.0 + bump), ref.v_star * (1.0 - bump))


def to_conservative(state, fd):
    if np.any(state.rho <= 0):
        raise DegenerateStateError("to_conservative needs positive density everywhere")
    return ConservativeField(state.rho.copy(), state.rho * (state.v - fd.V(state.rho)))


def to_primitive(cons, fd):
    if np.any(cons.rho <= 0):
        raise DegenerateStateError("to_primitive needs positive density everywhere")
    return StateField(cons.rho.copy(), cons.y / cons.rho + fd.V(cons.rho))


def numerical_flux(rho, y, fd):
    """(F_rho, F_y) = (y + rho V, y^2 / rho + y V)."""
    rho = np.asarray(rho, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(rho <= 0):
        raise DegenerateStateError("flux needs positive density")
    vv = fd.V(rho)
    return y + rho * vv, y * y / rho + y * vv


def local_speeds(rho, v, fd):
    """Characteristic speeds (v, v + rho V'(rho)) cellwise."""
    return v, v + rho * fd.dV(rho)


def max_speed(state, fd):
    l1, l2 = local_speeds(state.rho, state.v, fd)
    return float(np.max(np.maximum(np.abs(l1), np.abs(l2))))


def cfl_dt(state, fd, dx, safety=DEFAULT_SAFETY):
    smax = max_speed(state, fd)
    if not smax > 0:
        raise CFLError("maximum characteristic speed is zero; CFL time step undefined")
    return safety * dx / smax


def _advance(cons, ghost_left, ghost_right, dt, dx, tau, fd):
    rho = np.concatenate(([ghost_left[0]], cons.rho, [ghost_right[0]]))
    y = np.concatenate(([ghost_left[1]], cons.y, [ghost_right[1]]))
    if np.any(rho <= 0):
        raise DegenerateStateError("Lax-Wendroff step needs positive density including ghosts")
    fam, prm = fd.kernel_spec()
    inv_tau = 0.0 if not np.isfinite(tau) else 1.0 / tau
    rn, yn, f_in, f_out = kernels.lax_wendroff(rho, y, float(dt), float(dx), inv_tau, fam, prm)
    return ConservativeField(rn, yn), float(f_in), float(f_out)


def lax_wendroff_step(cons, ghost_left, ghost_right, dt, dx, tau, fd, step=None):
    """One two-stage Lax-Wendroff update with the relaxation source.

    ``ghost_left``/``ghost_right`` are (rho, y) pairs. ``tau=inf`` switches the
    source off.
    """
    out, _, _ = _advance(cons, ghost_left, ghost_right, dt, dx, tau, fd)
    _check_blowup(out.rho, out.y, step, None)
    return out


def _check_blowup(rho, y, step, t, cls=BlowUpError, what="plant"):
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(y))) or np.any(rho <= 0):
        where = f" at step {step}" if step is not None else ""
        when = f" (t={t:.4g} s)" if t is not None else ""
        raise cls(f"{what} blow-up{where}{when}: NaN or non-positive density", step=step, time=t)


@dataclass(frozen=True)
class BoundarySpec:
    """Inlet: prescribed flux. Outlet: prescribed density, velocity, or free.

    Values are constants or callables of time. The complementary ghost variable
    is the outgoing Riemann invariant, copied from the adjacent interior cell:
    v at the inlet, v - V(rho) at the outlet.
    """

    inlet_flux: object
    outlet_kind: str = "density"
    outlet_value: object = None
    v_floor: float = V_FLOOR

    def __post_init__(self):
        if self.outlet_kind not in ("density", "velocity", "free"):
            raise ValueError(f"unknown outlet kind {self.outlet_kind!r}")
        if self.outlet_kind != "free" and self.outlet_value is None:
            raise ValueError(f"outlet kind {self.outlet_kind!r} needs a value")

    @staticmethod
    def _at(val, t):
        return float(val(t)) if callable(val) else float(val)

    def ghosts(self, state, t, fd):
        """Primitive ghost states ((rho_l, v_l), (rho_r, v_r)) at time t."""
        v_l = state.v[0]
        rho_l = self._at(self.inlet_flux, t) / max(v_l, self.v_floor)
        w_last = state.v[-1] - float(fd.V(state.rho[-1]))
        if self.outlet_kind == "density":
            rho_r = self._at(self.outlet_value, t)
            v_r = w_last + float(fd.V(rho_r))
        elif self.outlet_kind == "velocity":
            v_r = self._at(self.outlet_value, t)
            rho_r = outlet_density_for_speed(v_r, w_last, fd)
        else:
            rho_r, v_r = state.rho[-1], state.v[-1]
        return (rho_l, v_l), (rho_r, v_r)


def outlet_density_for_speed(v_out, w_last, fd):
    """Ghost density matching a prescribed outlet speed with the extrapolated v - V."""
    rho = float(fd.V_inverse(v_out - w_last))
    return min(max(rho, 1e-6 * fd.rho_m), fd.rho_m)


def _cons_ghost(prim, fd):
    rho, v = prim
    return rho, rho * (v - float(fd.V(rho)))


@dataclass
class PlantRun:
    """Sampled plant trajectory plus per-step boundary traces."""

    grid: Grid
    times: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    step_times: np.ndarray
    q_in: np.ndarray
    q_out: np.ndarray
    v_out: np.ndarray
    mass_in: float = 0.0
    mass_out: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def x(self):
        return self.grid.x

    def state_at(self, k):
        return StateField(self.rho[k].copy(), self.v[k].copy())


def simulate_plant(ic, bc, fd, tau, grid, output_stride=1, check_cfl=True):
    """Integrate the ARZ plant from ``ic`` over ``grid``.

    Boundary traces are the ghost (boundary) states: q_in is the prescribed inlet
    flux, q_out and v_out are flux and speed of the outlet ghost state. They are
    recorded at every step, including t = 0 and t = T.
    """
    ic = StateField(ic.rho, ic.v).validate(fd)
    if ic.rho.shape[0] != grid.num_cells:
        raise ValueError("initial condition does not match the grid")
    dt, dx, n = grid.dt, grid.dx, grid.num_steps
    cons = to_conservative(ic, fd)
    state = ic.copy()
    out_t, out_r, out_v = [0.0], [state.rho.copy()], [state.v.copy()]
    st = np.empty(n + 1)
    qi, qo, vo = np.empty(n + 1), np.empty(n + 1), np.empty(n + 1)
    m_in = m_out = 0.0
    for k in range(n + 1):
        t = k * dt
        gl, gr = bc.ghosts(state, t, fd)
        st[k], qi[k], qo[k], vo[k] = t, gl[0] * gl[1], gr[0] * gr[1], gr[1]
        if k == n:
            break
        if check_cfl:
            smax = max_speed(state, fd)
            if smax * dt > dx * (1 + 1e-12):
                raise CFLError(f"CFL violated at step {k} (t={t:.4g} s): "
                               f"max speed {smax:.4g} m/s > dx/dt = {dx / dt:.4g} m/s")
        cons, f_in, f_out = _advance(cons, _cons_ghost(gl, fd), _cons_ghost(gr, fd), dt, dx, tau, fd)
        _check_blowup(cons.rho, cons.y, k + 1, t + dt)
        m_in += dt * f_in
        m_out += dt * f_out
        state = to_primitive(cons, fd)
        if (k + 1) % output_stride == 0 or k + 1 == n:
            out_t.append((k + 1) * dt)
            out_r.append(state.rho.copy())
            out_v.append(state.v.copy())
    return PlantRun(grid, np.array(out_t), np.array(out_r), np.array(out_v),
                    st, qi, qo, vo, m_in, m_out)


def vehicle_exit_time(run, x0=0.0, t0=0.0, h=0.05):
    """Time a vehicle starting at (t0, x0) takes to leave [0, L] (Heun integration)."""
    from .ingest import velocity_sampler

    speed = velocity_sampler(run)
    t, x = t0, x0
    t_end = run.times[-1]
    while x < run.grid.length:
        if t >= t_end:
            return None
        k1 = speed(t, x)
        k2 = speed(t + h, x + h * k1)
        x_new = x + 0.5 * h * (k1 + k2)
        if x_new >= run.grid.length:
            # linear interpolation inside the last step
            return t + h * (run.grid.length - x) / (x_new - x)
        t, x = t + h, x_new
    return t
