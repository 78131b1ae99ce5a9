"""Fundamental diagrams: equilibrium velocity, flow and pressure.

All quantities are SI: density in veh/m, speed in m/s, flow in veh/s.
"""
from dataclasses import dataclass
import logging

import numpy as np
from scipy import optimize

from . import kernels
from .errors import CalibrationError, DomainError, ParameterError

log = logging.getLogger(__name__)

# relative slack on the upper density bound
_RHO_TOL = 1e-12


class FundamentalDiagram:
    """Common interface. Subclasses supply V, V', Q', Q'' in closed form."""

    family = "abstract"
    rho_m = np.inf

    def V(self, rho):
        raise NotImplementedError

    def dV(self, rho):
        raise NotImplementedError

    def Q(self, rho):
        rho = np.asarray(rho, dtype=float)
        return rho * self.V(rho)

    def dQ(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.V(rho) + rho * self.dV(rho)

    def d2Q(self, rho):
        raise NotImplementedError

    def pressure(self, rho):
        return self.V(0.0) - self.V(rho)

    def V_inverse(self, speed):
        """Density at which V equals ``speed``, clamped to [0, rho_m]."""
        raise NotImplementedError

    def kernel_spec(self):
        """(family code, float64 parameter vector) for the compiled kernels."""
        raise NotImplementedError

    def as_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class GreenshieldParams(FundamentalDiagram):
    """V(rho) = v_f (1 - (rho / rho_m)^gamma); pressure v_f (rho / rho_m)^gamma."""

    v_f: float
    rho_m: float
    gamma: float = 1.0

    family = "greenshield"

    def __post_init__(self):
        for name in ("v_f", "rho_m", "gamma"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ParameterError(f"Greenshield {name} must be > 0, got {val!r}")

    @property
    def C0(self):
        return self.v_f / self.rho_m ** self.gamma

    def V(self, rho):
        return self.v_f * (1.0 - (np.asarray(rho, dtype=float) / self.rho_m) ** self.gamma)

    def dV(self, rho):
        rho = np.asarray(rho, dtype=float)
        g = self.gamma
        return -self.v_f * g * rho ** (g - 1.0) / self.rho_m ** g

    def dQ(self, rho):
        s = np.asarray(rho, dtype=float) / self.rho_m
        return self.v_f * (1.0 - (1.0 + self.gamma) * s ** self.gamma)

    def d2Q(self, rho):
        rho = np.asarray(rho, dtype=float)
        g = self.gamma
        return -self.v_f * g * (1.0 + g) * rho ** (g - 1.0) / self.rho_m ** g

    def pressure(self, rho):
        return self.v_f * (np.asarray(rho, dtype=float) / self.rho_m) ** self.gamma

    def V_inverse(self, speed):
        frac = np.clip(1.0 - np.asarray(speed, dtype=float) / self.v_f, 0.0, 1.0)
        return self.rho_m * frac ** (1.0 / self.gamma)

    def kernel_spec(self):
        return kernels.GREENSHIELD, np.array([self.v_f, self.rho_m, self.gamma])

    def as_dict(self):
        return {"family": self.family, "v_f": self.v_f, "rho_m": self.rho_m, "gamma": self.gamma}


@dataclass(frozen=True)
class ThreeParamFD(FundamentalDiagram):
    """Q(rho) = alpha (a + (b - a) s - sqrt(1 + lam^2 (s - p_shape)^2)), s = rho / rho_m.

    ``lam`` and ``p_shape`` are shape parameters (roundness and critical-density
    tuner); they are unrelated to characteristic speeds or traffic pressure.
    """

    lam: float
    p_shape: float
    alpha: float
    rho_m: float

    family = "three_param"

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ParameterError(f"three-param lam must be > 0, got {self.lam!r}")
        if not (0.0 < self.p_shape < 1.0):
            raise ParameterError(f"three-param p_shape must be in (0, 1), got {self.p_shape!r}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ParameterError(f"three-param alpha must be > 0, got {self.alpha!r}")
        if not (np.isfinite(self.rho_m) and self.rho_m > 0):
            raise ParameterError(f"three-param rho_m must be > 0, got {self.rho_m!r}")

    @property
    def a(self):
        return float(np.sqrt(1.0 + (self.lam * self.p_shape) ** 2))

    @property
    def b(self):
        return float(np.sqrt(1.0 + (self.lam * (1.0 - self.p_shape)) ** 2))

    def _root(self, s):
        return np.sqrt(1.0 + (self.lam * (s - self.p_shape)) ** 2)

    def Q(self, rho):
        s = np.asarray(rho, dtype=float) / self.rho_m
        a, b = self.a, self.b
        return self.alpha * (a + (b - a) * s - self._root(s))

    def dQ(self, rho):
        s = np.asarray(rho, dtype=float) / self.rho_m
        lam2 = self.lam ** 2
        return self.alpha / self.rho_m * ((self.b - self.a) - lam2 * (s - self.p_shape) / self._root(s))

    def d2Q(self, rho):
        s = np.asarray(rho, dtype=float) / self.rho_m
        return -self.alpha * self.lam ** 2 / (self.rho_m ** 2 * self._root(s) ** 3)

    @property
    def v0(self):
        """Free-flow speed: V(0) = Q'(0)."""
        return float(self.dQ(0.0))

    def V(self, rho):
        rho = np.asarray(rho, dtype=float)
        small = rho / self.rho_m < kernels._SMALL_S
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.Q(rho) / rho
        return np.where(small, self.v0, out)

    def dV(self, rho):
        rho = np.asarray(rho, dtype=float)
        small = rho / self.rho_m < kernels._SMALL_S
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (rho * self.dQ(rho) - self.Q(rho)) / rho ** 2
        return np.where(small, 0.5 * self.d2Q(0.0), out)

    def V_inverse(self, speed):
        speed = np.atleast_1d(np.asarray(speed, dtype=float))
        out = np.empty_like(speed)
        vmin, vmax = float(self.V(self.rho_m)), self.v0
        for k, u in enumerate(speed):
            if u >= vmax:
                out[k] = 0.0
            elif u <= vmin:
                out[k] = self.rho_m
            else:
                out[k] = optimize.brentq(lambda r: float(self.V(r)) - u, 0.0, self.rho_m, xtol=1e-15)
        return out if out.size > 1 else out[0]

    def kernel_spec(self):
        return kernels.THREE_PARAM, np.array(
            [self.lam, self.p_shape, self.alpha, self.rho_m, self.a, self.b, self.v0])

    def as_dict(self):
        return {"family": self.family, "lam": self.lam, "p_shape": self.p_shape,
                "alpha": self.alpha, "rho_m": self.rho_m}


@dataclass(frozen=True)
class UniformSpeed(FundamentalDiagram):
    """Constant equilibrium speed. Only for verifying the transport scheme."""

    speed: float

    family = "uniform"

    def V(self, rho):
        return np.full_like(np.asarray(rho, dtype=float), self.speed)

    def dV(self, rho):
        return np.zeros_like(np.asarray(rho, dtype=float))

    def d2Q(self, rho):
        return np.zeros_like(np.asarray(rho, dtype=float))

    def V_inverse(self, speed):
        raise DomainError("uniform-speed diagram is not invertible")

    def kernel_spec(self):
        return kernels.UNIFORM, np.array([self.speed])

    def as_dict(self):
        return {"family": self.family, "speed": self.speed}


def from_dict(d):
    """Build a diagram from a plain mapping with a ``family`` key."""
    d = dict(d)
    family = d.pop("family", None)
    if family == "greenshield":
        return GreenshieldParams(**d)
    if family == "three_param":
        return ThreeParamFD(**d)
    raise ParameterError(f"unknown fundamental-diagram family {family!r}")


def _check_range(fd, rho, allow_zero=True):
    rho = np.asarray(rho, dtype=float)
    hi = fd.rho_m * (1.0 + _RHO_TOL)
    bad = (rho < 0) | (rho > hi) | ~np.isfinite(rho)
    if not allow_zero:
        bad |= rho == 0
    if np.any(bad):
        raise DomainError(f"density outside [0, rho_m={fd.rho_m}]: {rho[bad].ravel()[:3]}")
    return rho


def equilibrium_velocity(fd, rho):
    """V(rho). Zero density is only admitted for the Greenshield family."""
    rho = _check_range(fd, rho, allow_zero=isinstance(fd, GreenshieldParams))
    return fd.V(rho)


def pressure(fd, rho):
    """Traffic pressure p(rho) = V(0) - V(rho)."""
    return fd.pressure(_check_range(fd, rho))


def equilibrium_flow(fd, rho):
    """Q(rho) = rho V(rho)."""
    return fd.Q(_check_range(fd, rho))


def check_hyperbolic(fd, n=10_000):
    """Verify V' < 0 and Q'' < 0 on an interior sample grid; raise if not."""
    grid = np.linspace(0.0, fd.rho_m, n + 2)[1:-1]
    dv = fd.dV(grid)
    d2q = fd.d2Q(grid)
    if not np.all(dv < 0):
        raise CalibrationError(f"V' >= 0 somewhere on (0, rho_m) for {fd}")
    if not np.all(d2q < 0):
        raise CalibrationError(f"Q'' >= 0 somewhere on (0, rho_m) for {fd}")
    return True


def critical_density(fd, xtol=None):
    """Density where Q'(rho) = 0, located by bisection on (0, rho_m)."""
    lo, hi = 0.0, fd.rho_m
    flo, fhi = float(fd.dQ(lo)), float(fd.dQ(hi))
    if not (flo > 0 > fhi):
        raise CalibrationError(
            f"Q' has no sign change on (0, rho_m): Q'(0)={flo:.4g}, Q'(rho_m)={fhi:.4g}")
    xtol = xtol if xtol is not None else 1e-14 * fd.rho_m
    return optimize.bisect(lambda r: float(fd.dQ(r)), lo, hi, xtol=xtol, maxiter=500)


def prescribe_rho_m(num_lanes, vehicle_length, safety_factor):
    """Jam density from lane count and bumper-to-bumper spacing.

    ``safety_factor`` is the extra headway as a fraction of vehicle length, so
    each vehicle occupies ``vehicle_length * (1 + safety_factor)`` metres.
    """
    if num_lanes <= 0 or vehicle_length <= 0 or safety_factor < 0:
        raise ParameterError("num_lanes and vehicle_length must be > 0, safety_factor >= 0")
    return num_lanes / (vehicle_length * (1.0 + safety_factor))


@dataclass
class CalibrationResult:
    fd: ThreeParamFD
    residual: float
    rms: float
    n_points: int
    converged: bool
    starts: int


# search box for the three-parameter fit
_LAM_BOUNDS = (1e-3, 1e3)
_P_BOUNDS = (1e-4, 1.0 - 1e-4)


def _unpack(z, rho_m):
    lam = float(np.exp(np.clip(z[0], *np.log(_LAM_BOUNDS))))
    p = float(np.clip(z[1], *_P_BOUNDS))
    alpha = float(np.exp(np.clip(z[2], -30.0, 30.0)))
    return lam, p, alpha


def calibrate_three_param(scatter, rho_m, seed=0, n_starts=8, tol=1e-14):
    """Least-squares fit of (lam, p_shape, alpha) to (density, flow) pairs.

    Nelder-Mead in (log lam, p_shape, log alpha) with clamping to the search
    box, restarted from ``n_starts`` seeded points; the best result is polished
    by repeated restarts until the objective stops improving.
    """
    pts = np.asarray(scatter, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 10 or pts.shape[1] != 2:
        raise CalibrationError(f"need at least 10 (density, flow) points, got shape {pts.shape}")
    rho, q = pts[:, 0], pts[:, 1]
    if np.any(rho < 0) or np.any(rho > rho_m * (1 + _RHO_TOL)):
        raise CalibrationError("scatter densities must lie in [0, rho_m]")
    qscale = max(float(np.max(np.abs(q))), 1e-300)

    def objective(z):
        lam, p, alpha = _unpack(z, rho_m)
        s = rho / rho_m
        a = np.sqrt(1.0 + (lam * p) ** 2)
        b = np.sqrt(1.0 + (lam * (1.0 - p)) ** 2)
        model = alpha * (a + (b - a) * s - np.sqrt(1.0 + (lam * (s - p)) ** 2))
        return float(np.sum(((model - q) / qscale) ** 2))

    rng = np.random.default_rng(seed)
    starts = [np.array([np.log(10.0), 0.25, np.log(qscale / 2.0)])]
    for _ in range(n_starts - 1):
        starts.append(np.array([rng.uniform(np.log(0.5), np.log(200.0)),
                                rng.uniform(0.05, 0.6),
                                np.log(qscale) + rng.uniform(-3.0, 1.0)]))
    opts = {"xatol": 1e-13, "fatol": tol, "maxiter": 40_000, "maxfev": 80_000}
    best = None
    for z0 in starts:
        res = optimize.minimize(objective, z0, method="Nelder-Mead", options=opts)
        if best is None or res.fun < best.fun:
            best = res
    # polish: restart the simplex at the incumbent until a restart stops paying off.
    # A clamped optimum leaves a flat direction in which the simplex never shrinks,
    # so "no further gain" is the convergence test rather than the simplex size.
    converged = False
    for _ in range(20):
        res = optimize.minimize(objective, best.x, method="Nelder-Mead", options=opts)
        gain = best.fun - res.fun
        if res.fun < best.fun:
            best = res
        if gain <= tol * max(best.fun, 1e-300) or best.fun <= tol:
            converged = True
            break

    lam, p, alpha = _unpack(best.x, rho_m)
    residual = best.fun * qscale ** 2
    try:
        fd = ThreeParamFD(lam=lam, p_shape=p, alpha=alpha, rho_m=rho_m)
        check_hyperbolic(fd)
    except Exception as exc:  # parameter or hyperbolicity failure
        raise CalibrationError(f"fit rejected: {exc}", best=(lam, p, alpha), residual=residual) from exc
    if not converged:
        raise CalibrationError(f"Nelder-Mead kept improving after 20 restarts: {best.message}",
                               best=fd, residual=residual)
    log.info("three-param fit lam=%.6g p=%.6g alpha=%.6g residual=%.3g", lam, p, alpha, residual)
    return CalibrationResult(fd=fd, residual=residual, rms=float(np.sqrt(residual / len(q))),
                             n_points=len(q), converged=converged, starts=len(starts))
