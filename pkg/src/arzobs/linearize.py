"""Linearisation about a reference state and the backstepping observer gains.

Coordinates used throughout (deviations from the reference are ``q~ = q - q*``
and ``v~ = v - v*``)::

    Riemann:  xi1 = rho* lam2 / (lam1 - lam2) v~ + q~,   xi2 = q* / (lam1 - lam2) v~
    scaled:   w_bar(x) = exp(x / (tau lam1)) xi1(x),     v_bar = xi2

In scaled coordinates the linear plant is

    w_bar_t + lam1 w_bar_x = 0
    v_bar_t + lam2 v_bar_x = c(x) w_bar,   c(x) = -exp(-x / (tau lam1)) / tau

and the observer adds ``r(x) (w_bar(L) - w_hat(L))`` and ``s(x) (...)`` to the
two equations.
"""
from dataclasses import dataclass
import enum

import numpy as np

from .errors import RegimeError

DEFAULT_SPEED_EPS = 1e-6


class Regime(enum.Enum):
    FREE_FLOW = "free_flow"
    CONGESTED = "congested"
    CRITICAL = "critical"


@dataclass(frozen=True)
class ReferenceState:
    rho_star: float
    v_star: float
    q_star: float
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not np.isclose(self.q_star, self.rho_star * self.v_star, rtol=1e-12, atol=0.0):
            raise ValueError(f"q* = {self.q_star} != rho* v* = {self.rho_star * self.v_star}")

    @property
    def speed_gap(self):
        return self.lambda1 - self.lambda2

    @property
    def regime(self):
        return classify_regime(self.lambda1, self.lambda2)


def characteristic_speeds(ref_density, ref_velocity, fd):
    """(lambda1, lambda2) = (v*, v* + rho* V'(rho*))."""
    lam1 = float(ref_velocity)
    lam2 = float(ref_velocity + ref_density * fd.dV(ref_density))
    return lam1, lam2


def reference_state(fd, rho_star, v_star=None):
    """Reference at ``rho_star``; ``v_star`` defaults to the equilibrium V(rho*)."""
    rho_star = float(rho_star)
    if not 0.0 < rho_star < fd.rho_m:
        raise ValueError(f"reference density {rho_star} outside (0, rho_m)")
    v_star = float(fd.V(rho_star)) if v_star is None else float(v_star)
    lam1, lam2 = characteristic_speeds(rho_star, v_star, fd)
    return ReferenceState(rho_star, v_star, rho_star * v_star, lam1, lam2)


def classify_regime(lambda1, lambda2, eps=DEFAULT_SPEED_EPS):
    if lambda1 <= 0:
        raise RegimeError(f"lambda1 must be positive, got {lambda1}")
    if lambda2 < -eps:
        return Regime.CONGESTED
    if lambda2 > eps:
        return Regime.FREE_FLOW
    return Regime.CRITICAL


def require_congested(ref, eps=DEFAULT_SPEED_EPS):
    regime = classify_regime(ref.lambda1, ref.lambda2, eps)
    if regime is not Regime.CONGESTED:
        raise RegimeError(
            f"observer needs congested traffic (lambda2 < 0); got {regime.value} with "
            f"lambda1={ref.lambda1:.6g}, lambda2={ref.lambda2:.6g}")


def c_of_x(x, tau, lambda1):
    """In-domain coupling coefficient c(x) = -exp(-x / (tau lambda1)) / tau."""
    return -np.exp(-np.asarray(x, dtype=float) / (tau * lambda1)) / tau


def convergence_time(ref, length):
    """t_f = L / |lambda1| + L / |lambda2|."""
    return length / abs(ref.lambda1) + length / abs(ref.lambda2)


# -- kernels ---------------------------------------------------------------

def kernel_m(z, ref, tau):
    """Closed-form kernel M(z) = -c(z / (lam1 - lam2)) / (lam1 - lam2)."""
    d = ref.speed_gap
    return -c_of_x(np.asarray(z, dtype=float) / d, tau, ref.lambda1) / d


def kernel_k(x, ref, tau, length):
    """Closed-form kernel K(x) = -c(-lam2 (L - x) / (lam1 - lam2)) / (lam1 - lam2)."""
    d = ref.speed_gap
    arg = -ref.lambda2 / d * (length - np.asarray(x, dtype=float))
    return -c_of_x(arg, tau, ref.lambda1) / d


def volterra_kernels(ref, tau):
    """Kernels (A, B) of the transform that maps the error system to the target.

    alpha = w - int_x^L A(x, xi) w(xi) dxi,   beta = v - int_x^L B(x, xi) w(xi) dxi

    with B(x, x) = c(x) / (lam1 - lam2), A depending on xi - x only and the
    inlet compatibility A(0, xi) = (lam2 / lam1) B(0, xi).
    """
    l1, l2, d = ref.lambda1, ref.lambda2, ref.speed_gap

    def B(x, xi):
        return c_of_x((l1 * np.asarray(x) - l2 * np.asarray(xi)) / d, tau, l1) / d

    def A(x, xi):
        return (l2 / l1) * B(0.0, np.asarray(xi) - np.asarray(x))

    return A, B


# -- gains -----------------------------------------------------------------

GAIN_FORMS = ("exact", "shifted")


@dataclass(frozen=True)
class GainProfile:
    x_samples: np.ndarray
    r_values: np.ndarray
    s_values: np.ndarray
    t_f: float
    length: float
    form: str = "exact"


def injection_gains(ref, tau, length, x_samples, form="exact", eps=DEFAULT_SPEED_EPS):
    """Output-injection gains r(x), s(x) sampled at ``x_samples``.

    ``form="exact"`` solves the kernel equations in closed form:
    r = -lam2 / ((lam1 - lam2) tau) (constant) and s(x) = lam1 c(x) / (lam1 - lam2).
    ``form="shifted"`` uses the shifted-argument expressions
    r(x) = -lam1 c(-lam2 (L - x) / d) / d, s(x) = lam1 c(x - lam2 (L - x) / d) / d.
    Both are observer gains: they multiply w_bar(L) - w_hat(L).
    """
    require_congested(ref, eps)
    x = np.asarray(x_samples, dtype=float)
    if np.any(x < 0) or np.any(x > length * (1 + 1e-12)):
        raise ValueError("gain samples must lie in [0, L]")
    l1, l2, d = ref.lambda1, ref.lambda2, ref.speed_gap
    if form == "exact":
        r = np.full_like(x, -l2 / (d * tau))
        s = l1 / d * c_of_x(x, tau, l1)
    elif form == "shifted":
        r = -l1 / d * c_of_x(-l2 / d * (length - x), tau, l1)
        s = l1 / d * c_of_x(x - l2 / d * (length - x), tau, l1)
    else:
        raise ValueError(f"gain form must be one of {GAIN_FORMS}, got {form!r}")
    return GainProfile(x, r, s, convergence_time(ref, length), float(length), form)


# -- coordinate transforms -------------------------------------------------

def to_riemann(q_dev, v_dev, ref):
    d = ref.speed_gap
    xi1 = ref.rho_star * ref.lambda2 / d * v_dev + q_dev
    xi2 = ref.q_star / d * v_dev
    return xi1, xi2


def from_riemann(xi1, xi2, ref):
    v_dev = ref.speed_gap / ref.q_star * xi2
    q_dev = xi1 - ref.lambda2 / ref.lambda1 * xi2
    return q_dev, v_dev


def scale_state(xi1, x, tau, lambda1):
    return np.exp(np.asarray(x, dtype=float) / (tau * lambda1)) * xi1


def unscale_state(w_bar, x, tau, lambda1):
    return np.exp(-np.asarray(x, dtype=float) / (tau * lambda1)) * w_bar


def deviations_to_scaled(q_dev, v_dev, x, ref, tau):
    xi1, xi2 = to_riemann(q_dev, v_dev, ref)
    return scale_state(xi1, x, tau, ref.lambda1), xi2


def scaled_to_deviations(w_bar, v_bar, x, ref, tau):
    return from_riemann(unscale_state(w_bar, x, tau, ref.lambda1), v_bar, ref)
