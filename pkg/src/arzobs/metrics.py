"""Normalised L2 estimation errors and convergence-time detection."""
from dataclasses import dataclass

import numpy as np


@dataclass
class ErrorSeries:
    times: np.ndarray
    e_rho: np.ndarray
    e_v: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.e_rho = np.asarray(self.e_rho, dtype=float)
        self.e_v = np.asarray(self.e_v, dtype=float)
        if not (self.times.shape == self.e_rho.shape == self.e_v.shape):
            raise ValueError("error series columns must have equal length")

    @property
    def combined(self):
        return np.maximum(self.e_rho, self.e_v)

    def final(self):
        return float(self.e_rho[-1]), float(self.e_v[-1])


def _trapezoid_weights(x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return np.ones_like(x)
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _masked_rms(diff, x, mask):
    """sqrt( int diff^2 dx / covered length ) along the last axis."""
    w = _trapezoid_weights(x)
    if mask is None:
        wm = np.broadcast_to(w, diff.shape)
    else:
        wm = np.where(mask, w, 0.0)
    covered = wm.sum(axis=-1)
    num = (np.nan_to_num(diff) ** 2 * wm).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.sqrt(np.where(covered > 0, num / covered, np.nan))


def l2_error_series(times, x, rho_true, v_true, rho_est, v_est, ref, mask=None):
    """E_rho(t), E_v(t): L2 norms of (truth - estimate) / setpoint over x.

    Fields are (n_times, n_x) arrays on a shared grid. ``mask`` (same shape, True
    where truth exists) drops empty cells from the quadrature; the integral is
    then divided by the covered length instead of the full length.
    """
    arrs = [np.atleast_2d(np.asarray(a, dtype=float)) for a in (rho_true, v_true, rho_est, v_est)]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValueError(f"field shapes differ: {[a.shape for a in arrs]}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    x = np.asarray(x, dtype=float)
    if times.shape[0] != shape[0] or x.shape[0] != shape[1]:
        raise ValueError("times/x do not match the field grid")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), shape)
    e_rho = _masked_rms((arrs[0] - arrs[2]) / ref.rho_star, x, mask)
    e_v = _masked_rms((arrs[1] - arrs[3]) / ref.v_star, x, mask)
    return ErrorSeries(times, e_rho, e_v)


def convergence_time(series, threshold, which="both"):
    """Time after which the error stays at or below ``threshold``.

    The crossing is interpolated linearly between the last sample above the
    threshold and the next one. ``which`` picks ``"rho"``, ``"v"`` or ``"both"``
    (the larger of the two). Returns None when the last sample is above.
    """
    if which == "rho":
        e = series.e_rho
    elif which == "v":
        e = series.e_v
    elif which == "both":
        e = series.combined
    else:
        raise ValueError(f"unknown series selector {which!r}")
    if e.shape[0] == 0:
        raise ValueError("empty error series")
    bad = np.flatnonzero(~(e <= threshold))
    if bad.size == 0:
        return float(series.times[0])
    k = bad[-1]
    if k == e.shape[0] - 1:
        return None
    t0, t1 = series.times[k], series.times[k + 1]
    if not np.isfinite(e[k]):
        return float(t1)
    u = (e[k] - threshold) / (e[k] - e[k + 1])
    return float(t0 + u * (t1 - t0))
