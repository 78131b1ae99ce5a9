"""Hot inner loops, in two flavours.

Each kernel has a numba version (explicit loops, compiled with ``njit``) and a
vectorised numpy version with identical arithmetic. The module-level names
``lax_wendroff``, ``upwind_error_step`` and ``edie_accumulate`` point at one of
them according to ``arzobs._accel.USE_NUMBA``.

Equilibrium velocity is evaluated inside the kernels from a family code and a
flat parameter vector (see ``FundamentalDiagram.kernel_spec``):

    0  Greenshield   [v_f, rho_m, gamma]
    1  three-param   [lam, p_shape, alpha, rho_m, a, b, v0]
    2  uniform speed [v]
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

GREENSHIELD = 0
THREE_PARAM = 1
UNIFORM = 2

# below this fraction of rho_m the three-parameter V is replaced by its limit
_SMALL_S = 1e-8


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit
def _veq_scalar(r, fam, prm):
    if fam == 0:
        s = r / prm[1]
        # pow() is slow per element; the common exponents have exact shortcuts
        if prm[2] == 1.0:
            return prm[0] * (1.0 - s)
        if prm[2] == 2.0:
            return prm[0] * (1.0 - s * s)
        return prm[0] * (1.0 - s ** prm[2])
    if fam == 1:
        s = r / prm[3]
        if s < _SMALL_S:
            return prm[6]
        d = prm[0] * (s - prm[1])
        q = prm[2] * (prm[4] + (prm[5] - prm[4]) * s - math.sqrt(1.0 + d * d))
        return q / r
    return prm[0]


@njit
def _lax_wendroff_nb(rho, y, dt, dx, inv_tau, fam, prm):
    m = rho.shape[0] - 2
    lam = dt / dx
    fr = np.empty(m + 2)
    fy = np.empty(m + 2)
    for j in range(m + 2):
        vj = _veq_scalar(rho[j], fam, prm)
        fr[j] = y[j] + rho[j] * vj
        fy[j] = y[j] * y[j] / rho[j] + y[j] * vj
    # half-step states on the m+1 interfaces
    gr = np.empty(m + 1)
    gy = np.empty(m + 1)
    yh = np.empty(m + 1)
    for j in range(m + 1):
        rh = 0.5 * (rho[j] + rho[j + 1]) - 0.5 * lam * (fr[j + 1] - fr[j])
        yy = (0.5 * (y[j] + y[j + 1]) - 0.5 * lam * (fy[j + 1] - fy[j])
              - 0.25 * dt * inv_tau * (y[j] + y[j + 1]))
        vh = _veq_scalar(rh, fam, prm)
        yh[j] = yy
        gr[j] = yy + rh * vh
        gy[j] = yy * yy / rh + yy * vh
    rn = np.empty(m)
    yn = np.empty(m)
    for j in range(m):
        rn[j] = rho[j + 1] - lam * (gr[j + 1] - gr[j])
        yn[j] = (y[j + 1] - lam * (gy[j + 1] - gy[j])
                 - 0.5 * dt * inv_tau * (yh[j + 1] + yh[j]))
    return rn, yn, gr[0], gr[m]


@njit
def _upwind_error_nb(w, v, gw, gv, c, a1, a2, refl, dt):
    m = w.shape[0]
    wl = w[m - 1]
    wn = np.empty(m)
    vn = np.empty(m)
    for j in range(m):
        wm = refl * v[0] if j == 0 else w[j - 1]
        wn[j] = w[j] - a1 * (w[j] - wm) + dt * gw[j] * wl
        vp = 0.0 if j == m - 1 else v[j + 1]
        vn[j] = v[j] - a2 * (v[j] - vp) + dt * (c[j] * w[j] + gv[j] * wl)
    return wn, vn


@njit
def _clip_to_box(ta, xa, tb, xb, t0, t1, x0, x1):
    """Liang-Barsky clip of the segment to the box; returns (u0, u1)."""
    u0 = 0.0
    u1 = 1.0
    dt_ = tb - ta
    dx_ = xb - xa
    for k in range(4):
        if k == 0:
            p, q = -dt_, ta - t0
        elif k == 1:
            p, q = dt_, t1 - ta
        elif k == 2:
            p, q = -dx_, xa - x0
        else:
            p, q = dx_, x1 - xa
        if p == 0.0:
            if q < 0.0:
                return 1.0, 0.0
        else:
            u = q / p
            if p < 0.0:
                if u > u0:
                    u0 = u
            else:
                if u < u1:
                    u1 = u
    return u0, u1


@njit
def _crossings(a, b, lo, h, n, u0, u1, out, k):
    """Append parameters in (u0, u1) where a + u (b - a) hits lo + i h."""
    if b == a:
        return k
    lo_v = min(a + u0 * (b - a), a + u1 * (b - a))
    hi_v = max(a + u0 * (b - a), a + u1 * (b - a))
    i0 = int(math.floor((lo_v - lo) / h)) + 1
    i1 = int(math.ceil((hi_v - lo) / h)) - 1
    if i0 < 1:
        i0 = 1
    if i1 > n - 1:
        i1 = n - 1
    for i in range(i0, i1 + 1):
        u = (lo + i * h - a) / (b - a)
        if u0 < u < u1:
            out[k] = u
            k += 1
    return k


@njit
def _edie_nb(ta, xa, tb, xb, veh, t0, t1, x0, x1, nt, nx):
    ht = (t1 - t0) / nt
    hx = (x1 - x0) / nx
    tsum = np.zeros((nt, nx))
    dsum = np.zeros((nt, nx))
    ntr = np.zeros((nt, nx), dtype=np.int64)
    last = np.full((nt, nx), -1, dtype=np.int64)
    buf = np.empty(nt + nx + 4)
    for s in range(ta.shape[0]):
        dts = tb[s] - ta[s]
        if dts <= 0.0:
            continue
        u0, u1 = _clip_to_box(ta[s], xa[s], tb[s], xb[s], t0, t1, x0, x1)
        if u1 <= u0:
            continue
        buf[0] = u0
        k = 1
        k = _crossings(ta[s], tb[s], t0, ht, nt, u0, u1, buf, k)
        k = _crossings(xa[s], xb[s], x0, hx, nx, u0, u1, buf, k)
        buf[k] = u1
        k += 1
        us = np.sort(buf[:k])
        dxs = abs(xb[s] - xa[s])
        for p in range(k - 1):
            du = us[p + 1] - us[p]
            if du <= 0.0:
                continue
            um = 0.5 * (us[p] + us[p + 1])
            i = int(math.floor((ta[s] + um * dts - t0) / ht))
            j = int(math.floor((xa[s] + um * (xb[s] - xa[s]) - x0) / hx))
            i = min(max(i, 0), nt - 1)
            j = min(max(j, 0), nx - 1)
            tsum[i, j] += du * dts
            dsum[i, j] += du * dxs
            # distinct-vehicle count assumes segments arrive grouped by vehicle
            if last[i, j] != veh[s]:
                last[i, j] = veh[s]
                ntr[i, j] += 1
    return tsum, dsum, ntr


# ---------------------------------------------------------------------------
# numpy kernels
# ---------------------------------------------------------------------------

def veq_array(r, fam, prm):
    """Vectorised equilibrium velocity for a family code and parameter vector."""
    r = np.asarray(r, dtype=float)
    if fam == GREENSHIELD:
        return prm[0] * (1.0 - (r / prm[1]) ** prm[2])
    if fam == THREE_PARAM:
        s = r / prm[3]
        d = prm[0] * (s - prm[1])
        q = prm[2] * (prm[4] + (prm[5] - prm[4]) * s - np.sqrt(1.0 + d * d))
        small = s < _SMALL_S
        with np.errstate(divide="ignore", invalid="ignore"):
            out = q / r
        return np.where(small, prm[6], out)
    return np.full_like(r, prm[0])


def _lax_wendroff_np(rho, y, dt, dx, inv_tau, fam, prm):
    lam = dt / dx
    vv = veq_array(rho, fam, prm)
    fr = y + rho * vv
    fy = y * y / rho + y * vv
    rh = 0.5 * (rho[:-1] + rho[1:]) - 0.5 * lam * (fr[1:] - fr[:-1])
    yh = (0.5 * (y[:-1] + y[1:]) - 0.5 * lam * (fy[1:] - fy[:-1])
          - 0.25 * dt * inv_tau * (y[:-1] + y[1:]))
    vh = veq_array(rh, fam, prm)
    gr = yh + rh * vh
    gy = yh * yh / rh + yh * vh
    rn = rho[1:-1] - lam * (gr[1:] - gr[:-1])
    yn = y[1:-1] - lam * (gy[1:] - gy[:-1]) - 0.5 * dt * inv_tau * (yh[1:] + yh[:-1])
    return rn, yn, gr[0], gr[-1]


def _upwind_error_np(w, v, gw, gv, c, a1, a2, refl, dt):
    wl = w[-1]
    wm = np.empty_like(w)
    wm[0] = refl * v[0]
    wm[1:] = w[:-1]
    vp = np.empty_like(v)
    vp[:-1] = v[1:]
    vp[-1] = 0.0
    wn = w - a1 * (w - wm) + dt * gw * wl
    vn = v - a2 * (v - vp) + dt * (c * w + gv * wl)
    return wn, vn


def _clip_to_box_np(ta, xa, tb, xb, t0, t1, x0, x1):
    dt_ = tb - ta
    dx_ = xb - xa
    u0 = np.zeros_like(ta)
    u1 = np.ones_like(ta)
    for p, q in ((-dt_, ta - t0), (dt_, t1 - ta), (-dx_, xa - x0), (dx_, x1 - xa)):
        zero = p == 0.0
        u1 = np.where(zero & (q < 0.0), -1.0, u1)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(zero, 0.0, q / np.where(zero, 1.0, p))
        u0 = np.where(~zero & (p < 0.0), np.maximum(u0, u), u0)
        u1 = np.where(~zero & (p > 0.0), np.minimum(u1, u), u1)
    return u0, u1


def _edie_np(ta, xa, tb, xb, veh, t0, t1, x0, x1, nt, nx):
    ht = (t1 - t0) / nt
    hx = (x1 - x0) / nx
    tsum = np.zeros((nt, nx))
    dsum = np.zeros((nt, nx))
    dts = tb - ta
    keep = dts > 0.0
    ta, xa, tb, xb, veh, dts = ta[keep], xa[keep], tb[keep], xb[keep], veh[keep], dts[keep]
    u0, u1 = _clip_to_box_np(ta, xa, tb, xb, t0, t1, x0, x1)
    keep = u1 > u0
    ta, xa, tb, xb, veh, dts, u0, u1 = (a[keep] for a in (ta, xa, tb, xb, veh, dts, u0, u1))
    dxs = xb - xa
    ca_t, cb_t = ta + u0 * dts, ta + u1 * dts
    ca_x, cb_x = xa + u0 * dxs, xa + u1 * dxs
    um = 0.5 * (u0 + u1)
    i = np.clip(np.floor((ta + um * dts - t0) / ht).astype(np.int64), 0, nt - 1)
    j = np.clip(np.floor((xa + um * dxs - x0) / hx).astype(np.int64), 0, nx - 1)
    inside = ((np.minimum(ca_t, cb_t) >= t0 + i * ht) & (np.maximum(ca_t, cb_t) <= t0 + (i + 1) * ht)
              & (np.minimum(ca_x, cb_x) >= x0 + j * hx) & (np.maximum(ca_x, cb_x) <= x0 + (j + 1) * hx))
    du = u1 - u0
    np.add.at(tsum, (i[inside], j[inside]), du[inside] * dts[inside])
    np.add.at(dsum, (i[inside], j[inside]), du[inside] * np.abs(dxs[inside]))
    pv = [veh[inside]]
    pc = [i[inside] * nx + j[inside]]
    # segments crossing grid lines: subdivide one by one
    buf = np.empty(nt + nx + 4)
    for s in np.flatnonzero(~inside):
        buf[0] = u0[s]
        k = _crossings_py(ta[s], tb[s], t0, ht, nt, u0[s], u1[s], buf, 1)
        k = _crossings_py(xa[s], xb[s], x0, hx, nx, u0[s], u1[s], buf, k)
        buf[k] = u1[s]
        us = np.sort(buf[:k + 1])
        dup = np.diff(us)
        mid = 0.5 * (us[1:] + us[:-1])
        ii = np.clip(np.floor((ta[s] + mid * dts[s] - t0) / ht).astype(np.int64), 0, nt - 1)
        jj = np.clip(np.floor((xa[s] + mid * dxs[s] - x0) / hx).astype(np.int64), 0, nx - 1)
        ok = dup > 0.0
        np.add.at(tsum, (ii[ok], jj[ok]), dup[ok] * dts[s])
        np.add.at(dsum, (ii[ok], jj[ok]), dup[ok] * abs(dxs[s]))
        pv.append(np.full(int(ok.sum()), veh[s]))
        pc.append(ii[ok] * nx + jj[ok])
    pairs = np.unique(np.stack([np.concatenate(pv), np.concatenate(pc)]), axis=1)
    ntr = np.bincount(pairs[1], minlength=nt * nx).reshape(nt, nx).astype(np.int64)
    return tsum, dsum, ntr


# pure-python copy of the crossing helper for the numpy path
_crossings_py = getattr(_crossings, "py_func", _crossings)


if USE_NUMBA:
    lax_wendroff = _lax_wendroff_nb
    upwind_error_step = _upwind_error_nb
    edie_accumulate = _edie_nb
else:
    lax_wendroff = _lax_wendroff_np
    upwind_error_step = _upwind_error_np
    edie_accumulate = _edie_np

BACKEND = "numba" if USE_NUMBA else "numpy"

IMPLEMENTATIONS = {
    "numba": (_lax_wendroff_nb, _upwind_error_nb, _edie_nb),
    "numpy": (_lax_wendroff_np, _upwind_error_np, _edie_np),
}
