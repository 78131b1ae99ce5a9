"""Time the numba and numpy versions of each hot kernel on identical inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Both implementations are imported directly, so the ARZOBS_DISABLE_NUMBA flag
does not matter here. The first numba call (compilation or cache load) is
excluded from the timings.
"""
import argparse
import time

import numpy as np

from arzobs import kernels
from arzobs.fd import GreenshieldParams


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def lw_case(m, steps):
    fd = GreenshieldParams(40.0, 0.16, 1.0)
    fam, prm = fd.kernel_spec()
    x = (np.arange(m + 2) - 0.5) / m
    rho = 0.12 * (1 + 0.1 * np.sin(3 * np.pi * x))
    v = 10.0 * (1 - 0.1 * np.sin(3 * np.pi * x))
    y = rho * (v - fd.V(rho))
    dx = 400.0 / m
    dt = 0.9 * dx / 25.0

    def make(impl):
        def run():
            r, yy = rho.copy(), y.copy()
            for _ in range(steps):
                rn, yn, _, _ = impl(r, yy, dt, dx, 1 / 60.0, fam, prm)
                r[1:-1], yy[1:-1] = rn, yn
        return run
    return make


def upwind_case(m, steps):
    x = (np.arange(m) + 0.5) / m
    w0, v0 = np.sin(np.pi * x), np.cos(np.pi * x)
    gw = np.full(m, -0.011)
    gv = -0.005 * np.exp(-x)
    c = -np.exp(-x) / 60.0

    def make(impl):
        def run():
            w, v = w0, v0
            for _ in range(steps):
                w, v = impl(w, v, gw, gv, c, 0.3, 0.6, -2.0, 0.01)
        return run
    return make


def edie_case(n_veh, n_samples):
    rng = np.random.default_rng(0)
    t = np.tile(np.arange(n_samples) * 0.1, n_veh)
    speed = np.repeat(rng.uniform(5, 15, n_veh), n_samples)
    start = np.repeat(rng.uniform(-200, 400, n_veh), n_samples)
    xpos = start + speed * t
    veh = np.repeat(np.arange(n_veh), n_samples)
    same = veh[1:] == veh[:-1]
    ia = np.flatnonzero(same)
    args = (t[ia], xpos[ia], t[ia + 1], xpos[ia + 1], veh[ia].astype(np.int64),
            0.0, n_samples * 0.1, 0.0, 400.0, 41, 41)

    def make(impl):
        return lambda: impl(*args)
    return make


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    nb = kernels.IMPLEMENTATIONS["numba"]
    npy = kernels.IMPLEMENTATIONS["numpy"]
    cases = [
        ("lax_wendroff  M=41   x1000 steps", lw_case(41, 1000), 0),
        ("lax_wendroff  M=4000 x200 steps", lw_case(4000, 200), 0),
        ("upwind_error  M=800  x1000 steps", upwind_case(800, 1000), 1),
        ("edie          300 veh x 600 samples", edie_case(300, 600), 2),
    ]
    print(f"{'kernel':38s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}")
    for name, make, k in cases:
        t_nb = best_of(make(nb[k]), args.repeat)
        t_np = best_of(make(npy[k]), args.repeat)
        print(f"{name:38s} {1e3 * t_nb:11.2f} {1e3 * t_np:11.2f} {t_np / t_nb:9.1f}")


if __name__ == "__main__":
    main()
