"""Time the numba loop kernels against the vectorized numpy kernels.

    python3 benchmarks/bench_backends.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from ktap import _kernels
from ktap._backend import USE_NUMBA
from ktap.scenario import preset


def setup(name):
    cfg = preset(name)
    model = cfg.build_model()
    B_all, eta_all = (np.asarray(a) for a in model.tables)
    Bhat = np.asarray(model.opinion.Bhat)
    return cfg, B_all, eta_all, Bhat


def bench(name, repeat):
    cfg, B_all, eta_all, Bhat = setup(name)
    f = cfg.initial_matrix()
    g = cfg.gamma0
    out = np.empty_like(f)
    args = (f, B_all, eta_all, Bhat, cfg.gamma0, cfg.S0, True, _kernels.RK4, 0.01, 2000, 10, 1e-300)
    cases = {
        "rhs numpy": lambda: _kernels._rhs_numpy(f, B_all[g], eta_all[g], Bhat),
        "integrate numpy (2000 RK4 steps)": lambda: _kernels._integrate_numpy(*args),
    }
    if USE_NUMBA:
        _kernels._rhs_loops(f, B_all[g], eta_all[g], Bhat, out)
        _kernels._integrate_loops(*args)
        cases["rhs numba"] = lambda: _kernels._rhs_loops(f, B_all[g], eta_all[g], Bhat, out)
        cases["integrate numba (2000 RK4 steps)"] = lambda: _kernels._integrate_loops(*args)
    print(f"{name} (m={cfg.m}, n={cfg.n})")
    for label in sorted(cases):
        number = 2000 if label.startswith("rhs") else 1
        best = min(timeit.repeat(cases[label], number=number, repeat=repeat)) / number
        print(f"  {label:<34s} {best * 1e6:12.1f} us")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    for name in ("u0_poor_g7_variable", "politics_poor_g7_variable"):
        bench(name, args.repeat)


if __name__ == "__main__":
    main()
