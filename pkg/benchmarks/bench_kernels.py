"""Time the numba and numpy cell kernels on a channel mesh.

Usage: python benchmarks/bench_kernels.py [--n 20] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from binghamopt import _accel, kernels
from binghamopt.bingham import PhysicsParams, branch_coefficients, evaluate, solve_stokes_initial
from binghamopt.meshgen import channel_mesh


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20, help="grid cells per side")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    mesh = channel_mesh(args.n)
    params = PhysicsParams(rho=10.0)
    pd = evaluate(mesh, solve_stokes_initial(mesh, params).vector())
    alpha, kappa = branch_coefficients(pd.nrm, params, "regularized")
    g = pd.geom
    t_args = (g.G2, g.N2, g.N1, g.wdet, alpha, kappa, pd.eps, pd.gy, pd.yq, params.rho)
    r_args = (g.G2, g.N2, g.N1, g.wdet, alpha[..., None, None] * pd.eps, pd.yq, pd.pq, pd.divy)

    print(f"mesh: {mesh.n_cells} cells, {g.wdet.shape[1]} quadrature points per cell")
    paths = [("numpy", False)] + ([("numba", True)] if _accel.HAVE_NUMBA else [])
    results = {}
    for name, flag in paths:
        for kname, fn, a in (("tangent", kernels.tangent, t_args), ("residual", kernels.residual, r_args)):
            fn(*a, use_numba=flag)  # warm up (jit compile)
            sec = min(timeit.repeat(lambda: fn(*a, use_numba=flag), number=1, repeat=args.repeat))
            results[name, kname] = (sec, fn(*a, use_numba=flag))
            print(f"{kname:9s} {name:6s} {1e3 * sec:8.3f} ms")
    if len(paths) == 2:
        for kname in ("tangent", "residual"):
            (tn, a), (tb, b) = results["numpy", kname], results["numba", kname]
            diff = np.abs(a - b).max() / np.abs(a).max()
            print(f"{kname:9s} speedup {tn / tb:5.1f}x, max relative difference {diff:.1e}")
    else:
        print("numba not installed; only the numpy path was timed")


if __name__ == "__main__":
    main()
