"""Time the numba kernels against the numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--consumers 32] [--dx 2] [--repeat 20]

With DHNET_DISABLE_NUMBA=1 only the numpy rows are printed.
"""

import argparse
import time

import numpy as np

from dhnet import _accel
from dhnet.network import flow_partition, random_solenoidal_flow, star_network
from dhnet.thermal import _node_inflow_csr, build_mesh


def best_of(fn, repeat):
    fn()  # warm-up (numba compilation)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def upwind_args(net, mesh, q):
    part = flow_partition(net, q)
    qp = q[net.pipe_arcs]
    fwd = qp >= 0
    up = np.where(fwd, net.tail[net.pipe_arcs], net.head[net.pipe_arcs])
    ptr, in_cell, in_w, bw = _node_inflow_csr(net, mesh, q, part)
    rate = np.abs(qp / net.cross_section) / mesh.dx
    return (mesh.offset, mesh.n_cells, rate, fwd, up, ptr, in_cell, in_w, bw)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--consumers", type=int, default=32)
    ap.add_argument("--dx", type=float, default=2.0)
    ap.add_argument("--n-re", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    re = 10 ** rng.uniform(3.5, 8, args.n_re)
    rr = 10 ** rng.uniform(-6, -2, args.n_re)
    net = star_network(args.consumers)
    mesh = build_mesh(net, args.dx)
    q = random_solenoidal_flow(net, rng)
    uargs = upwind_args(net, mesh, q)

    print(f"active backend: {_accel.BACKEND}")
    print(f"colebrook: {args.n_re} Reynolds numbers; upwind: {mesh.kappa} cells, {net.n_pipes} pipes")
    rows = [("colebrook", "numpy", best_of(lambda: _accel.colebrook_numpy(re, rr), args.repeat))]
    rows.append(("upwind", "numpy", best_of(lambda: _accel.upwind_triplets_numpy(*uargs), args.repeat)))
    if _accel.colebrook_numba is not None:
        rows.insert(1, ("colebrook", "numba", best_of(lambda: _accel.colebrook_numba(re, rr), args.repeat)))
        rows.append(("upwind", "numba", best_of(lambda: _accel.upwind_triplets_numba(*uargs), args.repeat)))
    for kernel, backend, t in rows:
        print(f"{kernel:10s} {backend:6s} {1e3 * t:10.3f} ms")
    if _accel.colebrook_numba is not None:
        for k in ("colebrook", "upwind"):
            tn = next(t for a, b, t in rows if a == k and b == "numpy")
            tb = next(t for a, b, t in rows if a == k and b == "numba")
            print(f"{k:10s} speed-up {tn / tb:6.1f}x")


if __name__ == "__main__":
    main()
