"""Numba vs numpy timings for the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat=50]

Each kernel is run on training-sized inputs (batch 16, 4 nodes per client,
64-wide hidden state).  Outputs of the two backends are compared before
timing so a fast but wrong kernel is caught here too.
"""
import argparse
import timeit

import numpy as np

from fedstgd import kernels


def cases(rng, batch=16, nodes=4, d_in=66, hidden=64, d_embed=128):
    w = rng.normal(size=(batch, nodes, 4))
    v = rng.normal(size=(batch, nodes, 4))
    g16 = rng.normal(size=(batch, nodes, 16))
    logits = rng.normal(size=(batch, nodes, d_embed))
    soft = kernels.NUMPY.softmax(logits)
    u = rng.normal(size=(batch, nodes, d_in))
    wn = rng.normal(size=(1, nodes, d_in, hidden))
    gout = rng.normal(size=(batch, nodes, hidden))
    size = 3 * d_embed * d_in * hidden
    p, g = rng.normal(size=size), rng.normal(size=size)
    m, vv = rng.normal(size=size) ** 2, rng.normal(size=size) ** 2

    def adam(backend):
        pc, mc, vc = p.copy(), m.copy(), vv.copy()
        backend.adam(pc, g, mc, vc, 1e-3, 0.9, 0.999, 1e-8, 1e-4, 0.5, 0.1)
        return pc

    return {
        "gamma": lambda b: b.gamma(w, v),
        "gamma_vjp": lambda b: b.gamma_vjp(g16, w, v),
        "softmax": lambda b: b.softmax(logits),
        "softmax_vjp": lambda b: b.softmax_vjp(logits, soft),
        "rowmat": lambda b: b.rowmat(u, wn),
        "rowmat_vjp": lambda b: b.rowmat_vjp(gout, u, wn),
        f"adam[{size}]": adam,
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out])
    return np.ravel(out)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args()
    if kernels.NUMBA is None:
        print("numba is not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14} {'numpy us':>10} {'numba us':>10} {'speedup':>8} {'max diff':>10}")
    for name, fn in cases(rng).items():
        diff = np.max(np.abs(_flat(fn(kernels.NUMPY)) - _flat(fn(kernels.NUMBA))))  # also compiles
        times = []
        for backend in (kernels.NUMPY, kernels.NUMBA):
            best = min(timeit.repeat(lambda: fn(backend), number=args.repeat, repeat=3))
            times.append(1e6 * best / args.repeat)
        print(f"{name:<14} {times[0]:>10.1f} {times[1]:>10.1f} {times[0] / times[1]:>8.2f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
