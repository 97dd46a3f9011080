"""Time the GRU sequence kernels: numba against the numpy fallback.

    python benchmarks/bench_kernels.py [--hidden 192] [--steps 32] [--batch 32] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from masfs import kernels


def make_inputs(rng, n_in, n_h, T, B):
    W = rng.normal(scale=0.1, size=(3 * n_h, n_in))
    U = rng.normal(scale=0.1, size=(3 * n_h, n_h))
    b = rng.normal(scale=0.1, size=3 * n_h)
    X = rng.normal(size=(T, B, n_in))
    mask = np.ones((T, B))
    mask[T // 2:, : B // 2] = 0.0
    h0 = rng.normal(scale=0.1, size=(B, n_h))
    return W, U, b, X, mask, h0


def bench(fwd, bwd, args, bptt, repeat):
    W, U, b, X, mask, h0 = args
    Hs, Z, R, N = fwd(W, U, b, X, mask, h0)  # warm-up, compiles the jit path
    dH = np.ones_like(Hs[1:])
    bwd(W, U, X, mask, Hs, Z, R, N, dH, bptt)
    tf = timeit.timeit(lambda: fwd(W, U, b, X, mask, h0), number=repeat) / repeat
    tb = timeit.timeit(lambda: bwd(W, U, X, mask, Hs, Z, R, N, dH, bptt), number=repeat) / repeat
    return tf, tb


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--inputs", type=int, default=16)
    ap.add_argument("--hidden", type=int, default=192)
    ap.add_argument("--steps", type=int, default=32)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=20)
    a = ap.parse_args()

    args = make_inputs(np.random.default_rng(0), a.inputs, a.hidden, a.steps, a.batch)
    print(f"n_in={a.inputs} n_h={a.hidden} T={a.steps} B={a.batch}  (active backend: {kernels.BACKEND})")
    rows = [("numpy", kernels.gru_seq_forward_np, kernels.gru_seq_backward_np)]
    if kernels.USE_JIT:
        rows.append(("numba", kernels.gru_seq_forward_jit, kernels.gru_seq_backward_jit))
    else:
        print("numba disabled (MASFS_NO_JIT set or numba missing); numpy only")
    base = None
    for name, fwd, bwd in rows:
        tf, tb = bench(fwd, bwd, args, a.steps, a.repeat)
        base = base or (tf, tb)
        print(f"{name:6s} forward {tf * 1e3:8.3f} ms  backward {tb * 1e3:8.3f} ms  "
              f"speedup x{base[0] / tf:.2f} / x{base[1] / tb:.2f}")


if __name__ == "__main__":
    main()
