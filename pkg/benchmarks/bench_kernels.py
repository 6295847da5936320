"""Compare the compiled and pure-python kernel backends.

    python3 benchmarks/bench_kernels.py [--entities N] [--dim D] [--repeat R]

Prints best-of-R wall time per kernel and backend, plus the speedup, and
checks the two backends agree on the outputs they produce.
"""
import argparse
import time

import numpy as np

from multikg import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_scores(mod, args, rng):
    Q = rng.normal(size=(args.queries, args.dim))
    E = rng.normal(size=(args.entities, args.dim))
    return lambda: mod.distance_scores(Q, E, kernels.L1)


def bench_update(mod, args, rng):
    n_e, n_r, k, batch = args.entities, 50, 10, args.batch
    ent0 = rng.normal(size=(n_e, args.dim))
    rel0 = rng.normal(size=(n_r, args.dim))
    pos = np.column_stack([rng.integers(0, n_e, batch), rng.integers(0, n_r, batch), rng.integers(0, n_e, batch)])
    neg = np.repeat(pos, k, axis=0)
    neg[:, 2] = rng.integers(0, n_e, len(neg))

    def run():
        ent, rel = ent0.copy(), rel0.copy()
        mod.transe_batch_update(ent, rel, np.zeros_like(ent), np.zeros_like(rel), pos, neg, k,
                                1.0, 0.05, kernels.L1, kernels.ADAGRAD, 1e-10)
        return ent
    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=5000)
    ap.add_argument("--dim", type=int, default=100)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--batch", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    print(f"{'kernel':<22}{'backend':<10}{'seconds':>10}")
    for name, make in (("distance_scores", bench_scores), ("transe_batch_update", bench_update)):
        times, outs = {}, {}
        for label, mod in backends.items():
            fn = make(mod, args, np.random.default_rng(0))
            outs[label] = fn()
            times[label] = best_of(fn, args.repeat)
            print(f"{name:<22}{label:<10}{times[label]:>10.4f}")
        if len(times) == 2:
            diff = np.abs(outs["compiled"] - outs["python"]).max()
            print(f"{name:<22}{'speedup':<10}{times['python'] / times['compiled']:>9.1f}x  max abs diff {diff:.1e}")


if __name__ == "__main__":
    main()
