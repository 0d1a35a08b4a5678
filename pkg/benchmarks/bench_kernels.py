"""Time the compiled walk and skip-gram kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--nodes 500] [--repeat 3]

Both backends get identical inputs; the script also checks that their
outputs agree before reporting timings.
"""

import argparse
import time

import numpy as np

from spillcast import kernels
from spillcast.synth import generate_graph


def best_of(repeat, fn):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=500)
    ap.add_argument("--walks", type=int, default=4, help="walks per node")
    ap.add_argument("--length", type=int, default=40)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--pairs", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    g = generate_graph("small-world", args.nodes, {"k": 6, "p": 0.1}, seed=0)
    csr = g.undirected_csr()
    indptr, indices = csr.indptr.astype(np.int64), csr.indices.astype(np.int64)
    starts = np.repeat(np.arange(args.nodes, dtype=np.int64), args.walks)
    uniforms = rng.random((starts.size, args.length - 1))
    centers = rng.integers(0, args.nodes, args.pairs).astype(np.int64)
    contexts = rng.integers(0, args.nodes, args.pairs).astype(np.int64)
    negatives = rng.integers(0, args.nodes, (args.pairs, 5)).astype(np.int64)
    w_in0 = (rng.random((args.nodes, args.dim)) - 0.5) / args.dim
    w_out0 = rng.normal(0, 0.01, (args.nodes, args.dim))

    rows, outputs = [], {}
    for name in sorted(kernels.BACKENDS):
        core = kernels.BACKENDS[name]
        walk_t = best_of(args.repeat, lambda: core.random_walks(indptr, indices, starts, uniforms))

        def sgns():
            w_in, w_out = w_in0.copy(), w_out0.copy()
            core.sgns_train(w_in, w_out, centers, contexts, negatives, 0.025, 0.0001)
            return w_in, w_out

        sgns_t = best_of(args.repeat, sgns)
        outputs[name] = (core.random_walks(indptr, indices, starts, uniforms), *sgns())
        rows.append((name, walk_t, sgns_t))

    if len(outputs) == 2:
        (w1, i1, o1), (w2, i2, o2) = outputs.values()
        agree = np.array_equal(w1, w2) and np.allclose(i1, i2, atol=1e-12) and np.allclose(o1, o2, atol=1e-12)
        print(f"backends agree: {agree}")
    else:
        print("compiled kernels unavailable; timing the fallback only")
    walks = starts.size * args.length
    print(f"{'backend':<10}{'walks (s)':>12}{'steps/s':>14}{'sgns (s)':>12}{'pairs/s':>14}")
    for name, wt, st in rows:
        print(f"{name:<10}{wt:>12.4f}{walks / wt:>14.0f}{st:>12.4f}{args.pairs / st:>14.0f}")
    if len(rows) == 2:
        by = {r[0]: r for r in rows}
        print(f"speedup: walks x{by['python'][1] / by['cython'][1]:.0f}, sgns x{by['python'][2] / by['cython'][2]:.0f}")


if __name__ == "__main__":
    main()
