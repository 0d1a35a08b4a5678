"""Reference implementation of the walk and skip-gram kernels.

Used when the compiled extension is unavailable or disabled.
"""

import math

import numpy as np


def random_walks(indptr, indices, starts, uniforms):
    n_walks, steps = uniforms.shape
    walks = np.empty((n_walks, steps + 1), dtype=np.int64)
    indptr = indptr.tolist()
    indices = indices.tolist()
    for i in range(n_walks):
        cur = int(starts[i])
        walks[i, 0] = cur
        row = uniforms[i].tolist()
        for s in range(steps):
            deg = indptr[cur + 1] - indptr[cur]
            if deg:
                k = min(int(row[s] * deg), deg - 1)
                cur = indices[indptr[cur] + k]
            walks[i, s + 1] = cur
    return walks


def sgns_train(w_in, w_out, centers, contexts, negatives, lr_start, lr_end):
    """One pass of skip-gram with negative sampling, updating in place."""
    n_pairs = len(centers)
    denom = float(n_pairs if n_pairs > 1 else 1)
    for i in range(n_pairs):
        lr = lr_start - (lr_start - lr_end) * (i / denom)
        c = centers[i]
        o = contexts[i]
        grad = np.zeros(w_in.shape[1])
        vc = w_in[c]
        for j, t in enumerate((o, *negatives[i])):
            if j and t == o:
                continue
            label = 1.0 if j == 0 else 0.0
            vt = w_out[t]
            f = float(vc @ vt)
            g = (label - 1.0 / (1.0 + math.exp(-f))) * lr
            grad += g * vt
            vt += g * vc
        vc += grad
