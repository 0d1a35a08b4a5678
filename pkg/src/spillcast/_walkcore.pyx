# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled random-walk and skip-gram kernels.

Semantics mirror ``_walkcore_py`` exactly; the pure-Python module is the
reference.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def random_walks(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                 const cnp.int64_t[::1] starts, const double[:, ::1] uniforms):
    cdef Py_ssize_t n_walks = starts.shape[0]
    cdef Py_ssize_t steps = uniforms.shape[1]
    out = np.empty((n_walks, steps + 1), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] walks = out
    cdef Py_ssize_t i, s
    cdef cnp.int64_t cur, deg, k
    with nogil:
        for i in range(n_walks):
            cur = starts[i]
            walks[i, 0] = cur
            for s in range(steps):
                deg = indptr[cur + 1] - indptr[cur]
                if deg == 0:
                    walks[i, s + 1] = cur
                    continue
                k = <cnp.int64_t>(uniforms[i, s] * deg)
                if k >= deg:
                    k = deg - 1
                cur = indices[indptr[cur] + k]
                walks[i, s + 1] = cur
    return out


def sgns_train(double[:, ::1] w_in, double[:, ::1] w_out,
               const cnp.int64_t[::1] centers, const cnp.int64_t[::1] contexts,
               const cnp.int64_t[:, ::1] negatives, double lr_start, double lr_end):
    cdef Py_ssize_t n_pairs = centers.shape[0]
    cdef Py_ssize_t k_neg = negatives.shape[1]
    cdef Py_ssize_t dim = w_in.shape[1]
    cdef Py_ssize_t i, j, d
    cdef cnp.int64_t c, o, t
    cdef double lr, f, g, label
    cdef double[::1] grad = np.zeros(dim, dtype=np.float64)
    cdef double denom = <double>(n_pairs if n_pairs > 1 else 1)
    with nogil:
        for i in range(n_pairs):
            lr = lr_start - (lr_start - lr_end) * (<double>i / denom)
            c = centers[i]
            o = contexts[i]
            for d in range(dim):
                grad[d] = 0.0
            for j in range(k_neg + 1):
                if j == 0:
                    t = o
                    label = 1.0
                else:
                    t = negatives[i, j - 1]
                    if t == o:
                        continue
                    label = 0.0
                f = 0.0
                for d in range(dim):
                    f = f + w_in[c, d] * w_out[t, d]
                g = (label - 1.0 / (1.0 + exp(-f))) * lr
                for d in range(dim):
                    grad[d] = grad[d] + g * w_out[t, d]
                for d in range(dim):
                    w_out[t, d] = w_out[t, d] + g * w_in[c, d]
            for d in range(dim):
                w_in[c, d] = w_in[c, d] + grad[d]
