import numpy as np
import pytest

from spillcast import kernels
from spillcast._walkcore_py import random_walks as py_walks
from spillcast._walkcore_py import sgns_train as py_sgns

needs_cython = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled kernels not built")


def ring_csr(n):
    indptr = np.arange(0, 2 * n + 1, 2, dtype=np.int64)
    indices = np.array([[(i - 1) % n, (i + 1) % n] for i in range(n)], dtype=np.int64).ravel()
    return indptr, indices


def test_unknown_backend():
    with pytest.raises(ValueError, match="unavailable"):
        kernels.get_backend("fortran")


def test_default_backend_is_registered():
    assert kernels.BACKEND in kernels.BACKENDS
    assert kernels.get_backend() is kernels.BACKENDS[kernels.BACKEND]


def test_python_walks_follow_edges():
    indptr, indices = ring_csr(7)
    rng = np.random.default_rng(0)
    starts = np.arange(7, dtype=np.int64)
    walks = py_walks(indptr, indices, starts, rng.random((7, 12)))
    assert walks.shape == (7, 13)
    assert np.array_equal(walks[:, 0], starts)
    steps = (walks[:, 1:] - walks[:, :-1]) % 7
    assert set(np.unique(steps)) <= {1, 6}


def test_walk_neighbour_choice_by_uniform():
    indptr, indices = ring_csr(5)
    walks = py_walks(indptr, indices, np.array([0], dtype=np.int64), np.array([[0.1, 0.9, 0.999999]]))
    assert walks.tolist() == [[0, 4, 0, 1]]


def test_walk_stays_on_isolated_node():
    indptr = np.array([0, 0, 1, 2], dtype=np.int64)
    indices = np.array([2, 1], dtype=np.int64)
    walks = py_walks(indptr, indices, np.array([0, 1], dtype=np.int64), np.full((2, 3), 0.5))
    assert walks.tolist() == [[0, 0, 0, 0], [1, 2, 1, 2]]


def test_python_sgns_single_pair_matches_closed_form():
    w_in = np.array([[0.1, -0.2], [0.3, 0.4]])
    w_out = np.array([[0.5, 0.1], [-0.2, 0.2]])
    vc, vo, vn = w_in[0].copy(), w_out[1].copy(), w_out[0].copy()
    lr = 0.5
    gpos = (1 - 1 / (1 + np.exp(-vc @ vo))) * lr
    gneg = (0 - 1 / (1 + np.exp(-vc @ vn))) * lr
    py_sgns(w_in, w_out, np.array([0]), np.array([1]), np.array([[0]]), lr, lr)
    assert np.allclose(w_out[1], vo + gpos * vc)
    assert np.allclose(w_out[0], vn + gneg * vc)
    assert np.allclose(w_in[0], vc + gpos * vo + gneg * vn)
    assert np.allclose(w_in[1], [0.3, 0.4])


def test_negative_equal_to_context_is_skipped():
    w_in = np.array([[0.1, 0.2]])
    w_out = np.array([[0.3, -0.1]])
    ref_in, ref_out = w_in.copy(), w_out.copy()
    py_sgns(ref_in, ref_out, np.array([0]), np.array([0]), np.zeros((1, 0), dtype=np.int64), 0.1, 0.1)
    py_sgns(w_in, w_out, np.array([0]), np.array([0]), np.zeros((1, 3), dtype=np.int64), 0.1, 0.1)
    assert np.array_equal(w_in, ref_in) and np.array_equal(w_out, ref_out)


@needs_cython
@pytest.mark.parametrize("seed", range(3))
def test_backends_agree_on_walks(seed):
    rng = np.random.default_rng(seed)
    n = 40
    a = rng.random((n, n)) < 0.1
    a = np.triu(a, 1)
    a = a | a.T
    indptr = np.concatenate([[0], np.cumsum(a.sum(1))]).astype(np.int64)
    indices = np.concatenate([np.flatnonzero(r) for r in a]).astype(np.int64)
    starts = rng.integers(0, n, 100).astype(np.int64)
    u = rng.random((100, 20))
    cy = kernels.BACKENDS["cython"]
    assert np.array_equal(cy.random_walks(indptr, indices, starts, u), py_walks(indptr, indices, starts, u))


@needs_cython
@pytest.mark.parametrize("seed", range(3))
def test_backends_agree_on_sgns(seed):
    rng = np.random.default_rng(seed)
    n, dim, pairs = 15, 8, 300
    w_in = rng.normal(0, 0.1, (n, dim))
    w_out = rng.normal(0, 0.1, (n, dim))
    c = rng.integers(0, n, pairs).astype(np.int64)
    o = rng.integers(0, n, pairs).astype(np.int64)
    neg = rng.integers(0, n, (pairs, 4)).astype(np.int64)
    a_in, a_out = w_in.copy(), w_out.copy()
    kernels.BACKENDS["cython"].sgns_train(a_in, a_out, c, o, neg, 0.05, 0.001)
    py_sgns(w_in, w_out, c, o, neg, 0.05, 0.001)
    assert np.allclose(a_in, w_in, rtol=1e-10, atol=1e-12)
    assert np.allclose(a_out, w_out, rtol=1e-10, atol=1e-12)
