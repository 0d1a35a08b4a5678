import numpy as np
import pytest

from spillcast.graph import observe
from spillcast.pipeline import build_dataset
from spillcast.synth import BenchmarkScenario, simulate_benchmark


@pytest.fixture(scope="module")
def corpus():
    return simulate_benchmark(BenchmarkScenario(n_users=80, messages=80, seed=3))


@pytest.fixture(scope="module")
def dataset(corpus):
    return build_dataset(corpus.graph, corpus.events, node_dim=8, walks_per_node=2, walk_length=10, seed=1)


def test_samples_consistent_with_cascades(corpus, dataset):
    g = dataset.graph
    kinds = corpus.truth["message_kinds"]
    by_id = {c.message_id: c for c in dataset.cascades}
    assert len(dataset.samples) == dataset.summary.retained == len(dataset.cascades)
    for s in dataset.samples.samples:
        c = by_id[s.message_id]
        assert s.truth == c.final_size == int(s.final.sum())
        assert np.all(s.observed <= s.final)
        obs = observe(c, 10800)
        assert s.n_observed == obs.n_observed
        assert {g.nodes[i] for i in np.flatnonzero(s.observed)} == set(obs.users)
        assert s.preventive == (kinds[s.message_id] == "preventive")
        assert s.truth >= 3


def test_static_layout(dataset):
    static = dataset.samples.static
    assert static.shape == (len(dataset.graph), 128 + 8)
    assert np.array_equal(static[:, 128:], dataset.node_embedding.aligned(dataset.graph))


def test_subsets_partition(dataset):
    parts = dataset.subsets()
    assert len(parts["preventive"]) + len(parts["other"]) == len(parts["all"])
    assert len(parts["preventive"]) > 0 and len(parts["other"]) > 0


def test_deterministic(corpus, dataset):
    again = build_dataset(corpus.graph, corpus.events, node_dim=8, walks_per_node=2, walk_length=10, seed=1)
    assert again.samples.static.tobytes() == dataset.samples.static.tobytes()
    assert [s.message_id for s in again.samples.samples] == [s.message_id for s in dataset.samples.samples]


def test_min_size_and_window(corpus):
    ds = build_dataset(corpus.graph, corpus.events, node_dim=4, walks_per_node=1, walk_length=5,
                       min_size=10, window=0)
    assert all(s.truth >= 10 for s in ds.samples.samples)
    assert all(s.n_observed == 1 for s in ds.samples.samples)
