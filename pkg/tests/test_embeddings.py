import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spillcast import kernels
from spillcast.embeddings import (
    HASH_BINS,
    MESSAGE_DIM,
    HashingProvider,
    NodeEmbedding,
    PrecomputedProvider,
    assemble_attributes,
    authored_messages,
    deepwalk_embed,
    embed_message,
    generate_walks,
    message_embeddings,
    read_vectors,
    status_vector,
    token_bin,
    tokenize,
    user_message_matrix,
    write_vectors,
)
from spillcast.graph import Event, SocialGraph, observe, Cascade


def two_cliques():
    a = [f"a{i}" for i in range(6)]
    b = [f"b{i}" for i in range(6)]
    edges = [(x, y) for grp in (a, b) for x in grp for y in grp if x < y]
    edges.append(("a0", "b0"))
    return SocialGraph.from_edges(edges), a, b


def test_tokenize_lowercases_words():
    assert tokenize("Wear a MASK, #StayHome!") == ["wear", "a", "mask", "stayhome"]


@given(st.text(min_size=1, max_size=20))
def test_token_bin_range_and_stability(tok):
    b = token_bin(tok)
    assert 0 <= b < HASH_BINS and token_bin(tok) == b


def test_hashing_provider_shape_and_determinism():
    p, q = HashingProvider(seed=3), HashingProvider(seed=3)
    v = p.embed("m", "stay home and wear a mask")
    assert v.shape == (MESSAGE_DIM,)
    assert np.array_equal(v, q.embed("other", "stay home and wear a mask"))
    assert np.all(p.embed("m", "") == 0)


def test_hashing_provider_scale_and_linearity():
    p = HashingProvider(seed=0)
    norms = [np.linalg.norm(p.embed(str(i), f"word{i} token{i} thing{i}")) for i in range(200)]
    assert 0.8 < np.mean(norms) < 1.2
    # normalised bag: repeating the text changes nothing
    assert np.allclose(p.embed("a", "lost job"), p.embed("b", "lost job lost job"))


def test_precomputed_provider_and_fallback(tmp_path):
    vec = np.arange(4, dtype=float)
    p = PrecomputedProvider({"m1": vec}, dim=4)
    assert np.array_equal(p.embed("m1", None), vec)
    with pytest.raises(KeyError):
        p.embed("m2", "x")
    fb = PrecomputedProvider({"m1": vec}, dim=4, fallback=HashingProvider(dim=4))
    assert fb.embed("m2", "hello").shape == (4,)
    with pytest.raises(ValueError):
        PrecomputedProvider({"m": np.ones(3)}, dim=4)
    path = tmp_path / "v.txt"
    write_vectors({"m1": vec, "m2": vec + 0.5}, path)
    loaded = PrecomputedProvider.load(path, dim=4)
    assert np.array_equal(loaded.embed("m2", None), vec + 0.5)
    with pytest.raises(ValueError, match="expected 5"):
        read_vectors(path, dim=5)


def test_message_without_text_embeds_to_zero():
    assert np.all(embed_message(Event("1", "1", "u", 0)) == 0)


def test_user_message_vector_is_mean_of_authored_originals():
    g = SocialGraph.from_edges([("u", "v")])
    events = [Event("1", "1", "u", 0, frozenset(), "a"), Event("2", "2", "u", 1, frozenset(), "b"),
              Event("3", "1", "v", 2)]
    embs = {"1": np.array([1.0, 0.0]), "2": np.array([0.0, 3.0])}
    assert authored_messages(events) == {"u": ["1", "2"]}
    m = user_message_matrix(g, events, embs, dim=2)
    rows = dict(zip(g.nodes, m))
    assert np.allclose(rows["u"], [0.5, 1.5]) and np.allclose(rows["v"], 0)
    m2 = user_message_matrix(g, events, embs, exclude={"2"}, dim=2)
    assert np.allclose(dict(zip(g.nodes, m2))["u"], [1.0, 0.0])
    assert set(message_embeddings(events)) == {"1", "2"}


def test_attributes_layout():
    g = SocialGraph.from_edges([("u", "v"), ("w", "v")])
    emb = NodeEmbedding(g.nodes, np.arange(6, dtype=float).reshape(3, 2))
    msg = np.ones((3, 4))
    obs = observe(Cascade("m", (("v", 0), ("u", 10), ("w", 99999))), 100)
    attrs = assemble_attributes(obs, g, emb, msg)
    assert attrs.width == 1 + 4 + 2
    assert np.array_equal(attrs.status, status_vector(g, ["v", "u"]))
    assert np.array_equal(attrs.values[:, 5:], emb.aligned(g))


def test_node_embedding_validation():
    with pytest.raises(ValueError):
        NodeEmbedding(("a",), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        NodeEmbedding(("a",), np.array([[np.nan]]))
    with pytest.raises(KeyError):
        NodeEmbedding(("a",), np.zeros((1, 2))).aligned(SocialGraph(["b"], []))


def test_walks_stay_on_edges():
    g, _, _ = two_cliques()
    walks = generate_walks(g, 2, 10, np.random.default_rng(0))
    assert walks.shape == (2 * len(g), 10)
    und = g.undirected_csr()
    for w in walks:
        for x, y in zip(w[:-1], w[1:]):
            assert und[x, y]


def test_deepwalk_separates_communities():
    g, a, b = two_cliques()
    emb = deepwalk_embed(g, walks_per_node=20, walk_length=20, dim=16, seed=1, epochs=3)
    v = emb.vectors / np.linalg.norm(emb.vectors, axis=1, keepdims=True)
    idx = g.index
    within = np.mean([v[idx[x]] @ v[idx[y]] for grp in (a, b) for x in grp[1:] for y in grp[1:] if x != y])
    across = np.mean([v[idx[x]] @ v[idx[y]] for x in a[1:] for y in b[1:]])
    assert within > across + 0.3


def test_deepwalk_deterministic_and_isolated_zero():
    g = SocialGraph(["a", "b", "c", "z"], [("a", "b"), ("b", "c")])
    with pytest.warns(UserWarning, match="isolated"):
        e1 = deepwalk_embed(g, dim=8, seed=5)
    with pytest.warns(UserWarning):
        e2 = deepwalk_embed(g, dim=8, seed=5)
    assert np.array_equal(e1.vectors, e2.vectors)
    assert np.all(e1["z"] == 0) and np.any(e1["a"] != 0)


@pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled kernels not built")
def test_deepwalk_backends_agree():
    g, _, _ = two_cliques()
    e1 = deepwalk_embed(g, walks_per_node=3, walk_length=8, dim=8, seed=2, backend="cython")
    e2 = deepwalk_embed(g, walks_per_node=3, walk_length=8, dim=8, seed=2, backend="python")
    assert np.allclose(e1.vectors, e2.vectors, rtol=1e-9, atol=1e-12)
