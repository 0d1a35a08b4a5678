"""Node structural embeddings, message embeddings and node attributes."""

from __future__ import annotations

import hashlib
import re
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import kernels
from .graph import Event, ObservedCascade, SocialGraph

MESSAGE_DIM = 128
HASH_BINS = 4096
_TOKEN = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class NodeEmbedding:
    """Dense vectors aligned with ``nodes``."""

    nodes: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] != len(self.nodes):
            raise ValueError("vectors must be (len(nodes), dim)")
        if not np.all(np.isfinite(vecs)):
            raise ValueError("non-finite embedding entries")
        vecs.flags.writeable = False
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "_pos", {n: i for i, n in enumerate(self.nodes)})

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, node: str) -> np.ndarray:
        return self.vectors[self._pos[node]]

    def __contains__(self, node) -> bool:
        return node in self._pos

    def aligned(self, g: SocialGraph) -> np.ndarray:
        """Rows in ``g.nodes`` order."""
        rows = []
        for n in g.nodes:
            if n not in self._pos:
                raise KeyError(f"no embedding for node {n!r}")
            rows.append(self._pos[n])
        return self.vectors[rows]


def _walk_pairs(walks: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    length = walks.shape[1]
    for off in range(1, min(window, length - 1) + 1):
        left, right = walks[:, :-off].ravel(), walks[:, off:].ravel()
        centers += [left, right]
        contexts += [right, left]
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def generate_walks(
    g: SocialGraph, walks_per_node: int, walk_length: int, rng: np.random.Generator, backend=None
) -> np.ndarray:
    """Uniform random walks over the undirected view of ``g`` (positional ids)."""
    csr = g.undirected_csr()
    indptr = csr.indptr.astype(np.int64)
    indices = csr.indices.astype(np.int64)
    deg = np.diff(indptr)
    movable = np.flatnonzero(deg > 0)
    if movable.size == 0 or walk_length < 1:
        return np.zeros((0, max(walk_length, 1)), dtype=np.int64)
    starts = np.concatenate([rng.permutation(movable) for _ in range(walks_per_node)]).astype(np.int64)
    uniforms = rng.random((starts.size, walk_length - 1))
    core = kernels.get_backend(backend)
    return core.random_walks(indptr, indices, starts, np.ascontiguousarray(uniforms))


def deepwalk_embed(
    g: SocialGraph,
    walks_per_node: int = 10,
    walk_length: int = 40,
    window: int = 5,
    dim: int = 64,
    negatives: int = 5,
    seed: int = 0,
    epochs: int = 1,
    lr: float = 0.025,
    backend: str | None = None,
) -> NodeEmbedding:
    """DeepWalk: skip-gram with negative sampling over uniform random walks.

    Isolated nodes get the zero vector.
    """
    n = len(g)
    if n == 0:
        raise ValueError("cannot embed an empty graph")
    rng = np.random.default_rng(seed)
    w_in = (rng.random((n, dim)) - 0.5) / dim
    w_out = np.zeros((n, dim))
    walks = generate_walks(g, walks_per_node, walk_length, rng, backend)
    seen = np.zeros(n, dtype=bool)
    if walks.size:
        seen[np.unique(walks)] = True
        freq = np.bincount(walks.ravel(), minlength=n).astype(np.float64) ** 0.75
        noise = freq / freq.sum()
        core = kernels.get_backend(backend)
        centers, contexts = _walk_pairs(walks, window)
        for epoch in range(epochs):
            order = rng.permutation(centers.size)
            c, o = centers[order], contexts[order]
            neg = rng.choice(n, size=(c.size, negatives), p=noise).astype(np.int64)
            hi = lr * (1 - epoch / epochs)
            lo = max(lr * (1 - (epoch + 1) / epochs), lr * 1e-4)
            core.sgns_train(w_in, w_out, c, o, np.ascontiguousarray(neg), hi, lo)
    isolated = ~seen
    if isolated.any():
        warnings.warn(f"{int(isolated.sum())} isolated node(s) embedded as zero vectors", stacklevel=2)
        w_in[isolated] = 0.0
    return NodeEmbedding(g.nodes, w_in)


class MessageEmbeddingProvider(Protocol):
    dim: int

    def embed(self, message_id: str, text: str | None) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def token_bin(token: str, bins: int = HASH_BINS) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % bins


class HashingProvider:
    """Hashed bag of tokens, L2-normalised, then a fixed Gaussian projection.

    Projection entries are drawn from ``N(0, 1/dim)`` so outputs have roughly
    unit norm.
    """

    def __init__(self, dim: int = MESSAGE_DIM, bins: int = HASH_BINS, seed: int = 0):
        self.dim = dim
        self.bins = bins
        self.seed = seed
        self.projection = np.random.default_rng(seed).standard_normal((bins, dim)) / np.sqrt(dim)
        self.projection.flags.writeable = False

    def bag(self, text: str | None) -> np.ndarray:
        counts = np.zeros(self.bins)
        for tok in tokenize(text or ""):
            counts[token_bin(tok, self.bins)] += 1.0
        return counts

    def embed(self, message_id: str, text: str | None) -> np.ndarray:
        counts = self.bag(text)
        norm = np.linalg.norm(counts)
        if norm == 0:
            return np.zeros(self.dim)
        return (counts / norm) @ self.projection


class PrecomputedProvider:
    """Vectors from an external encoder, keyed by message id."""

    def __init__(self, vectors: Mapping[str, np.ndarray], dim: int = MESSAGE_DIM, fallback=None):
        self.dim = dim
        self.vectors = {}
        for k, v in vectors.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (dim,) or not np.all(np.isfinite(v)):
                raise ValueError(f"bad vector for message {k!r}")
            self.vectors[str(k)] = v
        self.fallback = fallback

    @classmethod
    def load(cls, path, dim: int = MESSAGE_DIM, fallback=None) -> "PrecomputedProvider":
        return cls(read_vectors(path, dim), dim, fallback)

    def embed(self, message_id: str, text: str | None) -> np.ndarray:
        try:
            return self.vectors[message_id]
        except KeyError:
            if self.fallback is None:
                raise KeyError(f"no precomputed embedding for message {message_id!r}") from None
            return self.fallback.embed(message_id, text)


def embed_message(message: Event, provider: MessageEmbeddingProvider | None = None) -> np.ndarray:
    provider = provider or HashingProvider()
    if not message.text:
        return np.zeros(provider.dim)
    vec = np.asarray(provider.embed(message.message_id, message.text), dtype=np.float64)
    if vec.shape != (provider.dim,):
        raise ValueError(f"provider returned shape {vec.shape}")
    return vec


def message_embeddings(events: Iterable[Event], provider: MessageEmbeddingProvider | None = None) -> dict[str, np.ndarray]:
    """Embedding of every original message."""
    provider = provider or HashingProvider()
    return {e.message_id: embed_message(e, provider) for e in events if e.is_original}


def user_message_vector(user: str, posted: Mapping[str, Sequence[str]], embeddings: Mapping[str, np.ndarray], dim: int = MESSAGE_DIM) -> np.ndarray:
    """Mean embedding of the messages ``user`` authored; zero when there are none."""
    mids = posted.get(user, ())
    if not mids:
        return np.zeros(dim)
    return np.mean([embeddings[m] for m in mids], axis=0)


def authored_messages(events: Iterable[Event], exclude: Iterable[str] = ()) -> dict[str, list[str]]:
    skip = set(exclude)
    out: dict[str, list[str]] = {}
    for e in events:
        if e.is_original and e.message_id not in skip:
            out.setdefault(e.user_id, []).append(e.message_id)
    return out


def user_message_matrix(
    g: SocialGraph, events: Iterable[Event], embeddings: Mapping[str, np.ndarray], exclude: Iterable[str] = (), dim: int = MESSAGE_DIM
) -> np.ndarray:
    posted = authored_messages(events, exclude)
    return np.vstack([user_message_vector(u, posted, embeddings, dim) for u in g.nodes]) if len(g) else np.zeros((0, dim))


@dataclass(frozen=True)
class AttributeMatrix:
    nodes: tuple[str, ...]
    values: np.ndarray  # rows: s ‖ δ ‖ e

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def status(self) -> np.ndarray:
        return self.values[:, 0]


def static_attributes(g: SocialGraph, node_emb: NodeEmbedding, msg_vectors: np.ndarray) -> np.ndarray:
    """The cascade-independent ``δ ‖ e`` block, rows in ``g.nodes`` order."""
    msg_vectors = np.asarray(msg_vectors, dtype=np.float64)
    if msg_vectors.shape[0] != len(g):
        raise ValueError("message vectors must have one row per node")
    return np.hstack([msg_vectors, node_emb.aligned(g)])


def status_vector(g: SocialGraph, users: Iterable[str]) -> np.ndarray:
    s = np.zeros(len(g))
    for u in users:
        if u in g.index:
            s[g.index[u]] = 1.0
    return s


def assemble_attributes(
    observed: ObservedCascade, g: SocialGraph, node_emb: NodeEmbedding, msg_vectors: np.ndarray
) -> AttributeMatrix:
    block = static_attributes(g, node_emb, msg_vectors)
    s = status_vector(g, observed.users)
    return AttributeMatrix(g.nodes, np.hstack([s[:, None], block]))


def write_vectors(vectors: Mapping[str, np.ndarray] | NodeEmbedding, path) -> None:
    if isinstance(vectors, NodeEmbedding):
        items = zip(vectors.nodes, vectors.vectors)
    else:
        items = vectors.items()
    with open(path, "w", encoding="utf-8") as fh:
        for key, vec in items:
            fh.write(key + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def read_vectors(path, dim: int | None = None) -> dict[str, np.ndarray]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if dim is not None and vec.size != dim:
                raise ValueError(f"line {lineno}: expected {dim} values, got {vec.size}")
            out[parts[0]] = vec
    return out
