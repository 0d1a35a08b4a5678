"""GCN, GAT and CoupledGNN cascade predictors, with and without the spillover signal.

Several cascades over the same graph are processed together by stacking
their node rows; edges are replicated with row offsets so every cascade
stays an independent block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor, glorot
from .embeddings import MESSAGE_DIM
from .graph import SocialGraph

KINDS = ("gcn", "gat", "cgnn", "se-gcn", "se-gat", "se-cgnn")
HEAD_BIAS = -4.0
DEFAULT_ACTIVATION = -4.0


# ------------------------------------------------------------------ structure


@dataclass(frozen=True)
class GraphStructure:
    """Message-flow edges of a follower graph.

    A follower ``v`` of ``u`` perceives ``u``'s posts, so every social edge
    ``v -> u`` becomes a flow edge ``u -> v`` and ``N(v)`` is the set of
    ``v``'s followees.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray

    @classmethod
    def from_graph(cls, g: SocialGraph) -> "GraphStructure":
        follower, followee = g.edge_index()
        order = np.lexsort((followee, follower))
        return cls(len(g), followee[order].copy(), follower[order].copy())

    @classmethod
    def from_arrays(cls, n: int, src, dst) -> "GraphStructure":
        return cls(n, np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64))


@dataclass
class Batch:
    x: np.ndarray  # (B*N, F) initial attributes
    observed: np.ndarray  # (B*N, 1) 1 for observed adopters
    messages: np.ndarray  # (B, message_dim)
    src: np.ndarray
    dst: np.ndarray
    loop_src: np.ndarray
    loop_dst: np.ndarray
    edge_graph: np.ndarray
    row_graph: np.ndarray
    row_node: np.ndarray
    size: int
    n_nodes: int

    @property
    def rows(self) -> int:
        return self.size * self.n_nodes


def make_batch(structure: GraphStructure, static: np.ndarray, statuses, messages) -> Batch:
    """Stack cascades; ``statuses`` is a sequence of 0/1 vectors over the nodes."""
    statuses = np.asarray(statuses, dtype=np.float64).reshape(-1, structure.n)
    messages = np.asarray(messages, dtype=np.float64).reshape(statuses.shape[0], -1)
    b, n = statuses.shape
    if static.shape[0] != n:
        raise ValueError(f"static attributes have {static.shape[0]} rows for {n} nodes")
    x = np.hstack([statuses.reshape(-1, 1), np.tile(static, (b, 1))])
    offsets = np.repeat(np.arange(b) * n, structure.src.size)
    src = np.tile(structure.src, b) + offsets
    dst = np.tile(structure.dst, b) + offsets
    loops = np.arange(b * n)
    return Batch(
        x=x,
        observed=statuses.reshape(-1, 1).copy(),
        messages=messages,
        src=src,
        dst=dst,
        loop_src=np.concatenate([src, loops]),
        loop_dst=np.concatenate([dst, loops]),
        edge_graph=np.repeat(np.arange(b), structure.src.size),
        row_graph=np.repeat(np.arange(b), n),
        row_node=np.tile(np.arange(n), b),
        size=b,
        n_nodes=n,
    )


# ------------------------------------------------------------------ layers


def gcn_layer(h: Tensor, w: Tensor, src, dst, n: int) -> Tensor:
    """Mean over ``N(v) ∪ {v}`` then ``LeakyReLU(W a_v)``; edges must include self-loops."""
    a = ad.segment_mean(ad.gather(h, src), dst, n)
    return ad.leaky_relu(ad.matmul(a, w))


def attention_weights(z: Tensor, att_src: Tensor, att_dst: Tensor, src, dst, n: int) -> Tensor:
    """``softmax_u LeakyReLU(γᵀ[z_u ‖ z_v])`` over the edges into each ``v``."""
    score = ad.add(ad.gather(ad.matmul(z, att_src), src), ad.gather(ad.matmul(z, att_dst), dst))
    return ad.neighbor_softmax(ad.leaky_relu(score), dst, n)


def gat_layer(h: Tensor, w: Tensor, att_src: Tensor, att_dst: Tensor, src, dst, n: int) -> Tensor:
    z = ad.matmul(h, w)
    beta = attention_weights(z, att_src, att_dst, src, dst, n)
    a = ad.segment_sum(ad.mul(beta, ad.gather(h, src)), dst, n)
    return ad.leaky_relu(ad.matmul(a, w))


def influ_gate(r_u, r_v, w, beta_src, beta_dst) -> float:
    """``β[W r_u ‖ W r_v]`` for a single pair of row vectors."""
    r_u, r_v, w = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (r_u, r_v, w))
    return ((r_u @ w) @ np.reshape(beta_src, (-1, 1)) + (r_v @ w) @ np.reshape(beta_dst, (-1, 1))).item()


def se_influ_gate(r_u, r_v, d_m, w, w_d, beta_src, beta_dst, beta_msg) -> float:
    """``β[W r_u ‖ W r_v ‖ W_d d_m]`` for a single pair."""
    d = np.atleast_2d(np.asarray(d_m, dtype=np.float64)) @ np.asarray(w_d, dtype=np.float64)
    return influ_gate(r_u, r_v, w, beta_src, beta_dst) + (d @ np.reshape(beta_msg, (-1, 1))).item()


def clamp_observed(observed: np.ndarray, s: Tensor) -> Tensor:
    """1 on observed rows, ``s`` elsewhere."""
    return ad.add(observed, ad.mul(1.0 - observed, s))


def coupled_step(
    s: Tensor,
    r: Tensor,
    layer: dict,
    src,
    dst,
    n: int,
    observed: np.ndarray,
    default_activation: Tensor,
    msg_gate: Tensor | None = None,
    update_influence: bool = True,
) -> tuple[Tensor, Tensor | None]:
    """One CoupledGNN layer.

    ``layer`` holds ``W, beta_src, beta_dst, mu_s, mu_a`` and, when the
    influence representation is updated, ``att_src, att_dst, W_r``.
    ``msg_gate`` is the per-edge ``β_msg · W_d d_m`` term of the spillover
    variant.  ``default_activation`` is ``p_v`` per row.
    """
    z = ad.matmul(r, layer["W"])
    gate = ad.add(ad.gather(ad.matmul(z, layer["beta_src"]), src), ad.gather(ad.matmul(z, layer["beta_dst"]), dst))
    if msg_gate is not None:
        gate = ad.add(gate, msg_gate)
    s_src = ad.gather(s, src)
    a = ad.add(ad.segment_sum(ad.mul(gate, s_src), dst, n), default_activation)
    pre = ad.add(ad.mul(layer["mu_s"], s), ad.mul(layer["mu_a"], a))
    s_next = clamp_observed(observed, ad.sigmoid(pre))
    if not update_influence:
        return s_next, None
    eta = attention_weights(z, layer["att_src"], layer["att_dst"], src, dst, n)
    msg = ad.segment_sum(ad.mul(ad.mul(eta, s_src), ad.gather(r, src)), dst, n)
    r_next = ad.leaky_relu(ad.matmul(ad.concat([r, msg]), layer["W_r"]))
    return s_next, r_next


def predict_popularity(statuses: Tensor, row_graph, n_graphs: int) -> Tensor:
    """Sum of node statuses per cascade."""
    return ad.segment_sum(statuses, row_graph, n_graphs)


# ------------------------------------------------------------------ models


@dataclass
class Forward:
    statuses: Tensor  # (B*N, 1), observed rows clamped to 1
    predictions: Tensor  # (B, 1)


class CascadeModel:
    kind: str

    def __init__(self, kind: str, in_dim: int, n_nodes: int, k: int = 2, hidden: int = 32,
                 msg_dim: int = MESSAGE_DIM, seed: int = 0):
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}; choose from {KINDS}")
        if k < 1:
            raise ValueError("k must be positive")
        self.kind = kind
        self.in_dim = in_dim
        self.n_nodes = n_nodes
        self.k = k
        self.hidden = hidden
        self.msg_dim = msg_dim
        self.seed = seed
        self.params = ParameterSet()
        self._init(np.random.default_rng(seed))

    @property
    def uses_message(self) -> bool:
        return self.kind.startswith("se-")

    @property
    def family(self) -> str:
        return self.kind.removeprefix("se-")

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "in_dim": self.in_dim,
            "n_nodes": self.n_nodes,
            "k": self.k,
            "hidden": self.hidden,
            "msg_dim": self.msg_dim,
            "seed": self.seed,
        }

    def _init(self, rng):
        raise NotImplementedError

    def forward(self, batch: Batch) -> Forward:
        raise NotImplementedError

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).predictions.value[:, 0].copy()


class GNNStack(CascadeModel):
    """GCN or GAT layers followed by the activation head and a sum readout."""

    def _init(self, rng):
        p, h = self.params, self.hidden
        width = self.in_dim
        for layer in range(self.k):
            p.add(f"layer{layer}.W", glorot(rng, width, h))
            if self.family == "gat":
                p.add(f"layer{layer}.att_src", glorot(rng, h, 1))
                p.add(f"layer{layer}.att_dst", glorot(rng, h, 1))
            width = h
        p.add("head.W_h", glorot(rng, h, h))
        head_in = h
        if self.uses_message:
            p.add("head.W_d", glorot(rng, self.msg_dim, h))
            head_in = 2 * h
        p.add("head.fc1.W", glorot(rng, head_in, h))
        p.add("head.fc1.b", np.zeros((1, h)))
        p.add("head.fc2.W", glorot(rng, h, h))
        p.add("head.fc2.b", np.zeros((1, h)))
        p.add("head.fc3.W", glorot(rng, h, 1))
        p.add("head.fc3.b", np.full((1, 1), HEAD_BIAS))

    def embed(self, batch: Batch) -> Tensor:
        p = self.params
        h = Tensor(batch.x)
        for layer in range(self.k):
            w = p[f"layer{layer}.W"]
            if self.family == "gat":
                h = gat_layer(h, w, p[f"layer{layer}.att_src"], p[f"layer{layer}.att_dst"],
                              batch.loop_src, batch.loop_dst, batch.rows)
            else:
                h = gcn_layer(h, w, batch.loop_src, batch.loop_dst, batch.rows)
        return h

    def head(self, h: Tensor, batch: Batch) -> Tensor:
        """Predicted final status before clamping."""
        p = self.params
        x = ad.matmul(h, p["head.W_h"])
        if self.uses_message:
            d = ad.matmul(Tensor(batch.messages), p["head.W_d"])
            x = ad.concat([x, ad.gather(d, batch.row_graph)])
        x = ad.leaky_relu(ad.add(ad.matmul(x, p["head.fc1.W"]), p["head.fc1.b"]))
        x = ad.leaky_relu(ad.add(ad.matmul(x, p["head.fc2.W"]), p["head.fc2.b"]))
        return ad.sigmoid(ad.add(ad.matmul(x, p["head.fc3.W"]), p["head.fc3.b"]))

    def forward(self, batch: Batch) -> Forward:
        s = clamp_observed(batch.observed, self.head(self.embed(batch), batch))
        return Forward(s, predict_popularity(s, batch.row_graph, batch.size))


class CoupledGNN(CascadeModel):
    """Coupled activation-status and influence networks."""

    def _init(self, rng):
        p, h = self.params, self.hidden
        width = self.in_dim
        for layer in range(self.k):
            p.add(f"layer{layer}.W", glorot(rng, width, h))
            p.add(f"layer{layer}.beta_src", glorot(rng, h, 1))
            p.add(f"layer{layer}.beta_dst", glorot(rng, h, 1))
            if self.uses_message:
                p.add(f"layer{layer}.beta_msg", glorot(rng, h, 1))
            p.add(f"layer{layer}.mu_s", np.ones((1, 1)))
            p.add(f"layer{layer}.mu_a", np.ones((1, 1)))
            if layer < self.k - 1:
                p.add(f"layer{layer}.att_src", glorot(rng, h, 1))
                p.add(f"layer{layer}.att_dst", glorot(rng, h, 1))
                p.add(f"layer{layer}.W_r", glorot(rng, 2 * width, h))
                width = h
        p.add("p", np.full((self.n_nodes, 1), DEFAULT_ACTIVATION))
        if self.uses_message:
            p.add("W_d", glorot(rng, self.msg_dim, h))

    def layer_params(self, layer: int) -> dict:
        prefix = f"layer{layer}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def run(self, batch: Batch) -> list[Tensor]:
        """Status tensors of every layer, starting with the observed statuses."""
        p = self.params
        s = Tensor(batch.observed)
        r = Tensor(batch.x)
        default = ad.gather(p["p"], batch.row_node)
        dproj = ad.matmul(Tensor(batch.messages), p["W_d"]) if self.uses_message else None
        history = [s]
        for layer in range(self.k):
            lp = self.layer_params(layer)
            msg_gate = None
            if dproj is not None:
                msg_gate = ad.gather(ad.matmul(dproj, lp["beta_msg"]), batch.edge_graph)
            s, r = coupled_step(s, r, lp, batch.src, batch.dst, batch.rows, batch.observed, default,
                                msg_gate, update_influence=layer < self.k - 1)
            history.append(s)
        return history

    def forward(self, batch: Batch) -> Forward:
        s = self.run(batch)[-1]
        return Forward(s, predict_popularity(s, batch.row_graph, batch.size))


def build_model(kind: str, in_dim: int, n_nodes: int, k: int = 2, hidden: int = 32,
                msg_dim: int = MESSAGE_DIM, seed: int = 0) -> CascadeModel:
    cls = CoupledGNN if kind.endswith("cgnn") else GNNStack
    return cls(kind, in_dim, n_nodes, k=k, hidden=hidden, msg_dim=msg_dim, seed=seed)


def model_from_config(cfg: dict) -> CascadeModel:
    return build_model(**{k: cfg[k] for k in ("kind", "in_dim", "n_nodes", "k", "hidden", "msg_dim", "seed")})
