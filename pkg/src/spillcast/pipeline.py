"""From a graph and an event log to batched training samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import (
    HashingProvider,
    MessageEmbeddingProvider,
    NodeEmbedding,
    deepwalk_embed,
    message_embeddings,
    static_attributes,
    status_vector,
    user_message_matrix,
)
from .graph import DEFAULT_WINDOW, Cascade, CascadeSummary, Event, SocialGraph, build_cascades, observe
from .models import GraphStructure
from .spillover import PREVENTIVE, TopicLexicon, tag_topics
from .training import CascadeSet, Sample

SUBSETS = ("all", "preventive", "other")


@dataclass
class Dataset:
    graph: SocialGraph
    events: list[Event]
    cascades: list[Cascade]
    summary: CascadeSummary
    node_embedding: NodeEmbedding
    samples: CascadeSet

    def subsets(self, data: CascadeSet | None = None) -> dict[str, CascadeSet]:
        """The full set, the preventive-measure cascades and their complement."""
        data = data if data is not None else self.samples
        return {
            "all": data,
            "preventive": data.where(lambda s: s.preventive),
            "other": data.where(lambda s: not s.preventive),
        }


def build_samples(
    g: SocialGraph,
    cascades: Sequence[Cascade],
    static: np.ndarray,
    messages: dict[str, np.ndarray],
    roots: dict[str, Event],
    window: float = DEFAULT_WINDOW,
    target: str = PREVENTIVE,
) -> CascadeSet:
    samples = []
    for c in cascades:
        obs = observe(c, window)
        root = roots[c.message_id]
        samples.append(
            Sample(
                message_id=c.message_id,
                observed=status_vector(g, obs.users),
                final=status_vector(g, c.users),
                truth=c.final_size,
                message=messages[c.message_id],
                preventive=target in root.topics,
                cascade=obs,
            )
        )
    return CascadeSet(GraphStructure.from_graph(g), static, samples)


def build_dataset(
    g: SocialGraph,
    events: Sequence[Event],
    lexicon: TopicLexicon | None = None,
    window: float = DEFAULT_WINDOW,
    provider: MessageEmbeddingProvider | None = None,
    node_dim: int = 64,
    walks_per_node: int = 10,
    walk_length: int = 40,
    min_size: int = 3,
    seed: int = 0,
    node_embedding: NodeEmbedding | None = None,
) -> Dataset:
    """Tag topics, build and observe cascades, and assemble node attributes.

    ``δ_v`` averages the embeddings of every original message ``v`` authored;
    retweets carry no text of their own, so no later adopter leaks into it.
    """
    lexicon = lexicon or TopicLexicon.default()
    provider = provider or HashingProvider(seed=seed)
    tagged = tag_topics(events, lexicon)
    cascades, summary = build_cascades(tagged, g, min_size)
    if node_embedding is None:
        node_embedding = deepwalk_embed(g, walks_per_node=walks_per_node, walk_length=walk_length,
                                        dim=node_dim, seed=seed)
    messages = message_embeddings(tagged, provider)
    delta = user_message_matrix(g, tagged, messages, dim=provider.dim)
    static = static_attributes(g, node_embedding, delta)
    roots = {e.message_id: e for e in tagged if e.is_original}
    samples = build_samples(g, cascades, static, messages, roots, window)
    return Dataset(g, tagged, cascades, summary, node_embedding, samples)
