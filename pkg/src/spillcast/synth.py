"""Synthetic social graphs and event logs with a planted spillover effect.

Two generators share the same graph, topic-post and exposure machinery:

* :func:`simulate_cascades` plants per-user activation for preventive-measure
  messages so that each exposure group's activation likelihood is known in
  closed form.
* :func:`simulate_benchmark` diffuses many messages independent-cascade
  style, where preventive-measure messages spread according to the exposure
  of the users they reach and other messages spread at a flat rate.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx
import numpy as np
import yaml

from .graph import Event, SocialGraph, node_key, write_events, write_graph
from .spillover import PREVENTIVE, SPILLOVER_TOPICS, TopicLexicon

# Keywords used when writing synthetic texts; each matches exactly one topic.
TOPIC_WORDS = {
    PREVENTIVE: ("mask", "stayathome", "washhand", "socialdistancing", "staysafe", "lockdown"),
    "unemployment": ("jobsearch", "unemployment", "recession", "career", "recruitment"),
    "panic-buying": ("panicbuying", "toiletpaper", "handsanitizer", "panicshopping"),
    "school-closures": ("homeschool", "noschool", "shutdownschools", "schoolclosure"),
}
FILLER = ("today", "news", "update", "people", "time", "city", "week", "thoughts", "really", "everyone",
          "covid", "pandemic", "world", "read", "please", "health", "family", "friends")
GENERIC_WORDS = ("cases", "hospital", "vaccine", "testing", "symptoms", "numbers", "government", "reports")

DAY = 86400


# ------------------------------------------------------------------ graphs


def _orient(edges: Iterable[tuple[int, int]], mutual: float, rng: np.random.Generator, newer_follows: bool):
    out = set()
    for a, b in sorted((min(e), max(e)) for e in edges):
        if rng.random() < mutual:
            out.add((a, b))
            out.add((b, a))
        elif newer_follows or rng.random() < 0.5:
            out.add((b, a))
        else:
            out.add((a, b))
    return out


def generate_graph(kind: str, n: int, params: Mapping | None = None, seed: int = 0) -> SocialGraph:
    """Weakly connected directed follower graph on nodes ``"0" .. str(n-1)``.

    ``small-world``: Watts-Strogatz ring with ``k`` neighbours and rewiring
    probability ``p``.  ``preferential-attachment``: Barabasi-Albert with
    ``m`` links per new node, newcomers following earlier nodes.  In both,
    an undirected link becomes a mutual follow with probability ``mutual``.
    """
    params = dict(params or {})
    if n < 3:
        raise ValueError("n must be at least 3")
    mutual = float(params.pop("mutual", 0.3))
    if not 0.0 <= mutual <= 1.0:
        raise ValueError("mutual must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    nx_seed = int(rng.integers(2**31 - 1))
    if kind == "small-world":
        k = int(params.pop("k", 4))
        p = float(params.pop("p", 0.1))
        if k < 2 or k >= n or not 0 <= p <= 1:
            raise ValueError(f"invalid small-world parameters k={k}, p={p} for n={n}")
        und = nx.connected_watts_strogatz_graph(n, k, p, tries=200, seed=nx_seed)
        newer = False
    elif kind == "preferential-attachment":
        m = int(params.pop("m", 2))
        if not 1 <= m < n:
            raise ValueError(f"invalid preferential-attachment parameter m={m} for n={n}")
        und = nx.barabasi_albert_graph(n, m, seed=nx_seed)
        newer = True
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    if params:
        raise ValueError(f"unknown graph parameters: {sorted(params)}")
    edges = _orient(und.edges(), mutual, rng, newer)
    return SocialGraph((str(i) for i in range(n)), ((str(a), str(b)) for a, b in edges))


# ------------------------------------------------------------------ scenarios


@dataclass(frozen=True)
class SpilloverScenario:
    graph_kind: str = "small-world"
    n_users: int = 20000
    graph_params: dict = field(default_factory=lambda: {"k": 6, "p": 0.1, "mutual": 0.5})
    topics: tuple = SPILLOVER_TOPICS
    post_prob: dict = field(default_factory=lambda: {t: 0.12 for t in SPILLOVER_TOPICS})
    base_prob: float = 0.2
    boosts: dict = field(default_factory=lambda: {"unemployment": 0.3, "panic-buying": 0.05, "school-closures": 0.35})
    rounds: int = 6
    transmit_prob: float = 0.5
    mean_delay: float = 1800.0
    sampling: str = "stratified"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "topics", tuple(self.topics))
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.base_prob < 1:
            out.append("base_prob must lie in (0, 1)")
        if any(b < 0 for b in self.boosts.values()):
            out.append("boosts must be non-negative")
        if self.base_prob + sum(self.boosts.get(t, 0.0) for t in self.topics) > 1 + 1e-12:
            out.append("base_prob plus all boosts must not exceed 1")
        unknown = set(self.boosts) - set(self.topics)
        if unknown:
            out.append(f"boosts for unknown topics {sorted(unknown)}")
        if any(not 0 <= self.post_prob.get(t, 0.0) <= 1 for t in self.topics):
            out.append("post_prob values must lie in [0, 1]")
        if self.sampling not in ("stratified", "bernoulli"):
            out.append("sampling must be 'stratified' or 'bernoulli'")
        if self.rounds < 0 or not 0 <= self.transmit_prob <= 1 or self.mean_delay <= 0:
            out.append("rounds >= 0, transmit_prob in [0, 1] and mean_delay > 0 required")
        return out

    def adoption_prob(self, exposure: Iterable[str]) -> float:
        return min(1.0, self.base_prob + sum(self.boosts.get(t, 0.0) for t in set(exposure)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["topics"] = list(self.topics)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpilloverScenario":
        return _from_dict(cls, d)


def planted_elasticity(scenario: SpilloverScenario, composition: Iterable[str]) -> float:
    composition = set(composition)
    unknown = composition - set(scenario.topics)
    if unknown:
        raise ValueError(f"composition has topics outside the scenario: {sorted(unknown)}")
    p0 = scenario.base_prob
    return (scenario.adoption_prob(composition) - p0) / p0


def _from_dict(cls, d: Mapping):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown scenario keys: {unknown}")
    return cls(**d)


# ------------------------------------------------------------------ corpus


@dataclass
class SyntheticCorpus:
    graph: SocialGraph
    events: list[Event]
    exposure: dict[str, frozenset]
    truth: dict = field(default_factory=dict)

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"edges": out / "edges.tsv", "events": out / "events.jsonl",
                 "followers": out / "followers.tsv", "truth": out / "truth.json"}
        write_graph(self.graph, paths["edges"])
        write_events(self.events, paths["events"])
        with open(paths["followers"], "w", encoding="utf-8") as fh:
            for u in self.graph.nodes:
                fh.write(f"{u}\t{self.graph.follower_count(u)}\n")
        with open(paths["truth"], "w", encoding="utf-8") as fh:
            json.dump(self.truth, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return paths


def _text(rng: np.random.Generator, words: tuple[str, ...]) -> str:
    parts = [str(rng.choice(FILLER)), str(rng.choice(words)), str(rng.choice(FILLER))]
    if rng.random() < 0.5:
        parts.append(str(rng.choice(words)))
    return " ".join(parts)


def _delay(rng: np.random.Generator, mean: float) -> int:
    return 1 + int(rng.exponential(mean))


def topic_posts(g: SocialGraph, topics, post_prob: Mapping[str, float], rng: np.random.Generator,
                lexicon: TopicLexicon | None = None, horizon: int = DAY) -> tuple[list[Event], dict]:
    """Seed topic posts on random users; returns events and per-user posted topics."""
    lexicon = lexicon or TopicLexicon.default()
    events, posted = [], {}
    counter = itertools.count()
    for u in g.nodes:
        for t in topics:
            if rng.random() < post_prob.get(t, 0.0):
                text = _text(rng, TOPIC_WORDS[t])
                if lexicon.match(text) != {t}:
                    raise AssertionError(f"synthetic text {text!r} does not tag as {t!r}")
                mid = f"t{next(counter)}"
                events.append(Event(mid, mid, u, int(rng.integers(horizon)), frozenset(), text))
                posted.setdefault(u, set()).add(t)
    return events, posted


def planted_exposure(g: SocialGraph, posted: Mapping[str, set]) -> dict[str, frozenset]:
    out = {}
    for u in g.nodes:
        acc = set(posted.get(u, ()))
        for f in g.followees(u):
            acc |= posted.get(f, set())
        out[u] = frozenset(acc)
    return out


def _susceptible(scenario: SpilloverScenario, exposure: Mapping[str, frozenset], rng: np.random.Generator) -> set[str]:
    topics = set(scenario.topics)
    groups: dict[frozenset, list[str]] = {}
    for u in sorted(exposure, key=node_key):
        groups.setdefault(frozenset(exposure[u] & topics), []).append(u)
    chosen = set()
    for comp in sorted(groups, key=lambda c: (len(c), sorted(c))):
        members = groups[comp]
        p = scenario.adoption_prob(comp)
        if scenario.sampling == "stratified":
            quota = int(math.floor(p * len(members) + 0.5))
            picked = rng.permutation(len(members))[:quota]
        else:
            picked = np.flatnonzero(rng.random(len(members)) < p)
        chosen.update(members[i] for i in picked)
    return chosen


def simulate_cascades(scenario: SpilloverScenario, count: int, lexicon: TopicLexicon | None = None) -> SyntheticCorpus:
    """Topic posts, then ``count`` preventive-measure messages diffusing over the graph.

    Users are marked as adopters up front with probability
    ``min(1, p0 + sum of boosts of their exposure)``.  Each round a marked
    user following a fresh adopter of a message retweets it with
    ``transmit_prob``; marked users never reached retweet a random
    preventive-measure message after the last round.  Every marked user
    therefore retweets exactly one such message.
    """
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(scenario.seed)
    g = generate_graph(scenario.graph_kind, scenario.n_users, scenario.graph_params, int(rng.integers(2**31 - 1)))
    events, posted = topic_posts(g, scenario.topics, scenario.post_prob, rng, lexicon)
    exposure = planted_exposure(g, posted)
    marked = _susceptible(scenario, exposure, rng)

    nodes = list(g.nodes)
    roots = [nodes[i] for i in rng.choice(len(nodes), size=count, replace=len(nodes) < count)]
    adopted: dict[str, tuple[int, int]] = {}  # user -> (message index, time)
    frontier: list[tuple[str, int, int]] = []
    for m, root in enumerate(roots):
        t0 = DAY + int(rng.integers(DAY))
        mid = f"pm{m}"
        events.append(Event(mid, mid, root, t0, frozenset(), _text(rng, TOPIC_WORDS[PREVENTIVE])))
        frontier.append((root, m, t0))
    last_time = max(t for _, _, t in frontier)
    for _ in range(scenario.rounds):
        nxt = []
        for user, m, t in frontier:
            for follower in sorted(g.followers(user), key=node_key):
                if follower in marked and follower not in adopted and follower != roots[m]:
                    if rng.random() < scenario.transmit_prob:
                        ts = t + _delay(rng, scenario.mean_delay)
                        adopted[follower] = (m, ts)
                        nxt.append((follower, m, ts))
                        last_time = max(last_time, ts)
        frontier = nxt
        if not frontier:
            break
    for user in sorted(marked - set(adopted), key=node_key):
        m = int(rng.integers(count))
        if roots[m] == user:
            m = (m + 1) % count
        if roots[m] == user:
            continue
        adopted[user] = (m, last_time + _delay(rng, scenario.mean_delay))
    for i, (user, (m, ts)) in enumerate(sorted(adopted.items(), key=lambda kv: (kv[1][1], node_key(kv[0])))):
        events.append(Event(f"rt{i}", f"pm{m}", user, ts, frozenset(), None))

    groups: dict[frozenset, list[str]] = {}
    topics = set(scenario.topics)
    for u, exp in exposure.items():
        groups.setdefault(frozenset(exp & topics), []).append(u)
    truth = {
        "scenario": scenario.to_dict(),
        "count": count,
        "groups": {
            ",".join(sorted(c)) or "": {
                "users": len(members),
                "planted_alpha": scenario.adoption_prob(c),
                "planted_elasticity": planted_elasticity(scenario, c),
                "adopters": sum(1 for u in members if u in adopted),
            }
            for c, members in sorted(groups.items(), key=lambda kv: (len(kv[0]), sorted(kv[0])))
        },
    }
    return SyntheticCorpus(g, events, exposure, truth)


# ------------------------------------------------------------------ benchmark


@dataclass(frozen=True)
class BenchmarkScenario:
    graph_kind: str = "small-world"
    n_users: int = 200
    graph_params: dict = field(default_factory=lambda: {"k": 8, "p": 0.1, "mutual": 0.5})
    topics: tuple = SPILLOVER_TOPICS
    post_prob: dict = field(default_factory=lambda: {t: 0.12 for t in SPILLOVER_TOPICS})
    base_prob: float = 0.05
    boosts: dict = field(default_factory=lambda: {"unemployment": 0.35, "panic-buying": 0.1, "school-closures": 0.45})
    other_prob: float = 0.05
    first_hop_prob: float = 0.5
    preventive_share: float = 0.5
    messages: int = 900
    first_hop_delay: float = 1200.0
    mean_delay: float = 14400.0
    max_rounds: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "topics", tuple(self.topics))
        if not 0 < self.base_prob < 1:
            raise ValueError("base_prob must lie in (0, 1)")
        if not 0 <= self.other_prob <= 1 or not 0 <= self.first_hop_prob <= 1:
            raise ValueError("other_prob and first_hop_prob must lie in [0, 1]")
        if self.base_prob + sum(self.boosts.values()) > 1 + 1e-12:
            raise ValueError("base_prob plus all boosts must not exceed 1")
        if not 0 <= self.preventive_share <= 1 or self.messages < 1:
            raise ValueError("preventive_share in [0, 1] and messages >= 1 required")

    def adoption_prob(self, exposure: Iterable[str]) -> float:
        return min(1.0, self.base_prob + sum(self.boosts.get(t, 0.0) for t in set(exposure)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["topics"] = list(self.topics)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "BenchmarkScenario":
        return _from_dict(cls, d)


def simulate_benchmark(scenario: BenchmarkScenario, lexicon: TopicLexicon | None = None) -> SyntheticCorpus:
    """Independent-cascade diffusion of preventive-measure and other messages.

    The originator's own followers retweet with ``first_hop_prob`` whatever
    the message.  Further away, a follower reached by a fresh adopter
    retweets a preventive-measure message with its exposure-dependent
    probability and any other message with ``other_prob``.  Each adopter
    gets one chance per follower.
    """
    rng = np.random.default_rng(scenario.seed)
    g = generate_graph(scenario.graph_kind, scenario.n_users, scenario.graph_params, int(rng.integers(2**31 - 1)))
    events, posted = topic_posts(g, scenario.topics, scenario.post_prob, rng, lexicon)
    exposure = planted_exposure(g, posted)
    prob_pm = {u: scenario.adoption_prob(exposure[u] & set(scenario.topics)) for u in g.nodes}
    followers = {u: sorted(g.followers(u), key=node_key) for u in g.nodes}
    nodes = list(g.nodes)
    rt = itertools.count()
    kinds = {}
    for m in range(scenario.messages):
        preventive = rng.random() < scenario.preventive_share
        root = nodes[int(rng.integers(len(nodes)))]
        t0 = DAY + m * 600
        words = TOPIC_WORDS[PREVENTIVE] if preventive else GENERIC_WORDS
        mid = f"m{m}"
        events.append(Event(mid, mid, root, t0, frozenset(), _text(rng, words)))
        kinds[mid] = "preventive" if preventive else "other"
        active = {root}
        frontier = [(root, t0)]
        for hop in range(scenario.max_rounds):
            nxt = []
            for user, t in frontier:
                for f in followers[user]:
                    if f in active:
                        continue
                    if hop == 0:
                        p = scenario.first_hop_prob
                    else:
                        p = prob_pm[f] if preventive else scenario.other_prob
                    if rng.random() < p:
                        active.add(f)
                        ts = t + _delay(rng, scenario.first_hop_delay if hop == 0 else scenario.mean_delay)
                        nxt.append((f, ts))
                        events.append(Event(f"r{next(rt)}", mid, f, ts, frozenset(), None))
            frontier = nxt
            if not frontier:
                break
    truth = {"scenario": scenario.to_dict(), "message_kinds": kinds}
    return SyntheticCorpus(g, events, exposure, truth)


# ------------------------------------------------------------------ files


def load_scenario(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: scenario must be a mapping")
    return data


def dump_scenario(scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scenario.to_dict(), fh, sort_keys=True)


def planted_group_alpha(scenario: SpilloverScenario, exposure: Mapping[str, frozenset], members: Iterable[str]) -> float:
    """Expected activation likelihood of a user group: mean planted adoption probability."""
    probs = [scenario.adoption_prob(exposure[u] & set(scenario.topics)) for u in members]
    if not probs:
        raise ValueError("empty group")
    return float(np.mean(probs))


def planted_topic_elasticity(scenario: SpilloverScenario, exposure: Mapping[str, frozenset], topic: str) -> float:
    """Closed-form elasticity of the split "exposed to ``topic``" versus "not exposed".

    Both sides mix users with different exposure to the other topics, so
    this is the ratio of the two mean planted probabilities rather than
    :func:`planted_elasticity` of ``{topic}``.
    """
    exposed = [u for u, e in exposure.items() if topic in e]
    control = [u for u, e in exposure.items() if topic not in e]
    a_c = planted_group_alpha(scenario, exposure, control)
    return (planted_group_alpha(scenario, exposure, exposed) - a_c) / a_c
