"""Social graph, event log and cascade construction.

Edges are stored as ``(follower, followee)`` pairs.  Information flows the
other way: a followee's posts are perceived by its followers.
"""

from __future__ import annotations

import json
import logging
import math
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 10800  # seconds
_DIGITS = re.compile(r"^\d+$")


class IngestionError(ValueError):
    """Malformed input record."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def node_key(node: str):
    """Sort key: purely numeric ids compare as integers and precede other ids."""
    if _DIGITS.match(node):
        return (0, int(node), node)
    return (1, 0, node)


class SocialGraph:
    """Immutable directed follower graph.

    ``nodes`` is kept in ascending :func:`node_key` order, so positional
    indices double as the canonical node ordering everywhere else.
    """

    __slots__ = ("nodes", "index", "edges", "_followees", "_followers", "_edge_index")

    def __init__(self, nodes: Iterable[str], edges: Iterable[tuple[str, str]]):
        node_set = {str(n) for n in nodes}
        edge_set = set()
        for u, v in edges:
            u, v = str(u), str(v)
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            if u not in node_set or v not in node_set:
                raise ValueError(f"edge ({u!r}, {v!r}) has an endpoint outside the node set")
            edge_set.add((u, v))
        self.nodes: tuple[str, ...] = tuple(sorted(node_set, key=node_key))
        self.index: dict[str, int] = {n: i for i, n in enumerate(self.nodes)}
        self.edges: frozenset[tuple[str, str]] = frozenset(edge_set)
        followees = defaultdict(set)
        followers = defaultdict(set)
        for u, v in edge_set:
            followees[u].add(v)
            followers[v].add(u)
        self._followees = {n: frozenset(followees.get(n, ())) for n in self.nodes}
        self._followers = {n: frozenset(followers.get(n, ())) for n in self.nodes}
        self._edge_index = None

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]], nodes: Iterable[str] = ()) -> "SocialGraph":
        edges = [(str(u), str(v)) for u, v in edges]
        all_nodes = set(map(str, nodes))
        for u, v in edges:
            all_nodes.update((u, v))
        return cls(all_nodes, edges)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node) -> bool:
        return node in self.index

    def __eq__(self, other) -> bool:
        if not isinstance(other, SocialGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def __hash__(self):
        return hash((self.nodes, self.edges))

    def __repr__(self) -> str:
        return f"SocialGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def followees(self, node: str) -> frozenset[str]:
        """Users that ``node`` follows (whose posts ``node`` perceives)."""
        return self._followees[node]

    def followers(self, node: str) -> frozenset[str]:
        return self._followers[node]

    def neighbors(self, node: str) -> frozenset[str]:
        """Undirected neighbourhood."""
        return self._followees[node] | self._followers[node]

    def follower_count(self, node: str) -> int:
        return len(self._followers[node])

    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Positional ``(follower, followee)`` index arrays, sorted."""
        if self._edge_index is None:
            if self.edges:
                pairs = sorted((self.index[u], self.index[v]) for u, v in self.edges)
                arr = np.asarray(pairs, dtype=np.int64)
                src, dst = arr[:, 0].copy(), arr[:, 1].copy()
            else:
                src = dst = np.zeros(0, dtype=np.int64)
            src.flags.writeable = False
            dst.flags.writeable = False
            self._edge_index = (src, dst)
        return self._edge_index

    def subgraph(self, nodes: Iterable[str]) -> "SocialGraph":
        keep = set(nodes)
        missing = keep.difference(self.index)
        if missing:
            raise KeyError(f"unknown nodes: {sorted(missing, key=node_key)[:5]}")
        return SocialGraph(keep, ((u, v) for u, v in self.edges if u in keep and v in keep))

    def undirected_csr(self):
        src, dst = self.edge_index()
        n = len(self.nodes)
        data = np.ones(2 * len(src))
        mat = coo_matrix((data, (np.r_[src, dst], np.r_[dst, src])), shape=(n, n)).tocsr()
        mat.sum_duplicates()
        return mat


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def load_graph(source) -> SocialGraph:
    """Read a ``src<TAB>dst`` edge list.

    ``source`` is a path or an iterable of lines.  Lines starting with ``#``
    and blank lines are ignored; duplicate edges collapse and self-loops are
    dropped with a warning.
    """
    edges = set()
    nodes = set()
    self_loops = 0
    for lineno, raw in enumerate(_iter_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise IngestionError(f"expected 'src<TAB>dst', got {line!r}", lineno)
        u, v = parts[0].strip(), parts[1].strip()
        nodes.update((u, v))
        if u == v:
            self_loops += 1
            continue
        edges.add((u, v))
    if self_loops:
        warnings.warn(f"dropped {self_loops} self-loop(s)", stacklevel=2)
    return SocialGraph(nodes, edges)


def write_graph(g: SocialGraph, path) -> None:
    src, dst = g.edge_index()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes={len(g)} edges={g.num_edges}\n")
        for i, j in zip(src.tolist(), dst.tolist()):
            fh.write(f"{g.nodes[i]}\t{g.nodes[j]}\n")


def _components(g: SocialGraph) -> list[list[int]]:
    n = len(g)
    if n == 0:
        return []
    _, labels = connected_components(g.undirected_csr(), directed=False)
    groups: dict[int, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels.tolist()):
        groups[lab].append(i)
    return list(groups.values())


def is_weakly_connected(g: SocialGraph) -> bool:
    return len(_components(g)) == 1


def largest_wcc(g: SocialGraph) -> SocialGraph:
    """Largest weakly connected component.

    Ties are broken in favour of the component holding the smallest node id.
    """
    if len(g) == 0:
        raise ValueError("largest_wcc of an empty graph")
    comps = _components(g)
    if len(comps) == 1:
        return g
    best = min(comps, key=lambda c: (-len(c), min(c)))
    return g.subgraph(g.nodes[i] for i in best)


class _DisjointSet:
    def __init__(self):
        self.parent: dict[str, str] = {}
        self.count = 0

    def add(self, x: str) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.count += 1

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra
            self.count -= 1


def post_counts(events: Iterable["Event"]) -> Counter:
    return Counter(e.user_id for e in events)


def prune_inactive(g: SocialGraph, events: Iterable["Event"], min_posts: int = 2) -> SocialGraph:
    """Drop users with fewer than ``min_posts`` events while keeping the graph connected.

    Inactive users are re-added in ascending id order until the retained
    users form a single weak component.
    """
    counts = post_counts(events)
    active = [n for n in g.nodes if counts.get(n, 0) >= min_posts]
    if len(active) == len(g):
        return g
    if not active:
        warnings.warn("no active users; graph returned unchanged", stacklevel=2)
        return g

    ds = _DisjointSet()
    kept = set()

    def admit(node):
        ds.add(node)
        kept.add(node)
        for nb in g.neighbors(node):
            if nb in kept:
                ds.union(node, nb)

    for node in active:
        admit(node)
    if ds.count > 1:
        for node in g.nodes:  # already ascending
            if node in kept:
                continue
            admit(node)
            if ds.count == 1:
                break
    return g.subgraph(kept)


@dataclass(frozen=True)
class Event:
    message_id: str
    root_id: str
    user_id: str
    timestamp: int
    topics: frozenset = frozenset()
    text: str | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp on message {self.message_id}")
        object.__setattr__(self, "topics", frozenset(self.topics))

    @property
    def is_original(self) -> bool:
        return self.message_id == self.root_id

    def to_record(self) -> dict:
        rec = {
            "message_id": self.message_id,
            "root_id": self.root_id,
            "user_id": self.user_id,
            "timestamp": self.timestamp,
            "topics": ",".join(sorted(self.topics)),
        }
        if self.text is not None:
            rec["text"] = self.text
        return rec


_EVENT_FIELDS = ("message_id", "root_id", "user_id", "timestamp")


def parse_event(rec: dict, line: int | None = None) -> Event:
    if not isinstance(rec, dict):
        raise IngestionError("event record must be an object", line)
    missing = [f for f in _EVENT_FIELDS if f not in rec]
    if missing:
        raise IngestionError(f"missing fields {missing}", line)
    try:
        ts = int(rec["timestamp"])
    except (TypeError, ValueError):
        raise IngestionError(f"bad timestamp {rec['timestamp']!r}", line) from None
    if ts < 0 or ts != float(rec["timestamp"]):
        raise IngestionError(f"timestamp must be a non-negative integer, got {rec['timestamp']!r}", line)
    topics = rec.get("topics") or ""
    if isinstance(topics, str):
        topics = [t.strip() for t in topics.split(",") if t.strip()]
    return Event(
        message_id=str(rec["message_id"]),
        root_id=str(rec["root_id"]),
        user_id=str(rec["user_id"]),
        timestamp=ts,
        topics=frozenset(topics),
        text=rec.get("text"),
    )


def load_events(source) -> list[Event]:
    """Read JSON-lines event records."""
    events = []
    for lineno, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"invalid JSON ({exc.msg})", lineno) from None
        events.append(parse_event(rec, lineno))
    return events


def write_events(events: Iterable[Event], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Cascade:
    message_id: str
    adopters: tuple[tuple[str, int], ...]

    def __post_init__(self):
        adopters = tuple((str(u), int(t)) for u, t in self.adopters)
        object.__setattr__(self, "adopters", adopters)
        if not adopters:
            raise ValueError("cascade without adopters")
        times = [t for _, t in adopters]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError(f"cascade {self.message_id}: adopters out of time order")
        if len({u for u, _ in adopters}) != len(adopters):
            raise ValueError(f"cascade {self.message_id}: repeated adopter")

    @property
    def final_size(self) -> int:
        return len(self.adopters)

    @property
    def originator(self) -> str:
        return self.adopters[0][0]

    @property
    def origin_time(self) -> int:
        return self.adopters[0][1]

    @property
    def users(self) -> tuple[str, ...]:
        return tuple(u for u, _ in self.adopters)

    def to_record(self) -> dict:
        return {
            "message_id": self.message_id,
            "adopters": [[u, t] for u, t in self.adopters],
            "final_size": self.final_size,
        }


@dataclass(frozen=True)
class ObservedCascade:
    cascade: Cascade
    window: float
    adopters: tuple[tuple[str, int], ...]

    @property
    def n_observed(self) -> int:
        return len(self.adopters)

    @property
    def users(self) -> tuple[str, ...]:
        return tuple(u for u, _ in self.adopters)

    @property
    def message_id(self) -> str:
        return self.cascade.message_id


def observe(c: Cascade, window: float = DEFAULT_WINDOW) -> ObservedCascade:
    """Adopters whose offset from the root post is at most ``window`` seconds."""
    if window < 0:
        raise ValueError("window must be non-negative")
    t0 = c.origin_time
    prefix = tuple(a for a in c.adopters if a[1] - t0 <= window)
    return ObservedCascade(cascade=c, window=float(window), adopters=prefix)


@dataclass(frozen=True)
class CascadeSummary:
    built: int
    dropped_small: int
    retained: int
    mean_size: float
    unknown_root: int = 0
    outside_graph: int = 0
    early_retweets: int = 0

    def to_record(self) -> dict:
        return dict(self.__dict__)


def build_cascades(
    events: Iterable[Event], g: SocialGraph, min_size: int = 3
) -> tuple[list[Cascade], CascadeSummary]:
    """Group events into one cascade per root message.

    Returns the retained cascades (ordered by root message id) and a summary.
    A repeated adoption by the same user keeps the earliest timestamp.
    """
    originals: dict[str, Event] = {}
    retweets: dict[str, list[Event]] = defaultdict(list)
    events = list(events)
    for e in events:
        if e.is_original:
            prev = originals.get(e.message_id)
            if prev is None or (e.timestamp, node_key(e.user_id)) < (prev.timestamp, node_key(prev.user_id)):
                originals[e.message_id] = e
    unknown = 0
    for e in events:
        if e.is_original:
            continue
        if e.root_id not in originals:
            unknown += 1
            continue
        retweets[e.root_id].append(e)

    cascades = []
    dropped = outside = early = 0
    for mid in sorted(originals, key=node_key):
        root = originals[mid]
        if root.user_id not in g:
            outside += 1
            continue
        first: dict[str, int] = {root.user_id: root.timestamp}
        for e in retweets.get(mid, ()):
            if e.user_id not in g or e.user_id == root.user_id:
                continue
            if e.timestamp < root.timestamp:
                early += 1
                continue
            if e.user_id not in first or e.timestamp < first[e.user_id]:
                first[e.user_id] = e.timestamp
        rest = sorted(
            ((u, t) for u, t in first.items() if u != root.user_id),
            key=lambda a: (a[1], node_key(a[0])),
        )
        adopters = ((root.user_id, root.timestamp), *rest)
        if len(adopters) < min_size:
            dropped += 1
            continue
        cascades.append(Cascade(mid, adopters))
    built = len(originals) - outside
    mean = float(np.mean([c.final_size for c in cascades])) if cascades else math.nan
    if unknown:
        log.warning("skipped %d retweet(s) referencing unknown roots", unknown)
    summary = CascadeSummary(
        built=built,
        dropped_small=dropped,
        retained=len(cascades),
        mean_size=mean,
        unknown_root=unknown,
        outside_graph=outside,
        early_retweets=early,
    )
    return cascades, summary


def write_cascades(cascades: Iterable[Cascade], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cascades:
            fh.write(json.dumps(c.to_record(), sort_keys=True) + "\n")


def load_cascades(path) -> list[Cascade]:
    out = []
    for lineno, raw in enumerate(_iter_lines(path), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            out.append(Cascade(str(rec["message_id"]), tuple((u, t) for u, t in rec["adopters"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"bad cascade record ({exc})", lineno) from None
    return out


def message_index(events: Sequence[Event]) -> dict[str, Event]:
    """Original events keyed by message id."""
    return {e.message_id: e for e in events if e.is_original}
