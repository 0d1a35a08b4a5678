"""Topic tagging, information exposure and spillover elasticity."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .graph import Event, SocialGraph, node_key

PREVENTIVE = "preventive-measure"
UNEMPLOYMENT = "unemployment"
PANIC_BUYING = "panic-buying"
SCHOOL_CLOSURES = "school-closures"
SPILLOVER_TOPICS = (UNEMPLOYMENT, PANIC_BUYING, SCHOOL_CLOSURES)
SHORT_NAMES = {UNEMPLOYMENT: "U", PANIC_BUYING: "P", SCHOOL_CLOSURES: "S", PREVENTIVE: "PM"}


class UndefinedLikelihood(ValueError):
    pass


class TopicLexicon(dict):
    """Mapping of topic name to lowercase keywords."""

    def __init__(self, mapping: Mapping[str, Iterable[str]]):
        clean = {}
        for topic, words in mapping.items():
            kws = []
            for w in words:
                w = w.strip().lower()
                if w and w not in kws:
                    kws.append(w)
            if not kws:
                raise ValueError(f"topic {topic!r} has no keywords")
            clean[topic] = tuple(kws)
        super().__init__(clean)

    def match(self, text: str | None) -> frozenset[str]:
        if not text:
            return frozenset()
        low = text.lower()
        return frozenset(t for t, kws in self.items() if any(k in low for k in kws))

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "TopicLexicon":
        mapping = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "\t" not in line:
                raise ValueError(f"line {lineno}: expected 'topic<TAB>keywords'")
            topic, words = line.split("\t", 1)
            mapping[topic.strip()] = words.split(",")
        return cls(mapping)

    @classmethod
    def load(cls, path) -> "TopicLexicon":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh)

    @classmethod
    def default(cls) -> "TopicLexicon":
        text = resources.files("spillcast").joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
        return cls.parse(text.splitlines())


def tag_topics(events: Iterable[Event], lexicon: TopicLexicon) -> list[Event]:
    """Union keyword-matched topics into each event's tags.

    Retweets also inherit the topics of their root message.
    """
    events = list(events)
    tagged = [replace(e, topics=e.topics | lexicon.match(e.text)) for e in events]
    root_topics = {e.message_id: e.topics for e in tagged if e.is_original}
    return [
        e if e.is_original else replace(e, topics=e.topics | root_topics.get(e.root_id, frozenset()))
        for e in tagged
    ]


def compute_exposure(
    g: SocialGraph, events: Iterable[Event], topics: Iterable[str] | None = None
) -> dict[str, frozenset[str]]:
    """Topics each user posted or perceived from a followee (one hop)."""
    keep = None if topics is None else set(topics)
    posted: dict[str, set] = {}
    for e in events:
        if e.user_id not in g:
            continue
        ts = e.topics if keep is None else e.topics & keep
        if ts:
            posted.setdefault(e.user_id, set()).update(ts)
    profile = {}
    for u in g.nodes:
        acc = set(posted.get(u, ()))
        for f in g.followees(u):
            acc.update(posted.get(f, ()))
        profile[u] = frozenset(acc)
    return profile


def composition_label(comp: frozenset, order: Sequence[str] | None = None) -> str:
    if not comp:
        return "{}"
    order = list(order) if order else sorted(comp)
    names = [SHORT_NAMES.get(t, t) for t in order if t in comp]
    return "{" + ",".join(names) + "}"


@dataclass(frozen=True)
class GroupDivision:
    topics: tuple[str, ...]
    groups: dict  # frozenset composition -> frozenset of users
    control: frozenset = frozenset()

    @property
    def control_group(self) -> frozenset:
        return self.groups[self.control]


def partition_by_composition(profile: Mapping[str, frozenset], topics: Sequence[str]) -> GroupDivision:
    """One group per subset of ``topics``; the control group is the empty subset."""
    topics = tuple(topics)
    comps = [
        frozenset(c) for r in range(len(topics) + 1) for c in itertools.combinations(topics, r)
    ]
    members: dict[frozenset, set] = {c: set() for c in comps}
    tset = set(topics)
    for user, exp in profile.items():
        members[frozenset(exp & tset)].add(user)
    return GroupDivision(topics, {c: frozenset(members[c]) for c in comps}, frozenset())


def activation_likelihood(group: Iterable[str], adopters: Iterable[str]) -> float:
    group = set(group)
    if not group:
        raise UndefinedLikelihood("activation likelihood of an empty group")
    return len(group & set(adopters)) / len(group)


def spillover_elasticity(alpha_i: float, alpha_c: float) -> float:
    if alpha_c <= 0:
        raise ZeroDivisionError("control activation likelihood must be positive")
    return (alpha_i - alpha_c) / alpha_c


def preventive_adopters(events: Iterable[Event], topic: str = PREVENTIVE) -> frozenset[str]:
    """Users who retweeted at least one message tagged ``topic``."""
    return frozenset(e.user_id for e in events if not e.is_original and topic in e.topics)


@dataclass(frozen=True)
class GroupStats:
    label: str
    composition: frozenset
    users: int
    adopters: int
    alpha: float | None
    elasticity: float | None
    is_control: bool = False

    def to_record(self) -> dict:
        return {
            "group": self.label,
            "users": self.users,
            "adopters": self.adopters,
            "alpha": self.alpha,
            "elasticity": self.elasticity,
            "control": self.is_control,
        }


@dataclass(frozen=True)
class ElasticityReport:
    name: str
    groups: tuple[GroupStats, ...]

    @property
    def control(self) -> GroupStats:
        return next(g for g in self.groups if g.is_control)

    def group(self, composition) -> GroupStats:
        composition = frozenset(composition)
        return next(g for g in self.groups if g.composition == composition)

    def to_record(self) -> dict:
        return {"division": self.name, "groups": [g.to_record() for g in self.groups]}


def elasticity_report(division: GroupDivision, adopters: Iterable[str], name: str = "") -> ElasticityReport:
    adopters = frozenset(adopters)
    ctrl_users = division.control_group
    alpha_c = activation_likelihood(ctrl_users, adopters) if ctrl_users else None
    rows = []
    for comp, users in division.groups.items():
        n_adopt = len(users & adopters)
        alpha = n_adopt / len(users) if users else None
        is_ctrl = comp == division.control
        eps = None
        if not is_ctrl and alpha is not None and alpha_c:
            eps = spillover_elasticity(alpha, alpha_c)
        rows.append(
            GroupStats(composition_label(comp, division.topics), comp, len(users), n_adopt, alpha, eps, is_ctrl)
        )
    return ElasticityReport(name or "comp", tuple(rows))


def spillover_analysis(
    g: SocialGraph,
    events: Sequence[Event],
    lexicon: TopicLexicon | None = None,
    topics: Sequence[str] = SPILLOVER_TOPICS,
    target: str = PREVENTIVE,
) -> dict[str, ElasticityReport]:
    """Single-topic divisions plus the full composition division."""
    lexicon = lexicon or TopicLexicon.default()
    tagged = tag_topics(events, lexicon)
    profile = compute_exposure(g, tagged, topics)
    adopters = preventive_adopters(tagged, target) & set(g.nodes)
    reports = {}
    for t in topics:
        reports[t] = elasticity_report(partition_by_composition(profile, [t]), adopters, name=t)
    reports["composition"] = elasticity_report(partition_by_composition(profile, topics), adopters, "composition")
    return reports


def _fmt(x, spec=".2f"):
    return "n/a" if x is None else format(x, spec)


def format_single_topic_table(reports: Mapping[str, ElasticityReport], topics: Sequence[str]) -> str:
    header = f"{'topic':<18}{'exposed #user':>14}{'alpha':>8}{'unexposed #user':>17}{'alpha':>8}{'elasticity':>12}"
    lines = [header, "-" * len(header)]
    for t in topics:
        rep = reports[t]
        exp = rep.group({t})
        ctl = rep.control
        lines.append(
            f"{t:<18}{exp.users:>14,}{_fmt(exp.alpha):>8}{ctl.users:>17,}{_fmt(ctl.alpha):>8}{_fmt(exp.elasticity):>12}"
        )
    return "\n".join(lines)


def format_composition_table(report: ElasticityReport) -> str:
    header = f"{'group':<12}{'#user':>10}{'adopters':>10}{'alpha':>8}{'elasticity':>12}"
    lines = [header, "-" * len(header)]
    for g in report.groups:
        label = g.label + (" *" if g.is_control else "")
        lines.append(f"{label:<12}{g.users:>10,}{g.adopters:>10,}{_fmt(g.alpha, '.3f'):>8}{_fmt(g.elasticity, '.3f'):>12}")
    return "\n".join(lines)


def reports_to_json(reports: Mapping[str, ElasticityReport]) -> str:
    return json.dumps({k: v.to_record() for k, v in reports.items()}, indent=2, sort_keys=True)


def sorted_users(users: Iterable[str]) -> list[str]:
    return sorted(users, key=node_key)
