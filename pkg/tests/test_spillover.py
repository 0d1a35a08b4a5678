import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spillcast.graph import Event, SocialGraph
from spillcast.spillover import (
    PANIC_BUYING,
    PREVENTIVE,
    SCHOOL_CLOSURES,
    SPILLOVER_TOPICS,
    UNEMPLOYMENT,
    TopicLexicon,
    UndefinedLikelihood,
    activation_likelihood,
    compute_exposure,
    elasticity_report,
    format_composition_table,
    format_single_topic_table,
    partition_by_composition,
    preventive_adopters,
    reports_to_json,
    spillover_analysis,
    spillover_elasticity,
    tag_topics,
)

LEX = TopicLexicon.default()

# Single-topic table of the measured dataset: exposed/unexposed users and rounded likelihoods.
MEASURED_SINGLE_TOPIC = {
    UNEMPLOYMENT: dict(exposed=4238, alpha_e=0.67, unexposed=17101, alpha_u=0.25, elasticity=1.69),
    PANIC_BUYING: dict(exposed=6119, alpha_e=0.39, unexposed=15220, alpha_u=0.31, elasticity=0.25),
    SCHOOL_CLOSURES: dict(exposed=6460, alpha_e=0.61, unexposed=14879, alpha_u=0.21, elasticity=1.87),
}


# ------------------------------------------------------------------ lexicon and tagging


def test_default_lexicon_topics():
    assert set(LEX) == {PREVENTIVE, UNEMPLOYMENT, PANIC_BUYING, SCHOOL_CLOSURES}
    for kws in LEX.values():
        assert kws and len(set(kws)) == len(kws)
        assert all(k == k.lower() for k in kws)


@pytest.mark.parametrize(
    "text, topics",
    [
        ("please wear a mask", {PREVENTIVE}),
        ("nothing relevant here", set()),
        ("jobsearch during lockdown", {UNEMPLOYMENT, PREVENTIVE}),
        ("#StayAtHome and #ToiletPaper", {PREVENTIVE, PANIC_BUYING}),
        ("CUNY campus closed", {SCHOOL_CLOSURES}),
    ],
)
def test_match(text, topics):
    assert LEX.match(text) == topics


def test_tag_topics_unions_preassigned_tags_and_inherits_root_topics():
    events = [
        Event("1", "1", "a", 0, frozenset({"custom"}), "wear a mask"),
        Event("2", "1", "b", 5),
        Event("3", "3", "c", 1, frozenset(), "plain"),
    ]
    tagged = tag_topics(events, LEX)
    assert tagged[0].topics == {"custom", PREVENTIVE}
    assert tagged[1].topics == {"custom", PREVENTIVE}
    assert tagged[2].topics == frozenset()


def test_lexicon_parse_errors():
    with pytest.raises(ValueError, match="line 1"):
        TopicLexicon.parse(["no tab here"])
    with pytest.raises(ValueError):
        TopicLexicon.parse(["topic\t , "])


# ------------------------------------------------------------------ exposure


def post(user, topics, i=[0]):
    i[0] += 1
    return Event(f"x{i[0]}", f"x{i[0]}", user, 0, frozenset(topics))


def test_isolated_user_exposed_to_own_post():
    g = SocialGraph(["u"], [])
    assert compute_exposure(g, [post("u", {"P"})]) == {"u": {"P"}}


def test_perception_through_followee():
    g = SocialGraph.from_edges([("u", "f")])
    prof = compute_exposure(g, [post("f", {"U"})])
    assert prof["u"] == {"U"} and prof["f"] == {"U"}


def test_follower_posts_do_not_reach_followee():
    g = SocialGraph.from_edges([("u", "f")])
    assert compute_exposure(g, [post("u", {"U"})])["f"] == frozenset()


@pytest.mark.parametrize("seed", range(5))
def test_exposure_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    nodes = [str(i) for i in range(30)]
    edges = {(str(a), str(b)) for a, b in rng.integers(0, 30, size=(70, 2)) if a != b}
    g = SocialGraph(nodes, edges)
    topics = ["A", "B", "C", "D"]
    events = [post(str(rng.integers(30)), set(rng.choice(topics, rng.integers(1, 3), replace=False))) for _ in range(40)]
    prof = compute_exposure(g, events)
    for u in nodes:
        expected = set()
        for e in events:
            if e.user_id == u or (u, e.user_id) in edges:
                expected |= e.topics
        assert prof[u] == expected


# ------------------------------------------------------------------ partition


def test_three_topics_give_eight_groups():
    prof = {"a": frozenset({UNEMPLOYMENT, SCHOOL_CLOSURES}), "b": frozenset()}
    div = partition_by_composition(prof, SPILLOVER_TOPICS)
    assert len(div.groups) == 8
    assert div.groups[frozenset({UNEMPLOYMENT, SCHOOL_CLOSURES})] == {"a"}
    assert div.control_group == {"b"}
    assert sum("a" in users for users in div.groups.values()) == 1


def test_one_topic_gives_two_groups():
    div = partition_by_composition({"a": frozenset({PANIC_BUYING, PREVENTIVE})}, [PANIC_BUYING])
    assert len(div.groups) == 2 and div.groups[frozenset({PANIC_BUYING})] == {"a"}


@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=3),
                       st.frozensets(st.sampled_from(["U", "P", "S", "X"])), max_size=25),
       st.lists(st.sampled_from(["U", "P", "S"]), min_size=1, max_size=3, unique=True))
def test_partition_is_a_partition(profile, topics):
    div = partition_by_composition(profile, topics)
    assert len(div.groups) == 2 ** len(topics)
    seen = [u for users in div.groups.values() for u in users]
    assert sorted(seen) == sorted(profile)
    for comp, users in div.groups.items():
        assert all(profile[u] & set(topics) == comp for u in users)


# ------------------------------------------------------------------ likelihood and elasticity


def test_activation_likelihood_examples():
    assert activation_likelihood({"a", "b"}, {"a", "b", "c"}) == 1.0
    assert activation_likelihood([str(i) for i in range(8)], {"0", "3", "7", "x"}) == 0.375
    with pytest.raises(UndefinedLikelihood):
        activation_likelihood([], {"a"})


def test_unemployment_fixture_likelihood():
    row = MEASURED_SINGLE_TOPIC[UNEMPLOYMENT]
    group = [f"u{i}" for i in range(row["exposed"])]
    adopters = group[: round(0.67 * row["exposed"])]
    assert activation_likelihood(group, adopters) == pytest.approx(0.67, abs=5e-4)


def test_elasticity_basic():
    assert spillover_elasticity(0.3, 0.3) == 0.0
    with pytest.raises(ZeroDivisionError):
        spillover_elasticity(0.3, 0.0)


@pytest.mark.parametrize("topic, expected, tol", [(UNEMPLOYMENT, 1.68, 0.02), (PANIC_BUYING, 0.258, 0.02),
                                                  (SCHOOL_CLOSURES, 1.905, 0.05)])
def test_measured_single_topic_elasticities(topic, expected, tol):
    row = MEASURED_SINGLE_TOPIC[topic]
    eps = spillover_elasticity(row["alpha_e"], row["alpha_u"])
    assert eps == pytest.approx(expected, abs=1e-3)
    assert eps == pytest.approx(row["elasticity"], abs=tol)


def test_measured_single_topic_averages():
    alphas = [r["alpha_e"] for r in MEASURED_SINGLE_TOPIC.values()]
    eps = [spillover_elasticity(r["alpha_e"], r["alpha_u"]) for r in MEASURED_SINGLE_TOPIC.values()]
    assert np.mean(alphas) == pytest.approx(0.56, abs=0.01)
    assert np.mean(eps) == pytest.approx(1.27, abs=0.05)


@given(st.floats(0.0, 1.0), st.floats(1e-3, 1.0))
def test_elasticity_sign(alpha_i, alpha_c):
    eps = spillover_elasticity(alpha_i, alpha_c)
    assert (eps > 0) == (alpha_i > alpha_c)


@given(st.integers(1, 30), st.integers(0, 30), st.integers(1, 30), st.integers(0, 30), st.integers(2, 5))
def test_upsampling_leaves_likelihood_and_elasticity_unchanged(n_i, a_i, n_c, a_c, k):
    a_i, a_c = min(a_i, n_i), max(1, min(a_c, n_c))
    gi = [f"i{j}" for j in range(n_i)]
    gc = [f"c{j}" for j in range(n_c)]
    adopt = set(gi[:a_i]) | set(gc[:a_c])
    big_i = [f"{u}#{r}" for u in gi for r in range(k)]
    big_c = [f"{u}#{r}" for u in gc for r in range(k)]
    big_adopt = {f"{u}#{r}" for u in adopt for r in range(k)}
    e1 = spillover_elasticity(activation_likelihood(gi, adopt), activation_likelihood(gc, adopt))
    e2 = spillover_elasticity(activation_likelihood(big_i, big_adopt), activation_likelihood(big_c, big_adopt))
    assert e1 == pytest.approx(e2, rel=1e-12, abs=1e-12)


# ------------------------------------------------------------------ reports


def _toy_corpus():
    g = SocialGraph.from_edges([("a", "b"), ("c", "d"), ("e", "f")])
    events = [
        Event("1", "1", "b", 0, frozenset(), "lost my job"),
        Event("2", "2", "d", 0, frozenset(), "toiletpaper gone"),
        Event("3", "3", "f", 0, frozenset(), "wear a mask"),
        Event("4", "3", "a", 5),
        Event("5", "3", "b", 6),
        Event("6", "3", "e", 7),
    ]
    return g, events


def test_spillover_analysis_and_tables():
    g, events = _toy_corpus()
    reports = spillover_analysis(g, events, LEX)
    assert preventive_adopters(tag_topics(events, LEX)) == {"a", "b", "e"}
    u = reports[UNEMPLOYMENT]
    assert u.group({UNEMPLOYMENT}).users == 2 and u.group({UNEMPLOYMENT}).alpha == 1.0
    assert u.control.users == 4 and u.control.alpha == 0.25
    assert u.group({UNEMPLOYMENT}).elasticity == pytest.approx(3.0)
    comp = reports["composition"]
    assert comp.group({PANIC_BUYING}).alpha == 0.0
    assert comp.group({UNEMPLOYMENT, PANIC_BUYING}).alpha is None
    text = format_single_topic_table(reports, SPILLOVER_TOPICS) + format_composition_table(comp)
    assert "n/a" in text and "unemployment" in text
    assert '"division"' in reports_to_json(reports)


def test_empty_control_gives_undefined_elasticity():
    div = partition_by_composition({"a": frozenset({"U"})}, ["U"])
    rep = elasticity_report(div, {"a"})
    assert rep.group({"U"}).elasticity is None and rep.control.alpha is None
