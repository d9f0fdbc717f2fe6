import io
import itertools
import random

import pytest

from wfbench.errors import DataError
from wfbench.sitegraph import (
    BrowsingSession,
    RedirectLog,
    SiteGraph,
    build_canonicalizer,
    build_preliminary_graph,
    graph_from_record,
    graph_to_record,
    parse_url,
    plan_sessions,
    read_sessions,
    refine,
    select_subset,
    validate_paths,
    write_sessions,
)


def test_parse_url_normalization():
    u = parse_url("https://WWW.Example.com:8443/Path/")
    assert u.host == "example.com"
    assert u.path == "/path"
    assert u.port == 8443
    assert u.key() == "example.com/path"


def test_parse_url_without_scheme():
    u = parse_url("example.com/a?b=2&a=1")
    assert u.host == "example.com"
    assert u.query == (("b", "2"), ("a", "1"))


def session_arg_log():
    return [
        ("http://x.com/a?sessionid=1", "fpA"),
        ("http://x.com/a?sessionid=2", "fpA"),
        ("http://x.com/p?id=1", "fp1"),
        ("http://x.com/p?id=2", "fp2"),
    ]


def test_session_id_arg_collapses():
    c = build_canonicalizer(session_arg_log())
    assert "sessionid" in c.insignificant
    assert c.canonicalize("x.com/a?sessionid=1") == c.canonicalize("x.com/a?sessionid=2") == "x.com/a"


def test_content_changing_arg_retained():
    c = build_canonicalizer(session_arg_log())
    assert "id" not in c.insignificant
    assert c.canonicalize("x.com/p?id=1") != c.canonicalize("x.com/p?id=2")


def test_distinct_paths_never_merge():
    log = [("http://x.com/a", "same"), ("http://x.com/b", "same")]
    c = build_canonicalizer(log)
    assert c.canonicalize("x.com/a") != c.canonicalize("x.com/b")


def test_removal_pair_marks_significant():
    log = [("http://x.com/a", "fp1"), ("http://x.com/a?v=1", "fp2")]
    c = build_canonicalizer(log)
    assert "v" not in c.insignificant


def test_unresolvable_arg_retained():
    # single observed value everywhere: no comparable pair, stay conservative
    log = [("http://x.com/a?tok=1", "fp"), ("http://x.com/b?tok=1", "fp")]
    c = build_canonicalizer(log)
    assert "tok" not in c.insignificant


def test_unseen_arg_retained():
    c = build_canonicalizer(session_arg_log())
    assert c.canonicalize("x.com/a?mystery=7") == "x.com/a?mystery=7"


def test_empty_crawl_log_is_error():
    with pytest.raises(DataError):
        build_canonicalizer([])


def test_canonicalize_idempotent_and_order_free():
    c = build_canonicalizer(session_arg_log())
    label = c.canonicalize("x.com/p?id=3&sessionid=9")
    assert label == "x.com/p?id=3"
    assert c.canonicalize(label) == label
    assert c.canonicalize("x.com/p?sessionid=9&id=3") == label


def test_reverse_nonempty_per_label():
    c = build_canonicalizer(session_arg_log())
    rev = c.reverse()
    assert set(rev) == c.labels()
    assert all(urls for urls in rev.values())
    assert set(rev["x.com/a"]) == {"x.com/a?sessionid=1", "x.com/a?sessionid=2"}


def test_preliminary_graph_collapses_by_label():
    log = [
        ("http://x.com/home", "h"),
        ("http://x.com/b?sessionid=1", "fpB"),
        ("http://x.com/b?sessionid=2", "fpB"),
    ]
    c = build_canonicalizer(log)
    edges = [
        ("x.com/home", "x.com/b?sessionid=1"),
        ("x.com/home", "x.com/b?sessionid=2"),
    ]
    g = build_preliminary_graph(edges, c)
    assert g.labels == frozenset({"x.com/home", "x.com/b"})
    assert g.edges == frozenset({("x.com/home", "x.com/b")})


def test_preliminary_graph_empty_and_self_loop():
    c = build_canonicalizer([("http://x.com/a", "f")])
    assert build_preliminary_graph([], c).labels == frozenset()
    g = build_preliminary_graph([("x.com/a", "x.com/a")], c)
    assert ("x.com/a", "x.com/a") in g.edges


def star_graph(n_leaves):
    labels = ["home"] + [f"leaf{i}" for i in range(n_leaves)]
    edges = {("home", l) for l in labels[1:]}
    return SiteGraph(frozenset(labels), frozenset(edges))


def test_select_subset_star():
    g = star_graph(10)
    sub = select_subset(g, "home", 5, seed=3)
    assert len(sub.labels) == 5 and "home" in sub.labels
    assert len(sub.edges) == 4
    assert select_subset(g, "home", 5, seed=3) == sub  # seeded determinism


def test_select_subset_n1_keeps_self_loops():
    g = SiteGraph(frozenset({"home", "a"}), frozenset({("home", "home"), ("home", "a")}))
    sub = select_subset(g, "home", 1, seed=0)
    assert sub.labels == frozenset({"home"})
    assert sub.edges == frozenset({("home", "home")})


def test_select_subset_chain_forced():
    g = SiteGraph(frozenset("abc"), frozenset({("a", "b"), ("b", "c")}))
    sub = select_subset(g, "a", 3, seed=0)
    assert sub.labels == frozenset("abc")


def test_select_subset_insufficient_reachable():
    g = SiteGraph(frozenset({"home", "island"}), frozenset())
    with pytest.raises(DataError, match="only 1 labels reachable"):
        select_subset(g, "home", 2, seed=0)


def test_plan_sessions_two_cycle():
    g = SiteGraph(frozenset("ab"), frozenset({("a", "b"), ("b", "a")}))
    sessions = plan_sessions(g, session_len=4, min_samples_per_label=2, seed=1, start="a")
    assert len(sessions) == 1
    assert sessions[0].labels == ("a", "b", "a", "b")
    assert sessions[0].forced == (False,) * 4


def test_plan_sessions_zero_threshold_forces_enumeration():
    g = SiteGraph(frozenset("abcd"), frozenset({("a", "b"), ("b", "a"), ("a", "c"), ("c", "d"), ("d", "a")}))
    sessions = plan_sessions(g, session_len=4, dup_threshold=0.0, min_samples_per_label=1, seed=0, start="a")
    flat = [l for s in sessions for l in s.labels]
    forced = [f for s in sessions for f in s.forced]
    assert set(flat) >= set("abcd")
    assert any(forced)


def test_plan_sessions_min_visit_totals():
    g = star_graph(9)  # star leaves are sinks: exercises self-loop injection
    sessions = plan_sessions(g, session_len=10, min_samples_per_label=3, seed=5, start="home")
    counts = {}
    for s in sessions:
        assert len(s.labels) == 10
        for l in s.labels:
            counts[l] = counts.get(l, 0) + 1
    assert all(v >= 3 for v in counts.values())
    assert sum(counts.values()) >= 30


def test_plan_sessions_edge_valid_when_not_forced():
    rng = random.Random(7)
    labels = [f"n{i}" for i in range(12)]
    edges = {(labels[i], labels[(i + 1) % 12]) for i in range(12)}
    edges |= {(rng.choice(labels), rng.choice(labels)) for _ in range(20)}
    g = SiteGraph(frozenset(labels), frozenset(edges))
    sessions = plan_sessions(g, session_len=15, min_samples_per_label=2, seed=3)
    assert validate_paths(g, [(s.labels, s.forced) for s in sessions]) == []


def test_refine_identity_when_no_redirects():
    log = session_arg_log()
    c = build_canonicalizer(log)
    g = build_preliminary_graph(
        [("x.com/a?sessionid=1", "x.com/p?id=1"), ("x.com/p?id=1", "x.com/p?id=2")], c
    )
    redirects = RedirectLog(tuple((u, u) for u, _ in log))
    c2, g3 = refine(g, c, redirects, log)
    assert g3.labels == g.labels
    assert g3.edges == g.edges


def test_refine_nondeterministic_redirect_expands_cross_product():
    log = [("http://x.com/a", "fa"), ("http://x.com/b", "fb")]
    c = build_canonicalizer(log)
    g = build_preliminary_graph([("x.com/a", "x.com/b")], c)
    # requesting /a sometimes lands on /a, sometimes on /a2 (new label)
    redirects = RedirectLog(
        (("x.com/a", "x.com/a"), ("x.com/a", "x.com/a2"), ("x.com/b", "x.com/b"))
    )
    log2 = log + [("http://x.com/a2", "fa")]
    c2, g3 = refine(g, c, redirects, log2)
    assert g3.labels == frozenset({"x.com/a", "x.com/a2", "x.com/b"})
    assert g3.edges == frozenset({("x.com/a", "x.com/b"), ("x.com/a2", "x.com/b")})
    # brute-force cross product oracle
    t_a = {"x.com/a", "x.com/a2"}
    t_b = {"x.com/b"}
    expected = {(a, b) for a, b in itertools.product(sorted(t_a), sorted(t_b))}
    assert set(g3.edges) == expected


def test_refine_label_growth():
    log = [("http://x.com/a", "fa"), ("http://x.com/b", "fb")]
    c = build_canonicalizer(log)
    g = build_preliminary_graph([("x.com/a", "x.com/b"), ("x.com/b", "x.com/a")], c)
    redirects = RedirectLog(
        (("x.com/a", "x.com/a"), ("x.com/a", "x.com/a-moved"), ("x.com/b", "x.com/b"))
    )
    log2 = log + [("http://x.com/a-moved", "fa")]
    _, g3 = refine(g, c, redirects, log2)
    assert len(g3.labels) == len(g.labels) + 1


def test_refine_requires_coverage():
    log = [("http://x.com/a", "fa"), ("http://x.com/b", "fb")]
    c = build_canonicalizer(log)
    g = build_preliminary_graph([("x.com/a", "x.com/b")], c)
    redirects = RedirectLog((("x.com/a", "x.com/a"),))
    with pytest.raises(DataError, match="no observation"):
        refine(g, c, redirects, log)


def test_graph_record_round_trip():
    g = star_graph(4)
    rec = graph_to_record(g)
    assert graph_from_record(rec) == g
    rec["version"] = 9
    with pytest.raises(DataError, match="version"):
        graph_from_record(rec)


def test_sessions_round_trip():
    s = BrowsingSession(("a", "b"), (False, True))
    buf = io.StringIO()
    write_sessions([s], buf)
    buf.seek(0)
    assert read_sessions(buf) == [s]
