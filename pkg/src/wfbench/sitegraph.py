"""URL canonicalization, site graphs, and browsing-session planning.

Labels are canonical strings of the form ``host/path?arg=value&...`` with the
host lowercased, any leading ``www.`` removed, trailing slashes stripped, and
only query arguments that demonstrably change page content retained (sorted
by name). The canonicalizer learns which arguments matter by comparing
content fingerprints of recorded crawl entries that differ only in one
argument; arguments it cannot rule out are kept, so collapsing errs toward
splitting one page into several labels rather than merging distinct pages.

A preliminary graph is built from recorded crawl links, optionally reduced to
a connected subset, used to plan fixed-length browsing sessions, and finally
refined against observed URL redirections so that every label sequence seen
in training remains a valid path of the refined graph.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO
from urllib.parse import parse_qsl, urlsplit

from .errors import DataError

GRAPH_FORMAT_VERSION = 1

Label = str


@dataclass(frozen=True)
class Url:
    """Parsed, normalized URL. The canonical key ignores scheme and port."""

    scheme: str
    host: str
    port: int | None
    path: str
    query: tuple[tuple[str, str], ...]

    def key(self) -> str:
        """Normalized URL string with query args in original order."""
        base = self.host + self.path
        if not self.query:
            return base
        return base + "?" + "&".join(f"{k}={v}" for k, v in self.query)


def parse_url(raw: str) -> Url:
    """Parse a URL (scheme optional) into normalized form.

    The whole string is lowercased, a leading ``www.`` is dropped from the
    host, and trailing slashes are removed from the path, so equal pages
    under cosmetic URL variations parse identically.
    """
    s = raw.strip().lower()
    if "://" not in s:
        s = "//" + s
    parts = urlsplit(s)
    host = parts.hostname or ""
    if host.startswith("www."):
        host = host[4:]
    if not host:
        raise DataError(f"URL has no host: {raw!r}")
    path = parts.path.rstrip("/")
    query = tuple(parse_qsl(parts.query, keep_blank_values=True))
    return Url(parts.scheme, host, parts.port, path, query)


@dataclass(frozen=True)
class Canonicalizer:
    """Maps URLs to labels by stripping content-irrelevant query arguments.

    ``insignificant`` holds the argument names proven not to affect content;
    every other argument (including ones never observed) is retained, which
    is the conservative direction. Total over all URLs.
    """

    insignificant: frozenset[str]
    universe: tuple[str, ...]  # normalized keys of the URLs this was built from

    def canonicalize(self, url: Url | str) -> Label:
        if isinstance(url, str):
            url = parse_url(url)
        kept = sorted((k, v) for k, v in url.query if k not in self.insignificant)
        base = url.host + url.path
        if not kept:
            return base
        return base + "?" + "&".join(f"{k}={v}" for k, v in kept)

    def labels(self) -> set[Label]:
        return {self.canonicalize(u) for u in self.universe}

    def reverse(self) -> dict[Label, tuple[str, ...]]:
        """Label -> the build-universe URLs mapping to it; never empty-valued."""
        rev: dict[Label, list[str]] = {}
        for u in self.universe:
            rev.setdefault(self.canonicalize(u), []).append(u)
        return {l: tuple(us) for l, us in rev.items()}


def build_canonicalizer(
    crawl_log: Sequence[tuple[str, str]],
    max_paths: int = 6,
    max_values: int = 6,
) -> Canonicalizer:
    """Learn the canonicalizer from (url, content_fingerprint) crawl entries.

    For each query argument, up to ``max_paths`` URL paths and ``max_values``
    argument values per path are examined (lexicographically smallest, so the
    build is deterministic). The argument is insignificant only when every
    comparable pair of entries that differ solely in that argument, and every
    pair where the argument is present vs removed, has identical
    fingerprints. Arguments with no comparable pair stay significant.
    """
    if not crawl_log:
        raise DataError("empty crawl log")
    fingerprints: dict[str, str] = {}
    parsed: dict[str, Url] = {}
    for raw, fp in crawl_log:
        url = parse_url(raw)
        key = url.key()
        parsed.setdefault(key, url)
        fingerprints.setdefault(key, fp)

    arg_paths: dict[str, set[str]] = {}
    for url in parsed.values():
        for name, _ in url.query:
            arg_paths.setdefault(name, set()).add(url.host + url.path)

    # Group entries by (path, other-args) so that within a group entries
    # differ only in the argument under study (value change or removal).
    insignificant = set()
    for name, paths in arg_paths.items():
        sampled_paths = sorted(paths)[:max_paths]
        values_by_path: dict[str, list[str]] = {}
        for url in parsed.values():
            p = url.host + url.path
            if p in sampled_paths:
                for k, v in url.query:
                    if k == name:
                        values_by_path.setdefault(p, []).append(v)
        sampled_values = {
            p: set(sorted(set(vs))[:max_values]) for p, vs in values_by_path.items()
        }
        groups: dict[tuple, list[tuple[str | None, str]]] = {}
        for key, url in parsed.items():
            p = url.host + url.path
            if p not in sampled_paths:
                continue
            others = tuple(sorted((k, v) for k, v in url.query if k != name))
            value = next((v for k, v in url.query if k == name), None)
            if value is not None and value not in sampled_values.get(p, set()):
                continue
            groups.setdefault((p, others), []).append((value, fingerprints[key]))
        compared = False
        significant = False
        for members in groups.values():
            if len(members) < 2:
                continue
            if len({v for v, _ in members}) < 2:
                continue
            compared = True
            if len({fp for _, fp in members}) > 1:
                significant = True
                break
        if compared and not significant:
            insignificant.add(name)

    return Canonicalizer(frozenset(insignificant), tuple(sorted(parsed)))


@dataclass(frozen=True)
class SiteGraph:
    labels: frozenset[Label]
    edges: frozenset[tuple[Label, Label]]

    def __post_init__(self) -> None:
        for a, b in self.edges:
            if a not in self.labels or b not in self.labels:
                raise DataError(f"edge ({a!r}, {b!r}) has endpoint outside label set")

    def out_neighbors(self) -> dict[Label, list[Label]]:
        adj: dict[Label, list[Label]] = {l: [] for l in self.labels}
        for a, b in self.edges:
            adj[a].append(b)
        return {l: sorted(ns) for l, ns in adj.items()}


@dataclass(frozen=True)
class RedirectLog:
    """Observed (requested URL, final URL) pairs from executed page loads."""

    observations: tuple[tuple[str, str], ...]

    def translation(self) -> dict[str, tuple[str, ...]]:
        t: dict[str, set[str]] = {}
        for requested, final in self.observations:
            t.setdefault(parse_url(requested).key(), set()).add(parse_url(final).key())
        return {u: tuple(sorted(fs)) for u, fs in t.items()}

    def finals(self) -> tuple[str, ...]:
        return tuple(sorted({parse_url(f).key() for _, f in self.observations}))


@dataclass(frozen=True)
class BrowsingSession:
    """Fixed-length planned label sequence; forced[i] marks coverage visits
    that did not follow a graph edge."""

    labels: tuple[Label, ...]
    forced: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.forced):
            raise DataError("labels/forced length mismatch")


def build_preliminary_graph(
    crawl_edges: Sequence[tuple[str, str]], c: Canonicalizer
) -> SiteGraph:
    """Canonicalize recorded crawl links into the preliminary label graph."""
    labels = set()
    edges = set()
    for u, v in crawl_edges:
        a, b = c.canonicalize(u), c.canonicalize(v)
        labels.add(a)
        labels.add(b)
        edges.add((a, b))
    return SiteGraph(frozenset(labels), frozenset(edges))


def select_subset(g: SiteGraph, homepage: Label, n: int, seed: int) -> SiteGraph:
    """Grow a connected n-label subset from the homepage by seeded expansion.

    Each step adds one uniformly random label reachable via a single edge
    from the current subset; the result keeps only edges between selected
    labels.
    """
    if homepage not in g.labels:
        raise DataError(f"homepage {homepage!r} not in graph")
    adj = g.out_neighbors()
    rng = random.Random(seed)
    subset = {homepage}
    frontier = set(adj[homepage]) - subset
    while len(subset) < n:
        if not frontier:
            raise DataError(
                f"only {len(subset)} labels reachable from {homepage!r}, need {n}"
            )
        pick = sorted(frontier)[rng.randrange(len(frontier))]
        subset.add(pick)
        frontier.update(adj[pick])
        frontier -= subset
    edges = frozenset((a, b) for a, b in g.edges if a in subset and b in subset)
    return SiteGraph(frozenset(subset), edges)


def plan_sessions(
    g: SiteGraph,
    session_len: int = 75,
    dup_threshold: float = 0.6,
    min_samples_per_label: int = 1,
    seed: int = 0,
    start: Label | None = None,
) -> list[BrowsingSession]:
    """Plan fixed-length sessions by a seeded random walk with forced coverage.

    The walk prefers out-neighbors not yet visited in the current coverage
    pass. Once the fraction of duplicate visits within the pass reaches
    ``dup_threshold``, all labels still unvisited in the pass are appended
    directly (flagged as forced, non-edge steps). Passes repeat until every
    label has at least ``min_samples_per_label`` visits overall; the final
    session is padded with ordinary walk steps to exactly ``session_len``.
    Sink labels walk through an injected self-loop; those steps follow no
    real edge, so they carry the non-edge flag as well.
    """
    if not g.labels:
        raise DataError("cannot plan sessions on an empty graph")
    labels = sorted(g.labels)
    adj = g.out_neighbors()
    sinks = set()
    for l in labels:
        if not adj[l]:
            adj[l] = [l]
            sinks.add(l)
    if start is None:
        start = labels[0]
    rng = random.Random(seed)
    counts = {l: 0 for l in labels}
    pass_visited: set[Label] = set()
    pass_steps = 0
    pass_dups = 0
    sessions: list[BrowsingSession] = []
    cur_labels: list[Label] = []
    cur_forced: list[bool] = []

    def visit(lbl: Label, forced: bool) -> None:
        nonlocal pass_steps, pass_dups, pass_visited
        cur_labels.append(lbl)
        cur_forced.append(forced)
        counts[lbl] += 1
        pass_steps += 1
        if lbl in pass_visited:
            pass_dups += 1
        else:
            pass_visited.add(lbl)
        if len(pass_visited) == len(labels):
            pass_visited = set()
            pass_steps = 0
            pass_dups = 0
        if len(cur_labels) == session_len:
            sessions.append(BrowsingSession(tuple(cur_labels), tuple(cur_forced)))
            cur_labels.clear()
            cur_forced.clear()

    def walk_step(current: Label) -> Label:
        neighbors = adj[current]
        fresh = [x for x in neighbors if x not in pass_visited]
        pool = fresh or neighbors
        nxt = pool[rng.randrange(len(pool))]
        visit(nxt, forced=current in sinks)
        return nxt

    current = start
    visit(current, forced=False)
    while any(counts[l] < min_samples_per_label for l in labels):
        frac = pass_dups / pass_steps if pass_steps else 0.0
        if frac >= dup_threshold:
            for lbl in sorted(set(labels) - pass_visited):
                visit(lbl, forced=True)
                current = lbl
            continue
        current = walk_step(current)
    while cur_labels:
        current = walk_step(current)
    return sessions


def refine(
    g_prelim: SiteGraph,
    c: Canonicalizer,
    log: RedirectLog,
    refined_crawl_log: Sequence[tuple[str, str]],
) -> tuple[Canonicalizer, SiteGraph]:
    """Rebuild labels over final URLs and expand edges through redirections.

    Each preliminary edge (l, m) expands to the cross product of the final
    URLs its endpoint labels were observed to resolve to; canonicalizing
    those pairs with the rebuilt canonicalizer gives the refined edge set.
    Every label sequence whose consecutive steps followed preliminary edges
    therefore stays a valid path after refinement. Final URLs missing from
    the refined crawl log still canonicalize (unseen arguments are retained,
    giving each distinct URL its own label).
    """
    t = log.translation()
    c2 = build_canonicalizer(refined_crawl_log)
    rev = c.reverse()

    t_label: dict[Label, set[str]] = {}
    uncovered = []
    for l in g_prelim.labels:
        finals: set[str] = set()
        for u in rev.get(l, ()):
            finals.update(t.get(u, ()))
        if not finals:
            uncovered.append(l)
        t_label[l] = finals
    if uncovered:
        raise DataError(
            f"redirect log has no observation for {len(uncovered)} labels, "
            f"e.g. {sorted(uncovered)[:3]}"
        )

    labels = {c2.canonicalize(u) for u in log.finals()}
    edges = set()
    for l, m in g_prelim.edges:
        for u in t_label[l]:
            for v in t_label[m]:
                a, b = c2.canonicalize(u), c2.canonicalize(v)
                labels.add(a)
                labels.add(b)
                edges.add((a, b))
    return c2, SiteGraph(frozenset(labels), frozenset(edges))


def validate_paths(
    g: SiteGraph, sessions: Iterable[tuple[Sequence[Label], Sequence[bool]]]
) -> list[tuple[int, int, Label, Label]]:
    """Replay label sequences against the graph; returns edge violations.

    Pairs where the second step is a forced coverage visit are exempt.
    Violations come back as (session index, step, from_label, to_label).
    """
    has_out = {a for a, _ in g.edges}
    violations = []
    for si, (labels, forced) in enumerate(sessions):
        for i in range(1, len(labels)):
            if forced[i]:
                continue
            if labels[i - 1] == labels[i] and labels[i - 1] not in has_out:
                continue  # injected self-loop on a sink
            if (labels[i - 1], labels[i]) not in g.edges:
                violations.append((si, i, labels[i - 1], labels[i]))
    return violations


def graph_to_record(g: SiteGraph) -> dict:
    labels = sorted(g.labels)
    index = {l: i for i, l in enumerate(labels)}
    edges = sorted([index[a], index[b]] for a, b in g.edges)
    return {"version": GRAPH_FORMAT_VERSION, "labels": labels, "edges": edges}


def graph_from_record(rec: Mapping) -> SiteGraph:
    if rec.get("version") != GRAPH_FORMAT_VERSION:
        raise DataError(
            f"graph format version mismatch: file has {rec.get('version')!r}, "
            f"reader supports {GRAPH_FORMAT_VERSION}"
        )
    labels = list(rec["labels"])
    edges = frozenset((labels[i], labels[j]) for i, j in rec["edges"])
    return SiteGraph(frozenset(labels), edges)


def save_graph(g: SiteGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(graph_to_record(g), fp, separators=(",", ":"))
        fp.write("\n")


def load_graph(path: str) -> SiteGraph:
    with open(path, "r", encoding="utf-8") as fp:
        return graph_from_record(json.load(fp))


def _write_jsonl(fp: TextIO, records: Iterable[dict]) -> None:
    for rec in records:
        fp.write(json.dumps(rec, separators=(",", ":")))
        fp.write("\n")


def _read_jsonl(fp: TextIO) -> list[dict]:
    return [json.loads(line) for line in fp if line.strip()]


def write_crawl_log(entries: Iterable[tuple[str, str]], fp: TextIO) -> None:
    _write_jsonl(fp, ({"url": u, "fingerprint": f} for u, f in entries))


def read_crawl_log(fp: TextIO) -> list[tuple[str, str]]:
    return [(r["url"], r["fingerprint"]) for r in _read_jsonl(fp)]


def write_edge_log(edges: Iterable[tuple[str, str]], fp: TextIO) -> None:
    _write_jsonl(fp, ({"from_url": a, "to_url": b} for a, b in edges))


def read_edge_log(fp: TextIO) -> list[tuple[str, str]]:
    return [(r["from_url"], r["to_url"]) for r in _read_jsonl(fp)]


def write_redirect_log(observations: Iterable[tuple[str, str]], fp: TextIO) -> None:
    _write_jsonl(fp, ({"requested": a, "final": b} for a, b in observations))


def read_redirect_log(fp: TextIO) -> RedirectLog:
    return RedirectLog(tuple((r["requested"], r["final"]) for r in _read_jsonl(fp)))


def write_sessions(sessions: Iterable[BrowsingSession], fp: TextIO) -> None:
    for s in sessions:
        fp.write(json.dumps({"labels": list(s.labels), "forced": list(s.forced)}, separators=(",", ":")))
        fp.write("\n")


def read_sessions(fp: TextIO) -> list[BrowsingSession]:
    sessions = []
    for line in fp:
        line = line.strip()
        if line:
            rec = json.loads(line)
            sessions.append(BrowsingSession(tuple(rec["labels"]), tuple(rec["forced"])))
    return sessions
