"""Seeded synthetic website and traffic generator.

Builds a site specification (pages with object sets drawn partly from a
shared pool, a link graph reachable from the homepage, alias URLs whose
session argument never changes content, and optional nondeterministic URL
redirections) together with the crawl, link, and redirect logs the
site-graph pipeline consumes. Traffic generation then replays planned
browsing sessions under a collection-mode configuration: browser caching
suppresses repeat object fetches, per-user cookies shift request sizes by a
seeded per-user offset, cross-site browsing churns the cache, and size
jitter perturbs object sizes. All randomness derives from explicit seeds,
so a fixed (site seed, user seed, mode) triple reproduces the corpus
bit-for-bit.

Object sizes are quantized (requests to 16-byte steps, responses to 64-byte
steps by default) so that the packet-size vocabulary stays compact; the
jitter knob and the cookie offset control how separable the classes are.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .sitegraph import BrowsingSession, SiteGraph
from .trace import DEFAULT_MTU, Sample


@dataclass(frozen=True)
class ObjectSpec:
    object_id: str
    domain: str
    request_size: int
    response_size: int


@dataclass(frozen=True)
class PageSpec:
    page_id: int
    label: str
    fingerprint: str
    urls: tuple[str, ...]  # canonical first, then aliases
    base_doc: ObjectSpec
    objects: tuple[ObjectSpec, ...]


@dataclass(frozen=True)
class SynthParams:
    """Site shape and size-distribution knobs.

    Responses are log-normal around ``response_median`` and quantized;
    shared-pool objects reuse their response size across pages, but every
    page draws its own request size per object (URL and header lengths are
    page-specific even for shared resources). ``request_jitter`` is
    site-inherent per-fetch request variability, present in every collection
    mode, which is what gives trained clusters enough request-axis variance
    to absorb the per-user cookie offset.
    """

    n_labels: int = 20
    mean_out_degree: float = 4.0
    primary_domain: str = "siteco.test"
    object_domains: tuple[str, ...] = ("siteco.test", "cdn-east.test", "imghost.test")
    objects_per_label: int = 6
    shared_pool_size: int = 40
    sharing_ratio: float = 0.3
    alias_count: int = 2
    redirect_rate: float = 0.0
    request_range: tuple[int, int] = (200, 1200)
    request_quantum: int = 16
    request_jitter: float = 0.04
    response_median: float = 8192.0
    response_sigma: float = 0.8
    response_quantum: int = 64
    cookie_offset_max: int = 48
    mtu: int = DEFAULT_MTU

    def __post_init__(self) -> None:
        if self.n_labels < 2:
            raise ConfigError("need at least 2 labels")
        if self.mean_out_degree > self.n_labels - 1:
            raise ConfigError(
                f"mean out-degree {self.mean_out_degree} infeasible for {self.n_labels} labels"
            )
        if not 0.0 <= self.sharing_ratio <= 1.0:
            raise ConfigError("sharing ratio must be in [0, 1]")
        if not 0.0 <= self.request_jitter <= 0.5:
            raise ConfigError("request jitter must be in [0, 0.5]")


@dataclass(frozen=True)
class ModeConfig:
    """Collection-mode knobs: cache, cookie retention, browsing scope, jitter."""

    cache: bool
    user_cookies: bool
    multi_site: bool
    noise: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise <= 0.5:
            raise ConfigError("noise must be in [0, 0.5]")


def mode_config(mode_number: int, noise: float = 0.0) -> ModeConfig:
    """The four standard collection modes.

    1: cache off, fresh state per session, single site
    2: cache on, fresh state per session, single site
    3: cache on, persistent per-user state, single site
    4: cache on, persistent per-user state, browsing spans other sites
    """
    presets = {
        1: (False, False, False),
        2: (True, False, False),
        3: (True, True, False),
        4: (True, True, True),
    }
    if mode_number not in presets:
        raise ConfigError(f"unknown collection mode {mode_number}")
    cache, cookies, multi = presets[mode_number]
    return ModeConfig(cache, cookies, multi, noise)


@dataclass(frozen=True, eq=False)
class SiteSpec:
    seed: int
    params: SynthParams
    pages: tuple[PageSpec, ...]
    edges: tuple[tuple[int, int], ...]  # page-id pairs
    redirects: dict[str, tuple[str, ...]]  # url -> possible final urls
    final_labels: dict[str, str]  # final url -> truth label
    label_to_page: dict[str, int] = field(default_factory=dict)

    def graph(self) -> SiteGraph:
        labels = frozenset(p.label for p in self.pages)
        edges = frozenset((self.pages[a].label, self.pages[b].label) for a, b in self.edges)
        return SiteGraph(labels, edges)

    def homepage(self) -> str:
        return self.pages[0].label


def _quantize(value: float, quantum: int) -> int:
    return max(quantum, int(round(value / quantum)) * quantum)


def generate_site(params: SynthParams, seed: int):
    """Build a site and its recorded logs.

    Returns (site, crawl_log, crawl_edges, redirect_log, refined_crawl_log):
    crawl_log holds (url, fingerprint) pairs over all alias URLs,
    crawl_edges the recorded link pairs, redirect_log the observed
    (requested, final) pairs, and refined_crawl_log extends crawl_log with
    the redirect-target URLs for rebuilding the canonicalizer.
    """
    rng = np.random.default_rng(seed)
    p = params

    def draw_request() -> int:
        return _quantize(rng.uniform(*p.request_range), p.request_quantum)

    def draw_response() -> int:
        resp = float(np.exp(np.log(p.response_median) + p.response_sigma * rng.standard_normal()))
        return min(_quantize(resp, p.response_quantum), 64 * p.mtu)

    def draw_domain() -> str:
        return p.object_domains[int(rng.integers(len(p.object_domains)))]

    # shared resources: fixed (domain, response); request size is per page
    pool = [(f"pool{i}", draw_domain(), draw_response()) for i in range(p.shared_pool_size)]

    pages = []
    for i in range(p.n_labels):
        label = f"{p.primary_domain}/p/{i}"
        urls = [f"https://{p.primary_domain}/p/{i}"] + [
            f"https://{p.primary_domain}/p/{i}?s={k}" for k in range(1, p.alias_count + 1)
        ]
        base = ObjectSpec(f"doc{i}", p.primary_domain, draw_request(), draw_response())
        objects = []
        for j in range(p.objects_per_label):
            if pool and rng.random() < p.sharing_ratio:
                oid, domain, resp = pool[int(rng.integers(len(pool)))]
                objects.append(ObjectSpec(oid, domain, draw_request(), resp))
            else:
                objects.append(ObjectSpec(f"obj{i}.{j}", draw_domain(), draw_request(), draw_response()))
        pages.append(
            PageSpec(i, label, f"fp{i}", tuple(urls), base, tuple(objects))
        )

    edges = set()
    for i in range(1, p.n_labels):
        edges.add((int(rng.integers(i)), i))  # spine: every page reachable
    target = int(round(p.n_labels * p.mean_out_degree))
    attempts = 0
    while len(edges) < target and attempts < 20 * target:
        a = int(rng.integers(p.n_labels))
        b = int(rng.integers(p.n_labels))
        if a != b:
            edges.add((a, b))
        attempts += 1
    edge_list = tuple(sorted(edges))

    redirects: dict[str, tuple[str, ...]] = {}
    final_labels: dict[str, str] = {}
    moved_log_entries = []
    for page in pages:
        final_labels[page.urls[0]] = page.label
        moved = None
        if rng.random() < p.redirect_rate:
            moved = f"https://{p.primary_domain}/p/{page.page_id}/v1"
            moved_label = f"{p.primary_domain}/p/{page.page_id}/v1"
            final_labels[moved] = moved_label
            moved_log_entries.append((moved, page.fingerprint))
        for url in page.urls:
            finals = [page.urls[0]]
            if moved is not None:
                finals.append(moved)
            redirects[url] = tuple(finals)

    crawl_log = [(url, page.fingerprint) for page in pages for url in page.urls]
    crawl_edges = []
    for a, b in edge_list:
        ua = pages[a].urls[int(rng.integers(len(pages[a].urls)))]
        ub = pages[b].urls[int(rng.integers(len(pages[b].urls)))]
        crawl_edges.append((ua, ub))
    redirect_log = [(url, final) for url, finals in sorted(redirects.items()) for final in finals]
    refined_crawl_log = crawl_log + moved_log_entries

    site = SiteSpec(
        seed=seed,
        params=p,
        pages=tuple(pages),
        edges=edge_list,
        redirects=redirects,
        final_labels=final_labels,
        label_to_page={page.label: page.page_id for page in pages},
    )
    return site, crawl_log, crawl_edges, redirect_log, refined_crawl_log


def _packetize(response_size: int, mtu: int) -> list[int]:
    full, rest = divmod(response_size, mtu)
    return [mtu] * full + ([rest] if rest else [])


def generate_traffic(
    site: SiteSpec,
    sessions: Sequence[BrowsingSession],
    mode: ModeConfig,
    user_seed: int,
) -> list[Sample]:
    """Replay planned sessions as labeled samples under a collection mode.

    Every object fetch emits one request/response burst pair on its domain's
    flow. With caching on, objects already fetched by this user (this
    session, or ever, with persistent per-user state) are skipped; the
    page's base document is never cached, so revisits still produce
    traffic. Ground-truth labels follow any URL redirection of the step.
    """
    p = site.params
    user_rng = np.random.default_rng((user_seed, site.seed, 0xC00C1E))
    cookie_offset = 0
    if mode.user_cookies:
        cookie_offset = int(user_rng.integers(0, p.cookie_offset_max // p.request_quantum + 1))
        cookie_offset *= p.request_quantum

    samples = []
    cache: set[str] = set()
    for sess_idx, session in enumerate(sessions):
        if not mode.user_cookies:
            cache = set()  # fresh browser state every session
        for step_idx, label in enumerate(session.labels):
            page_id = site.label_to_page.get(label)
            if page_id is None:
                raise DataError(f"session label {label!r} not generated by this site")
            page = site.pages[page_id]
            rng = np.random.default_rng((user_seed, site.seed, sess_idx, step_idx))

            url = page.urls[int(rng.integers(len(page.urls)))]
            finals = site.redirects[url]
            final = finals[int(rng.integers(len(finals)))]
            truth = site.final_labels[final]

            if mode.multi_site and cache:
                # pressure from interleaved other-site browsing evicts
                # a random slice of cached objects
                cached = sorted(cache)
                evict = rng.random(len(cached)) < 0.1
                for obj_id, gone in zip(cached, evict):
                    if gone:
                        cache.discard(obj_id)

            def jitter(size: int, quantum: int) -> int:
                if mode.noise == 0.0:
                    return size
                factor = 1.0 + mode.noise * float(rng.uniform(-1.0, 1.0))
                return _quantize(size * factor, quantum)

            flows: dict[str, list[tuple[int, int]]] = {}
            order: list[str] = []
            for obj in (page.base_doc, *page.objects):
                cacheable = obj.object_id != page.base_doc.object_id
                if mode.cache and cacheable and obj.object_id in cache:
                    continue
                req = jitter(obj.request_size + cookie_offset, p.request_quantum)
                resp = jitter(obj.response_size, p.response_quantum)
                if obj.domain not in flows:
                    flows[obj.domain] = []
                    order.append(obj.domain)
                flows[obj.domain].append((1, min(req, p.mtu)))
                flows[obj.domain].extend((-1, s) for s in _packetize(resp, p.mtu))
                if mode.cache and cacheable:
                    cache.add(obj.object_id)
            samples.append(
                Sample.build(
                    truth,
                    f"u{user_seed}-s{sess_idx}",
                    step_idx,
                    [(d, flows[d]) for d in order],
                )
            )
    return samples
