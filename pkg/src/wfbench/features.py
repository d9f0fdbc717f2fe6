"""Burst-pair extraction, per-domain Gaussian clusters, and feature vectors.

A burst pair is (outgoing run bytes, following incoming run bytes) on one TCP
flow: contiguous same-direction packet runs collapse to their byte sums, each
outgoing run pairs with the incoming run right after it (0 if the flow ends),
and any incoming run before the first outgoing run is dropped. Pairs group by
the flow's second-level domain and are clustered per domain with seeded
k-means; a diagonal Gaussian fitted to each cluster becomes one feature
dimension whose value is the summed density of a sample's pairs under it.
Packet-size count features (one per direction and byte size up to the MTU)
are appended, and everything is min-max scaled to [0, 1] with bounds frozen
at training time.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .trace import DEFAULT_MTU, Direction, Flow, Sample

log = logging.getLogger(__name__)

FEATURE_SPACE_VERSION = 1
DEFAULT_K_GRID = (1, 2, 4, 8, 16)
DEFAULT_K = 4
VARIANCE_FLOOR = 1.0


@dataclass(frozen=True)
class BurstPair:
    out_bytes: int
    in_bytes: int
    domain: str

    def __post_init__(self) -> None:
        if self.out_bytes <= 0 or self.in_bytes < 0:
            raise DataError(f"invalid burst pair ({self.out_bytes}, {self.in_bytes})")


def direction_runs(flow: Flow) -> list[tuple[int, int, int]]:
    """Collapse a flow into (direction, total_bytes, packet_count) runs."""
    runs = []
    for pkt in flow.packets:
        d = int(pkt.direction)
        if runs and runs[-1][0] == d:
            runs[-1][1] += pkt.payload_size
            runs[-1][2] += 1
        else:
            runs.append([d, pkt.payload_size, 1])
    return [tuple(r) for r in runs]


def extract_burst_pairs(flow: Flow) -> list[BurstPair]:
    runs = direction_runs(flow)
    pairs = []
    i = 0
    while i < len(runs) and runs[i][0] == Direction.IN:
        i += 1  # discard incoming data before the first request
    while i < len(runs):
        out_bytes = runs[i][1]
        in_bytes = runs[i + 1][1] if i + 1 < len(runs) else 0
        pairs.append(BurstPair(out_bytes, in_bytes, flow.remote_domain))
        i += 2
    return pairs


def sample_burst_pairs(sample: Sample) -> list[BurstPair]:
    pairs = []
    for flow in sample.flows:
        pairs.extend(extract_burst_pairs(flow))
    return pairs


def kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 100):
    """Seeded k-means: farthest-point init over distinct points, Lloyd updates.

    Ties resolve to the lowest index throughout, so a fixed seed gives
    bit-identical clusters. Returns (centers, assignment, inertia).
    """
    points = np.asarray(points, dtype=np.float64)
    distinct = np.unique(points, axis=0)
    if k > len(distinct):
        raise DataError(f"k={k} exceeds {len(distinct)} distinct points")
    rng = np.random.default_rng(seed)
    centers = [distinct[int(rng.integers(len(distinct)))]]
    for _ in range(1, k):
        d2 = np.min(
            ((distinct[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(-1), axis=1
        )
        centers.append(distinct[int(np.argmax(d2))])
    centers = np.asarray(centers, dtype=np.float64)

    assign = np.full(len(points), -1)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new_assign = d2.argmin(axis=1)
        for j in range(k):
            mask = new_assign == j
            if not mask.any():
                lonely = int(np.argmax(d2.min(axis=1)))
                new_assign[lonely] = j
                mask = new_assign == j
            centers[j] = points[mask].mean(axis=0)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    inertia = float(d2[np.arange(len(points)), assign].sum())
    return centers, assign, inertia


@dataclass(frozen=True, eq=False)
class DomainGaussians:
    """Diagonal Gaussians fitted to one domain's burst-pair clusters."""

    domain: str
    means: np.ndarray  # (k, 2)
    variances: np.ndarray  # (k, 2), floored
    inertia: float

    @property
    def k(self) -> int:
        return len(self.means)

    def densities(self, pairs: np.ndarray) -> np.ndarray:
        """Summed Gaussian density of the given (n, 2) pairs per cluster."""
        if len(pairs) == 0:
            return np.zeros(self.k)
        diff = pairs[:, None, :] - self.means[None, :, :]
        z = (diff**2 / self.variances[None, :, :]).sum(-1)
        norm = 2.0 * math.pi * np.sqrt(self.variances.prod(axis=1))
        return (np.exp(-0.5 * z) / norm[None, :]).sum(axis=0)


def fit_gaussians(
    pairs: Sequence[tuple[int, int]],
    domain: str,
    k: int,
    seed: int,
    variance_floor: float = VARIANCE_FLOOR,
) -> DomainGaussians:
    points = np.asarray(pairs, dtype=np.float64)
    centers, assign, inertia = kmeans(points, k, seed)
    variances = np.empty_like(centers)
    for j in range(k):
        cluster = points[assign == j]
        variances[j] = np.maximum(cluster.var(axis=0), variance_floor)
    return DomainGaussians(domain, centers, variances, inertia)


def fit_domain_gaussians(
    pairs_by_domain: Mapping[str, Sequence[tuple[int, int]]],
    k_grid: Sequence[int] = DEFAULT_K_GRID,
    variance_floor: float = VARIANCE_FLOOR,
    seed: int = 0,
    k_by_domain: Mapping[str, int] | None = None,
) -> dict[str, DomainGaussians]:
    """Fit per-domain Gaussians at a grid-capped cluster count.

    Without an explicit ``k_by_domain`` choice (e.g. from held-out
    validation) each domain uses DEFAULT_K, capped at both the grid maximum
    and the domain's distinct-pair count. Domains with no pairs are skipped.
    """
    fitted = {}
    for domain in sorted(pairs_by_domain):
        pairs = pairs_by_domain[domain]
        if not pairs:
            log.warning("domain %s has no burst pairs, omitted from feature space", domain)
            continue
        distinct = len({tuple(p) for p in pairs})
        k = k_by_domain[domain] if k_by_domain and domain in k_by_domain else DEFAULT_K
        k = max(1, min(k, max(k_grid), distinct))
        fitted[domain] = fit_gaussians(pairs, domain, k, seed, variance_floor)
    return fitted


def collect_pairs_by_domain(samples: Iterable[Sample]) -> dict[str, list[tuple[int, int]]]:
    by_domain: dict[str, list[tuple[int, int]]] = {}
    for sample in samples:
        for pair in sample_burst_pairs(sample):
            by_domain.setdefault(pair.domain, []).append((pair.out_bytes, pair.in_bytes))
    return by_domain


def size_count_features(sample: Sample, mtu: int = DEFAULT_MTU) -> np.ndarray:
    """Packet counts per (direction, size): outgoing sizes 1..mtu, then incoming."""
    vec = np.zeros(2 * mtu)
    for pkt in sample.iter_packets():
        size = pkt.payload_size
        if size < 1 or size > mtu:
            raise DataError(f"packet size {size} outside [1, {mtu}]")
        base = 0 if pkt.direction == Direction.OUT else mtu
        vec[base + size - 1] += 1
    return vec


def fit_bounds(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return matrix.min(axis=0), matrix.max(axis=0)


def apply_bounds(matrix: np.ndarray, bounds: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Min-max scale to [0, 1], clipping out-of-range evaluation values.

    Constant training features (min == max) map to 0.
    """
    lo, hi = bounds
    span = hi - lo
    span = np.where(span == 0.0, 1.0, span)
    scaled = (matrix - lo) / span
    np.clip(scaled, 0.0, 1.0, out=scaled)
    scaled[..., (hi - lo) == 0.0] = 0.0
    return scaled


@dataclass(frozen=True, eq=False)
class FeatureSpace:
    """Trained Gaussian clusters plus normalization bounds and index layout.

    Layout: for each domain in sorted order, its cluster features in index
    order; then outgoing size counts 1..mtu; then incoming size counts.
    """

    domains: tuple[str, ...]
    gaussians: dict[str, DomainGaussians]
    mtu: int
    bounds: tuple[np.ndarray, np.ndarray]

    @property
    def gaussian_dim(self) -> int:
        return sum(self.gaussians[d].k for d in self.domains)

    @property
    def dim(self) -> int:
        return self.gaussian_dim + 2 * self.mtu

    def raw_vector(self, sample: Sample) -> np.ndarray:
        parts = []
        pairs_by_domain: dict[str, list[tuple[int, int]]] = {}
        for pair in sample_burst_pairs(sample):
            pairs_by_domain.setdefault(pair.domain, []).append((pair.out_bytes, pair.in_bytes))
        for domain in self.domains:
            pairs = pairs_by_domain.get(domain)
            if pairs:
                parts.append(self.gaussians[domain].densities(np.asarray(pairs, dtype=np.float64)))
            else:
                parts.append(np.zeros(self.gaussians[domain].k))
        parts.append(size_count_features(sample, self.mtu))
        return np.concatenate(parts)

    def transform(self, samples: Sequence[Sample]) -> np.ndarray:
        raw = np.stack([self.raw_vector(s) for s in samples]) if samples else np.zeros((0, self.dim))
        return apply_bounds(raw, self.bounds)


def fit_feature_space(
    samples: Sequence[Sample],
    k_grid: Sequence[int] = DEFAULT_K_GRID,
    variance_floor: float = VARIANCE_FLOOR,
    seed: int = 0,
    mtu: int = DEFAULT_MTU,
    k_by_domain: Mapping[str, int] | None = None,
) -> FeatureSpace:
    gaussians = fit_domain_gaussians(
        collect_pairs_by_domain(samples), k_grid, variance_floor, seed, k_by_domain
    )
    domains = tuple(sorted(gaussians))
    space = FeatureSpace(domains, gaussians, mtu, (np.zeros(0), np.zeros(0)))
    raw = np.stack([space.raw_vector(s) for s in samples])
    return FeatureSpace(domains, gaussians, mtu, fit_bounds(raw))


def bog_features(sample: Sample, space: FeatureSpace) -> np.ndarray:
    """Normalized Gaussian-cluster + size-count feature vector for one sample."""
    return apply_bounds(space.raw_vector(sample), space.bounds)


@dataclass(frozen=True)
class PanConfig:
    """Rounding constants for the coarse burst-feature baseline."""

    mtu: int = DEFAULT_MTU
    byte_round: int = 600
    byte_bucket_cap: int = 100
    pkt_count_cap: int = 50
    volume_round: int = 10000


def round_to(value: int, step: int) -> int:
    return int(value / step + 0.5) * step


def pan_features(sample: Sample, cfg: PanConfig = PanConfig()) -> np.ndarray:
    """Size counts plus per-direction burst histograms with rounded aggregates.

    Burst byte totals are rounded to ``byte_round`` and histogrammed per
    direction; burst packet counts are histogrammed exactly; total volume is
    appended as a single value rounded to ``volume_round``.
    """
    counts = size_count_features(sample, cfg.mtu)
    byte_hist = np.zeros(2 * (cfg.byte_bucket_cap + 1))
    pkt_hist = np.zeros(2 * (cfg.pkt_count_cap + 1))
    for flow in sample.flows:
        for direction, total, npkts in direction_runs(flow):
            side = 0 if direction == Direction.OUT else 1
            bucket = min(round_to(total, cfg.byte_round) // cfg.byte_round, cfg.byte_bucket_cap)
            byte_hist[side * (cfg.byte_bucket_cap + 1) + bucket] += 1
            pkt_hist[side * (cfg.pkt_count_cap + 1) + min(npkts, cfg.pkt_count_cap)] += 1
    volume = np.array([float(round_to(sample.total_bytes(), cfg.volume_round))])
    return np.concatenate([counts, byte_hist, pkt_hist, volume])


def feature_space_to_record(space: FeatureSpace) -> dict:
    return {
        "version": FEATURE_SPACE_VERSION,
        "mtu": space.mtu,
        "domains": [
            {
                "domain": d,
                "means": space.gaussians[d].means.tolist(),
                "variances": space.gaussians[d].variances.tolist(),
                "inertia": space.gaussians[d].inertia,
            }
            for d in space.domains
        ],
        "bounds_min": space.bounds[0].tolist(),
        "bounds_max": space.bounds[1].tolist(),
    }


def feature_space_from_record(rec: Mapping) -> FeatureSpace:
    if rec.get("version") != FEATURE_SPACE_VERSION:
        raise DataError(
            f"feature space version mismatch: file has {rec.get('version')!r}, "
            f"reader supports {FEATURE_SPACE_VERSION}"
        )
    gaussians = {
        d["domain"]: DomainGaussians(
            d["domain"],
            np.asarray(d["means"], dtype=np.float64),
            np.asarray(d["variances"], dtype=np.float64),
            float(d["inertia"]),
        )
        for d in rec["domains"]
    }
    return FeatureSpace(
        tuple(sorted(gaussians)),
        gaussians,
        int(rec["mtu"]),
        (np.asarray(rec["bounds_min"], dtype=np.float64), np.asarray(rec["bounds_max"], dtype=np.float64)),
    )


def feature_space_fingerprint(space: FeatureSpace) -> str:
    import hashlib

    blob = json.dumps(feature_space_to_record(space), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
