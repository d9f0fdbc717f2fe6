"""Traffic transforms and overhead accounting.

Four defenses over the trace model, all pure per-sample functions given a
plan: linear padding (sizes up to multiples of 128), exponential padding
(sizes up to powers of two), random fragmentation (each packet below the MTU
splits at a seeded uniform point), and burst padding (per-direction burst
byte totals padded up to thresholds trained so that the byte inflation on
the defense-training traffic stays below a cost ceiling). Padded sizes cap
at the MTU; burst-level shortfalls that inflating the burst's last packet
cannot cover are realized as appended MTU-sized filler packets.
"""

from __future__ import annotations

import hashlib
import random
from bisect import bisect_left
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .errors import ConfigError, DataError
from .trace import DEFAULT_MTU, Direction, Sample
from .features import direction_runs

DEFENSE_KINDS = ("none", "linear", "exponential", "fragmentation", "burst")


@dataclass(frozen=True)
class DefensePlan:
    kind: str
    mtu: int = DEFAULT_MTU
    seed: int = 0
    burst_cost_threshold: float | None = None
    burst_thresholds: dict[int, tuple[int, ...]] | None = None  # direction -> sorted
    fragment_passes: int = 1

    def __post_init__(self) -> None:
        if self.kind not in DEFENSE_KINDS:
            raise ConfigError(f"unknown defense kind {self.kind!r}")
        if self.kind == "burst":
            if self.burst_cost_threshold is None or self.burst_cost_threshold <= 1.0:
                raise ConfigError("burst defense needs cost threshold > 1")
        if self.burst_thresholds:
            for direction, ts in self.burst_thresholds.items():
                if list(ts) != sorted(ts):
                    raise ConfigError(f"thresholds for direction {direction} not sorted")


def parse_defense_spec(spec: str) -> DefensePlan:
    """Parse the CLI defense string: none | linear | exp | frag:<seed> | burst:<cost>."""
    spec = spec.strip()
    if spec == "none":
        return DefensePlan("none")
    if spec == "linear":
        return DefensePlan("linear")
    if spec == "exp":
        return DefensePlan("exponential")
    if spec.startswith("frag:"):
        try:
            return DefensePlan("fragmentation", seed=int(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise ConfigError(f"bad fragmentation seed in {spec!r}") from exc
    if spec.startswith("burst:"):
        try:
            return DefensePlan("burst", burst_cost_threshold=float(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise ConfigError(f"bad burst threshold in {spec!r}") from exc
    raise ConfigError(f"unknown defense spec {spec!r}")


def _rebuild(sample: Sample, flow_packets: list[list[tuple[int, int]]]) -> Sample:
    return Sample.build(
        sample.label,
        sample.session_id,
        sample.position,
        [(f.remote_domain, pkts) for f, pkts in zip(sample.flows, flow_packets)],
        flow_ids=[f.flow_id for f in sample.flows],
    )


def _map_sizes(sample: Sample, fn) -> Sample:
    return _rebuild(
        sample,
        [[(int(p.direction), fn(p.payload_size)) for p in f.packets] for f in sample.flows],
    )


def pad_linear(sample: Sample, mtu: int = DEFAULT_MTU) -> Sample:
    """Pad each payload up to the next multiple of 128, capped at the MTU."""
    return _map_sizes(sample, lambda s: min(-(-s // 128) * 128, mtu))


def pad_exponential(sample: Sample, mtu: int = DEFAULT_MTU) -> Sample:
    """Pad each payload up to the next power of two, capped at the MTU."""
    return _map_sizes(sample, lambda s: min(1 << (s - 1).bit_length(), mtu))


def _sample_rng(seed: int, sample: Sample) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{sample.session_id}:{sample.position}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def fragment(sample: Sample, seed: int, mtu: int = DEFAULT_MTU, passes: int = 1) -> Sample:
    """Split every packet with 2 <= size < MTU at a seeded uniform point.

    One pass splits each eligible packet into exactly two in-order parts;
    additional passes re-split the results. Byte totals are preserved
    exactly. The split points derive from (seed, sample identity), so a
    fixed seed reproduces the same output regardless of processing order.
    """
    rng = _sample_rng(seed, sample)
    flow_packets = []
    for flow in sample.flows:
        pkts = [(int(p.direction), p.payload_size) for p in flow.packets]
        for _ in range(passes):
            split = []
            for d, s in pkts:
                if 2 <= s < mtu:
                    cut = rng.randint(1, s - 1)
                    split.append((d, cut))
                    split.append((d, s - cut))
                else:
                    split.append((d, s))
            pkts = split
        flow_packets.append(pkts)
    return _rebuild(sample, flow_packets)


def burst_thresholds(bursts: Sequence[int], cost_threshold: float) -> list[int]:
    """Greedy bucket split of the sorted burst multiset.

    Walking the bursts in ascending order, a burst joins the current bucket
    unless padding the extended bucket to its maximum would inflate its byte
    total by at least ``cost_threshold``; then the bucket's maximum is
    emitted as a threshold and a new bucket starts. Duplicate burst lengths
    are kept (multiset semantics), since dropping them would misstate the
    inflation ratio.
    """
    if not bursts:
        raise DataError("empty burst multiset")
    if cost_threshold <= 1.0:
        raise ConfigError(f"cost threshold must exceed 1, got {cost_threshold}")
    thresholds: list[int] = []
    bucket: list[int] = []
    for b in sorted(bursts):
        extended = bucket + [b]
        inflation = len(extended) * max(extended) / sum(extended)
        if inflation >= cost_threshold:
            thresholds.append(max(bucket))
            bucket = [b]
        else:
            bucket = extended
    thresholds.append(max(bucket))
    return thresholds


def burst_pad(burst_len: int, thresholds: Sequence[int]) -> int:
    """Smallest threshold >= the burst length; the burst itself if none."""
    i = bisect_left(thresholds, burst_len)
    if i < len(thresholds):
        return thresholds[i]
    return burst_len


def collect_direction_bursts(samples: Iterable[Sample]) -> dict[int, list[int]]:
    """Byte totals of contiguous same-direction runs, keyed by direction."""
    bursts: dict[int, list[int]] = {int(Direction.OUT): [], int(Direction.IN): []}
    for sample in samples:
        for flow in sample.flows:
            for direction, total, _ in direction_runs(flow):
                bursts[direction].append(total)
    return bursts


def train_burst_plan(
    samples: Sequence[Sample], cost_threshold: float, mtu: int = DEFAULT_MTU
) -> DefensePlan:
    """Compute per-direction thresholds from defense-training traffic."""
    bursts = collect_direction_bursts(samples)
    thresholds = {}
    for direction, values in bursts.items():
        if values:
            thresholds[direction] = tuple(burst_thresholds(values, cost_threshold))
    return DefensePlan(
        "burst",
        mtu=mtu,
        burst_cost_threshold=cost_threshold,
        burst_thresholds=thresholds,
    )


def apply_burst_defense(sample: Sample, plan: DefensePlan) -> Sample:
    """Pad every directional burst's byte total up to its threshold target.

    The deficit goes into the burst's last packet up to the MTU; anything
    left is appended as MTU-sized filler packets (final filler holds the
    remainder). Packet order is preserved.
    """
    if not plan.burst_thresholds:
        raise ConfigError("burst plan has no trained thresholds")
    flow_packets = []
    for flow in sample.flows:
        pkts: list[tuple[int, int]] = []
        run: list[int] = []
        run_dir = 0

        def flush() -> None:
            nonlocal run
            if not run:
                return
            total = sum(run)
            target = burst_pad(total, plan.burst_thresholds.get(run_dir, ()))
            deficit = target - total
            grow = min(plan.mtu - run[-1], deficit)
            run[-1] += grow
            deficit -= grow
            while deficit > 0:
                fill = min(plan.mtu, deficit)
                run.append(fill)
                deficit -= fill
            pkts.extend((run_dir, s) for s in run)
            run = []

        for p in flow.packets:
            d = int(p.direction)
            if d != run_dir:
                flush()
                run_dir = d
            run.append(p.payload_size)
        flush()
        flow_packets.append(pkts)
    return _rebuild(sample, flow_packets)


def apply_defense(sample: Sample, plan: DefensePlan) -> Sample:
    if plan.kind == "none":
        return sample
    if plan.kind == "linear":
        return pad_linear(sample, plan.mtu)
    if plan.kind == "exponential":
        return pad_exponential(sample, plan.mtu)
    if plan.kind == "fragmentation":
        return fragment(sample, plan.seed, plan.mtu, plan.fragment_passes)
    if plan.kind == "burst":
        return apply_burst_defense(sample, plan)
    raise ConfigError(f"unknown defense kind {plan.kind!r}")


def prepare_plan(plan: DefensePlan, training: Sequence[Sample]) -> DefensePlan:
    """Fill in any trained state the plan needs (burst thresholds)."""
    if plan.kind == "burst" and not plan.burst_thresholds:
        trained = train_burst_plan(training, plan.burst_cost_threshold, plan.mtu)
        return replace(plan, burst_thresholds=trained.burst_thresholds)
    return plan


@dataclass(frozen=True)
class OverheadReport:
    byte_overhead: float
    packet_overhead: float


def measure_overhead(original: Sequence[Sample], defended: Sequence[Sample]) -> OverheadReport:
    """Defended-to-original ratios of total bytes and total packet count."""
    if len(original) != len(defended):
        raise DataError(f"sample count mismatch: {len(original)} vs {len(defended)}")
    for o, d in zip(original, defended):
        if (o.session_id, o.position, o.label) != (d.session_id, d.position, d.label):
            raise DataError(
                f"sample id mismatch: {o.session_id}/{o.position} vs {d.session_id}/{d.position}"
            )
    orig_bytes = sum(s.total_bytes() for s in original)
    def_bytes = sum(s.total_bytes() for s in defended)
    orig_pkts = sum(s.packet_count() for s in original)
    def_pkts = sum(s.packet_count() for s in defended)
    if orig_bytes == 0 or orig_pkts == 0:
        raise DataError("original traffic is empty")
    return OverheadReport(def_bytes / orig_bytes, def_pkts / orig_pkts)
