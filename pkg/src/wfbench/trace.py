"""In-memory traffic model and the native line-delimited trace format.

A Sample is one labeled page load: an ordered set of TCP flows, each flow an
ordered list of directed data packets (payload bytes only, no ACKs). Equality
is structural: label, session placement, and per-flow (domain, direction,
size) sequences. Flow ids and the global packet ordinals are bookkeeping
derived at construction time and excluded from comparisons, so serialization
round-trips are exact identities.

Native trace format (one sample per line, UTF-8 JSON):

    {"version": 1, "label": ..., "session_id": ..., "position": ...,
     "flows": [{"domain": ..., "packets": [{"dir": 1, "size": 1420}, ...]}]}

``dir`` is +1 for client-to-server (outgoing) and -1 for server-to-client.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

from .errors import DataError

TRACE_FORMAT_VERSION = 1
DEFAULT_MTU = 1500


class Direction(enum.IntEnum):
    """Packet direction; sign matches the +out/-in convention used in traces."""

    OUT = 1
    IN = -1


@dataclass(frozen=True, slots=True)
class Packet:
    """One TCP data segment: direction and payload size.

    flow_id and seq_index locate the packet within its sample; both are
    derived bookkeeping and do not participate in equality.
    """

    direction: Direction
    payload_size: int
    flow_id: str = field(default="", compare=False)
    seq_index: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.payload_size < 0:
            raise DataError(f"negative payload size: {self.payload_size}")
        if self.direction not in (Direction.OUT, Direction.IN):
            raise DataError(f"invalid direction: {self.direction!r}")


@dataclass(frozen=True, slots=True)
class Flow:
    """All data packets of one TCP connection, in stream order."""

    flow_id: str = field(compare=False)
    remote_domain: str
    packets: tuple[Packet, ...]

    def __post_init__(self) -> None:
        if not self.remote_domain or self.remote_domain != self.remote_domain.lower():
            raise DataError(f"flow domain must be lowercase and nonempty: {self.remote_domain!r}")

    def total_bytes(self) -> int:
        return sum(p.payload_size for p in self.packets)


@dataclass(frozen=True, slots=True)
class Sample:
    """One page-load trace: ordered flows plus label/session bookkeeping."""

    label: str | None
    session_id: str
    position: int
    flows: tuple[Flow, ...]

    def __post_init__(self) -> None:
        if self.position < 0:
            raise DataError(f"negative session position: {self.position}")
        last = -1
        for flow in self.flows:
            for pkt in flow.packets:
                if pkt.seq_index <= last:
                    raise DataError(
                        f"non-monotone seq_index {pkt.seq_index} after {last} "
                        f"in sample {self.session_id}/{self.position}"
                    )
                last = pkt.seq_index

    @staticmethod
    def build(
        label: str | None,
        session_id: str,
        position: int,
        flows: Iterable[tuple[str, Iterable[tuple[int, int]]]],
        flow_ids: Sequence[str] | None = None,
    ) -> "Sample":
        """Construct a sample from (domain, [(dir, size), ...]) flow specs.

        Packets are numbered flow-major; flow ids default to ordinals.
        """
        built = []
        seq = 0
        for i, (domain, dirsizes) in enumerate(flows):
            fid = flow_ids[i] if flow_ids is not None else f"f{i}"
            packets = []
            for d, size in dirsizes:
                packets.append(Packet(Direction(d), size, flow_id=fid, seq_index=seq))
                seq += 1
            built.append(Flow(fid, domain, tuple(packets)))
        return Sample(label, session_id, position, tuple(built))

    def total_bytes(self) -> int:
        return sum(f.total_bytes() for f in self.flows)

    def packet_count(self) -> int:
        return sum(len(f.packets) for f in self.flows)

    def iter_packets(self) -> Iterator[Packet]:
        for flow in self.flows:
            yield from flow.packets

    def sample_id(self) -> str:
        return f"{self.session_id}/{self.position}"


@dataclass(frozen=True)
class DomainMap:
    """Total mapping from remote address to second-level domain.

    Addresses absent from the mapping resolve to the sentinel domain so that
    every flow always gets a domain.
    """

    mapping: Mapping[str, str]
    default: str = "unknown"

    def __post_init__(self) -> None:
        for addr, dom in self.mapping.items():
            if not dom or dom != dom.lower():
                raise DataError(f"domain for {addr} must be lowercase and nonempty: {dom!r}")

    def resolve(self, address: str) -> str:
        return self.mapping.get(address, self.default)


def validate_sample(sample: Sample, mtu: int = DEFAULT_MTU) -> None:
    """Check the MTU bound, which depends on configuration rather than the model."""
    for pkt in sample.iter_packets():
        if pkt.payload_size > mtu:
            raise DataError(f"payload {pkt.payload_size} exceeds MTU {mtu}")


def _sample_to_record(sample: Sample) -> dict:
    return {
        "version": TRACE_FORMAT_VERSION,
        "label": sample.label,
        "session_id": sample.session_id,
        "position": sample.position,
        "flows": [
            {
                "domain": flow.remote_domain,
                "packets": [{"dir": int(p.direction), "size": p.payload_size} for p in flow.packets],
            }
            for flow in sample.flows
        ],
    }


def _sample_from_record(rec: dict, lineno: int) -> Sample:
    version = rec.get("version")
    if version != TRACE_FORMAT_VERSION:
        raise DataError(
            f"trace format version mismatch on line {lineno}: "
            f"file has {version!r}, reader supports {TRACE_FORMAT_VERSION}"
        )
    try:
        flows = [
            (f["domain"], [(p["dir"], p["size"]) for p in f["packets"]])
            for f in rec["flows"]
        ]
        return Sample.build(rec["label"], str(rec["session_id"]), int(rec["position"]), flows)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed trace record on line {lineno}: {exc}") from exc


def write_traces(samples: Iterable[Sample], fp: TextIO) -> None:
    """Write samples in the native format, one JSON record per line."""
    for sample in samples:
        fp.write(json.dumps(_sample_to_record(sample), separators=(",", ":")))
        fp.write("\n")


def read_traces(fp: TextIO) -> list[Sample]:
    """Read samples from the native format; empty input yields an empty list."""
    samples = []
    for lineno, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON on line {lineno}: {exc}") from exc
        samples.append(_sample_from_record(rec, lineno))
    return samples


def save_traces(samples: Iterable[Sample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        write_traces(samples, fp)


def load_traces(path: str) -> list[Sample]:
    with open(path, "r", encoding="utf-8") as fp:
        return read_traces(fp)
