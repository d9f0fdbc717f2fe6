"""Packet-capture ingestion: classic pcap -> Samples.

Reads classic pcap files (magic 0xa1b2c3d4 either byte order, Ethernet link
type) and groups TCP data segments into flows. Sample boundaries come from a
sidecar index file with one line per sample:

    file,start_pkt,end_pkt,label,session_id,position

``file`` matches the capture's basename, ``start_pkt``/``end_pkt`` are
0-based frame ordinals over the whole capture (start inclusive, end
exclusive), and an empty ``label`` yields an unlabeled sample.

Only TCP segments with payload bytes are kept: pure ACKs and handshake
segments are dropped. Direction is decided by comparing the source IPv4
address against the client address. Flows are keyed by the TCP 4-tuple plus
a connection epoch counter so that back-to-back connections reusing a
4-tuple stay distinct. Within each flow direction, segments are re-ordered
by TCP sequence number and retransmitted byte ranges are counted once.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass

from .errors import DataError
from .trace import DEFAULT_MTU, DomainMap, Sample

log = logging.getLogger(__name__)

_ETHERTYPE_IPV4 = 0x0800
_TCP_PROTO = 6
_FIN = 0x01
_SYN = 0x02
_RST = 0x04
_ACK = 0x10


@dataclass(frozen=True)
class IndexEntry:
    file: str
    start_pkt: int
    end_pkt: int
    label: str | None
    session_id: str
    position: int


def read_index(path: str) -> list[IndexEntry]:
    """Parse the sidecar index; raises DataError on malformed lines."""
    entries = []
    with open(path, "r", encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise DataError(f"index line {lineno}: expected 6 fields, got {len(parts)}")
            fname, start, end, label, session_id, position = (p.strip() for p in parts)
            try:
                entries.append(
                    IndexEntry(fname, int(start), int(end), label or None, session_id, int(position))
                )
            except ValueError as exc:
                raise DataError(f"index line {lineno}: {exc}") from exc
    return entries


def read_capture_frames(path: str) -> list[bytes]:
    """Return the raw link-layer frames of a classic pcap file."""
    with open(path, "rb") as fp:
        header = fp.read(24)
        if len(header) < 24:
            raise DataError(f"{path}: truncated pcap global header")
        magic = header[:4]
        if magic == b"\xd4\xc3\xb2\xa1":
            endian = "<"
        elif magic == b"\xa1\xb2\xc3\xd4":
            endian = ">"
        else:
            raise DataError(f"{path}: unrecognized capture magic {magic.hex()}")
        linktype = struct.unpack(endian + "I", header[20:24])[0]
        if linktype != 1:
            raise DataError(f"{path}: unknown link layer {linktype} (only Ethernet supported)")
        frames = []
        while True:
            rec = fp.read(16)
            if not rec:
                break
            if len(rec) < 16:
                raise DataError(f"{path}: truncated pcap record header")
            _, _, incl_len, _ = struct.unpack(endian + "IIII", rec)
            data = fp.read(incl_len)
            if len(data) < incl_len:
                raise DataError(f"{path}: truncated frame body")
            frames.append(data)
    return frames


@dataclass
class _Segment:
    arrival: int
    direction: int  # +1 out, -1 in
    seq: int
    size: int


@dataclass
class _FlowState:
    key: tuple  # (remote_ip, remote_port, client_port, epoch)
    first_arrival: int
    segments: list  # list[_Segment]
    has_traffic: bool = False
    closed: bool = False


def _parse_frame(frame: bytes, client_address: str):
    """Decode Ethernet/IPv4/TCP; returns a parse dict or a skip reason string."""
    if len(frame) < 14:
        return "malformed"
    ethertype = struct.unpack("!H", frame[12:14])[0]
    if ethertype != _ETHERTYPE_IPV4:
        return "non_ipv4"
    ip = frame[14:]
    if len(ip) < 20:
        return "malformed"
    ihl = (ip[0] & 0x0F) * 4
    if (ip[0] >> 4) != 4 or ihl < 20 or len(ip) < ihl:
        return "malformed"
    total_len = struct.unpack("!H", ip[2:4])[0]
    frag = struct.unpack("!H", ip[6:8])[0]
    if frag & 0x1FFF:
        return "ip_fragment"
    if ip[9] != _TCP_PROTO:
        return "non_tcp"
    src = ".".join(str(b) for b in ip[12:16])
    dst = ".".join(str(b) for b in ip[16:20])
    tcp = ip[ihl:]
    if len(tcp) < 20:
        return "malformed"
    sport, dport = struct.unpack("!HH", tcp[0:4])
    seq = struct.unpack("!I", tcp[4:8])[0]
    doff = (tcp[12] >> 4) * 4
    if doff < 20:
        return "malformed"
    flags = tcp[13]
    payload_len = total_len - ihl - doff
    if payload_len < 0:
        return "malformed"
    if src == client_address:
        direction, remote, rport, cport = 1, dst, dport, sport
    elif dst == client_address:
        direction, remote, rport, cport = -1, src, sport, dport
    else:
        return "foreign"
    return {
        "direction": direction,
        "remote": remote,
        "rport": rport,
        "cport": cport,
        "seq": seq,
        "flags": flags,
        "payload_len": payload_len,
    }


def _dedup_and_reorder(segments: list) -> dict:
    """Per direction: drop retransmitted bytes, re-order sizes by sequence number.

    Returns arrival ordinal -> (direction, size). Each direction's surviving
    segment sizes are sorted by TCP sequence and placed back into that
    direction's original arrival slots, preserving the cross-direction
    interleaving pattern while fixing per-direction order.
    """
    out: dict[int, tuple[int, int]] = {}
    for direction in (1, -1):
        segs = [s for s in segments if s.direction == direction]
        if not segs:
            continue
        # Interval union over (seq, seq+size); fully covered segments drop,
        # partial overlaps contribute only their new bytes.
        kept = []
        covered: list[list[int]] = []  # disjoint sorted [start, end) intervals
        for s in sorted(segs, key=lambda s: (s.seq, s.arrival)):
            start, end = s.seq, s.seq + s.size
            new_bytes = end - start
            for lo, hi in covered:
                overlap = min(end, hi) - max(start, lo)
                if overlap > 0:
                    new_bytes -= overlap
            if new_bytes <= 0:
                continue
            merged = [start, end]
            keepers = []
            for iv in covered:
                if iv[1] < merged[0] or iv[0] > merged[1]:
                    keepers.append(iv)
                else:
                    merged[0] = min(merged[0], iv[0])
                    merged[1] = max(merged[1], iv[1])
            keepers.append(merged)
            covered = sorted(keepers)
            kept.append((s.seq, s.arrival, new_bytes))
        slots = sorted(s[1] for s in kept)
        for slot, (_, _, size) in zip(slots, sorted(kept)):
            out[slot] = (direction, size)
    return out


def ingest_capture(
    capture_path: str,
    index_path: str,
    client_address: str,
    domain_map: DomainMap,
    mtu: int = DEFAULT_MTU,
) -> list[Sample]:
    """Ingest one capture file using its sidecar index.

    Deterministic: the same capture and domain map always produce identical
    samples. Malformed frames are skipped with a counted warning.
    """
    if not os.path.exists(index_path):
        raise DataError(f"missing capture index: {index_path}")
    entries = [
        e
        for e in read_index(index_path)
        if e.file in (os.path.basename(capture_path), capture_path)
    ]
    if not entries:
        raise DataError(f"index {index_path} has no entries for {capture_path}")
    frames = read_capture_frames(capture_path)

    samples = []
    skip_counts: dict[str, int] = {}
    for entry in entries:
        if entry.start_pkt < 0 or entry.end_pkt > len(frames) or entry.start_pkt > entry.end_pkt:
            raise DataError(
                f"index range [{entry.start_pkt}, {entry.end_pkt}) outside capture "
                f"of {len(frames)} frames"
            )
        flows: dict[tuple, _FlowState] = {}
        epochs: dict[tuple, int] = {}
        for arrival, frame in enumerate(frames[entry.start_pkt : entry.end_pkt]):
            parsed = _parse_frame(frame, client_address)
            if isinstance(parsed, str):
                skip_counts[parsed] = skip_counts.get(parsed, 0) + 1
                continue
            tuple4 = (parsed["remote"], parsed["rport"], parsed["cport"])
            epoch = epochs.setdefault(tuple4, 0)
            state = flows.get(tuple4 + (epoch,))
            flags = parsed["flags"]
            if (flags & _SYN) and not (flags & _ACK):
                # A fresh client SYN after traffic or close starts a new connection
                # on the same 4-tuple; a retransmitted opening SYN does not.
                if state is not None and (state.has_traffic or state.closed):
                    epoch += 1
                    epochs[tuple4] = epoch
                    state = None
            key = tuple4 + (epoch,)
            if state is None:
                state = flows.get(key)
            if state is None:
                state = _FlowState(key=key, first_arrival=arrival, segments=[])
                flows[key] = state
            if flags & (_FIN | _RST):
                state.closed = True
            size = parsed["payload_len"]
            if size == 0:
                continue
            if size > mtu:
                skip_counts["oversize"] = skip_counts.get("oversize", 0) + 1
                continue
            state.has_traffic = True
            state.segments.append(_Segment(arrival, parsed["direction"], parsed["seq"], size))

        flow_specs = []
        flow_ids = []
        for state in sorted(flows.values(), key=lambda s: s.first_arrival):
            ordered = _dedup_and_reorder(state.segments)
            if not ordered:
                continue
            remote_ip, rport, cport, epoch = state.key
            domain = domain_map.resolve(remote_ip)
            dirsizes = [ordered[slot] for slot in sorted(ordered)]
            flow_specs.append((domain, dirsizes))
            flow_ids.append(f"{remote_ip}:{rport}|{cport}#e{epoch}")
        samples.append(
            Sample.build(entry.label, entry.session_id, entry.position, flow_specs, flow_ids=flow_ids)
        )

    if skip_counts:
        detail = ", ".join(f"{k}={v}" for k, v in sorted(skip_counts.items()))
        log.warning("%s: skipped frames (%s)", capture_path, detail)
    return samples
