import io

import pytest

from wfbench.errors import DataError
from wfbench.trace import (
    Direction,
    DomainMap,
    Packet,
    Sample,
    read_traces,
    write_traces,
    validate_sample,
)


def two_flow_sample():
    return Sample.build(
        "a.com/home",
        "s1",
        0,
        [("a.com", [(1, 1420), (-1, 900)]), ("b.com", [(1, 310)])],
    )


def test_build_assigns_flow_major_seq_indices():
    s = two_flow_sample()
    assert [p.seq_index for p in s.iter_packets()] == [0, 1, 2]
    assert [p.flow_id for p in s.iter_packets()] == ["f0", "f0", "f1"]


def test_packet_rejects_negative_size():
    with pytest.raises(DataError):
        Packet(Direction.OUT, -1)


def test_sample_rejects_non_monotone_seq_index():
    pkts = (
        Packet(Direction.OUT, 100, "f0", 1),
        Packet(Direction.IN, 100, "f0", 1),
    )
    from wfbench.trace import Flow

    with pytest.raises(DataError, match="non-monotone"):
        Sample("l", "s", 0, (Flow("f0", "a.com", pkts),))


def test_flow_domain_must_be_lowercase():
    with pytest.raises(DataError):
        Sample.build(None, "s", 0, [("A.com", [(1, 10)])])


def test_domain_map_total_with_default():
    dm = DomainMap({"1.2.3.4": "a.com"})
    assert dm.resolve("1.2.3.4") == "a.com"
    assert dm.resolve("9.9.9.9") == "unknown"


def test_validate_sample_mtu():
    s = Sample.build(None, "s", 0, [("a.com", [(1, 1501)])])
    with pytest.raises(DataError, match="MTU"):
        validate_sample(s, mtu=1500)
    validate_sample(s, mtu=9000)


def test_round_trip_identity():
    samples = [two_flow_sample(), Sample.build(None, "s2", 1, [])]
    buf = io.StringIO()
    write_traces(samples, buf)
    buf.seek(0)
    restored = read_traces(buf)
    assert restored == samples

    # and write(read(x)) reproduces the file bytes exactly
    buf2 = io.StringIO()
    write_traces(restored, buf2)
    assert buf2.getvalue() == buf.getvalue()


def test_read_empty_file():
    assert read_traces(io.StringIO("")) == []


def test_version_mismatch_names_both_versions():
    line = '{"version":99,"label":null,"session_id":"s","position":0,"flows":[]}\n'
    with pytest.raises(DataError) as exc:
        read_traces(io.StringIO(line))
    assert "99" in str(exc.value) and "1" in str(exc.value)


def test_read_rejects_bad_json():
    with pytest.raises(DataError, match="invalid JSON"):
        read_traces(io.StringIO("{nope\n"))


def test_write_is_deterministic():
    s = two_flow_sample()
    a, b = io.StringIO(), io.StringIO()
    write_traces([s], a)
    write_traces([s], b)
    assert a.getvalue() == b.getvalue()
