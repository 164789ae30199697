import json
import struct
import warnings
import zlib

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from spikefabric.engine import NodeConfig, SimConfig, run
from spikefabric.chip import SourceSpec
from spikefabric.fileio import (
    ChecksumError,
    ConnectivityError,
    DuplicateConnectionWarning,
    FileFormatError,
    SchemaError,
    TruncatedError,
    VersionError,
    apply_override,
    dump_config,
    dump_program,
    dump_report,
    format_connectivity,
    load_config,
    load_program,
    load_report,
    pack_inbound,
    parse_connectivity,
    read_report,
    unpack_inbound,
    write_report,
)
from spikefabric.harness import SweepSpec, fan_in_config
from spikefabric.netcompiler import FabricProgram, LogicalConnection as L, compile_program

# -- connectivity ------------------------------------------------------------


def test_parse_one_edge():
    assert parse_connectivity("0 5 -> 1 300") == [L(0, 5, 1, 300)]


def test_label_range_error_names_the_line():
    with pytest.raises(ConnectivityError) as info:
        parse_connectivity("0 70000 -> 1 3")
    assert info.value.line == 1
    assert "70000" in info.value.reason


def test_comments_whitespace_and_hex():
    text = "# header\n\n  0\t5->1   300  # trailing\n2 0x10 -> 3 0xFFFF\n"
    assert parse_connectivity(text) == [L(0, 5, 1, 300), L(2, 16, 3, 0xFFFF)]


@pytest.mark.parametrize("text,line", [
    ("0 5 -> 1", 1),
    ("0 5 1 300", 1),
    ("0 5 -> 1 300\n0 x -> 1 2", 2),
    ("\n\n0 5 -> 16 1", 3),
    ("0 -1 -> 1 1", 1),
])
def test_malformed_lines(text, line):
    with pytest.raises(ConnectivityError) as info:
        parse_connectivity(text)
    assert info.value.line == line


def test_node_count_limits_nodes():
    with pytest.raises(ConnectivityError):
        parse_connectivity("0 1 -> 2 1", node_count=2)


def test_duplicates_are_dropped_with_warning():
    with pytest.warns(DuplicateConnectionWarning, match="line 3"):
        conns = parse_connectivity("0 1 -> 1 1\n0 2 -> 1 2\n0 1 -> 1 1\n")
    assert conns == [L(0, 1, 1, 1), L(0, 2, 1, 2)]


edges = st.lists(st.builds(L, st.integers(0, 15), st.integers(0, 0xFFFF), st.integers(0, 15),
                           st.integers(0, 0xFFFF)), max_size=30)


@given(edges)
def test_canonical_form_is_stable(conns):
    text = format_connectivity(conns)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = format_connectivity(parse_connectivity(text))
    assert again == text
    assert sorted(parse_connectivity(text)) == sorted(set(conns))


# -- fabric program ------------------------------------------------------------


def test_inbound_packing_layout():
    t = np.zeros(1 << 15, dtype=np.uint32)
    t[0] = 1
    t[1] = (1 << 17) - 1
    b = pack_inbound(t)
    assert len(b) == (1 << 15) * 17 // 8
    assert b[0] == 0b1 and b[2] == 0b11111110 and b[3] == 0xFF and b[4] == 0b11
    assert np.array_equal(unpack_inbound(b), t)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_inbound_packing_roundtrip(seed):
    t = np.random.default_rng(seed).integers(0, 1 << 17, 1 << 15).astype(np.uint32)
    assert np.array_equal(unpack_inbound(pack_inbound(t)), t)


def test_program_header_and_sizes():
    data = dump_program(FabricProgram.empty(2))
    magic, version, n, length, crc = struct.unpack_from("<4sHHII", data)
    assert (magic, version, n) == (b"SFPG", 1, 2)
    assert length == len(data) - 16 == 2 * (131072 + 69632) + 1 + 4
    assert crc == zlib.crc32(data[16:])


def test_empty_program_roundtrip():
    data = dump_program(FabricProgram.empty(1))
    assert load_program(data) == FabricProgram.empty(1)
    assert dump_program(load_program(data)) == data


def compiled():
    return compile_program([L(0, 5, 1, 300), L(1, 7, 0, 9), L(2, 1, 1, 4), L(2, 1, 2, 5)], 3)


def test_compiled_program_roundtrip():
    p = compiled()
    data = dump_program(p)
    q = load_program(data)
    assert q == p
    assert dump_program(q) == data


def test_corrupted_byte_is_a_checksum_error():
    data = bytearray(dump_program(compiled()))
    data[1000] ^= 0x10
    with pytest.raises(ChecksumError):
        load_program(bytes(data))


def test_truncation_and_version_are_distinct():
    data = dump_program(compiled())
    with pytest.raises(TruncatedError):
        load_program(data[:-1])
    with pytest.raises(TruncatedError):
        load_program(data[:10])
    bumped = data[:4] + struct.pack("<H", 2) + data[6:]
    with pytest.raises(VersionError):
        load_program(bumped)
    with pytest.raises(FileFormatError):
        load_program(b"XXXX" + data[4:])
    with pytest.raises(FileFormatError):
        load_program(data + b"\0")


def rehash(payload, n, version=1):
    return struct.pack("<4sHHII", b"SFPG", version, n, len(payload), zlib.crc32(payload)) + payload


def test_structurally_bad_payload_with_valid_checksum():
    with pytest.raises(FileFormatError):
        load_program(rehash(b"\0" * 100, 2))
    with pytest.raises(FileFormatError):
        load_program(rehash(b"", 0))
    good = dump_program(compiled())[16:]
    with pytest.raises(FileFormatError):
        load_program(rehash(good + b"\0" * 5, 3))  # count says 4 records, 5 present


@settings(max_examples=200, suppress_health_check=[HealthCheck.too_slow])
@given(st.binary(max_size=64))
def test_program_loader_is_total_on_junk(data):
    try:
        load_program(data)
    except FileFormatError:
        pass


PROGRAM_BYTES = dump_program(compile_program([L(0, 5, 1, 300), L(1, 2, 1, 3)], 2))


@settings(max_examples=60)
@given(st.integers(0, len(PROGRAM_BYTES) - 1), st.integers(1, 255), st.booleans())
def test_program_loader_is_total_on_mutations(pos, xor, fix_crc):
    data = bytearray(PROGRAM_BYTES)
    data[pos] ^= xor
    if fix_crc and pos >= 16:
        data[12:16] = struct.pack("<I", zlib.crc32(bytes(data[16:])))
    try:
        p = load_program(bytes(data))
    except FileFormatError:
        return
    assert dump_program(p) == bytes(data)


# -- SimConfig ---------------------------------------------------------------


def sample_config():
    return fan_in_config(SweepSpec(spikes_per_point=20), 50)


def test_config_roundtrip_is_byte_exact():
    text = dump_config(sample_config())
    cfg = load_config(text)
    assert cfg == sample_config()
    assert dump_config(cfg) == text


def test_config_checksum_and_version():
    text = dump_config(sample_config())
    doc = json.loads(text)
    doc["config"]["run_ticks"] += 1
    with pytest.raises(ChecksumError):
        load_config(json.dumps(doc))
    del doc["checksum"]
    assert load_config(json.dumps(doc)).run_ticks == sample_config().run_ticks + 1
    doc["version"] = 2
    with pytest.raises(VersionError):
        load_config(json.dumps(doc))
    with pytest.raises(TruncatedError):
        load_config(text[: len(text) // 2])


def test_hand_written_config_uses_defaults():
    text = json.dumps({"format": "spikefabric.simconfig", "version": 1, "config": {
        "node_count": 2, "run_ticks": 4000, "connections": ["0 5 -> 1 300"],
        "node_defaults": {"params": {"cdc_in_cycles": 6}},
        "nodes": [{"sources": [{"label": 5, "period_ticks": 10, "count": 3}]}, {}]}})
    cfg = load_config(text)
    assert cfg.nodes[0].sources == (SourceSpec(5, 10, 3),)
    assert cfg.nodes[1].params.cdc_in_cycles == 6
    assert run(cfg).counters["traced"] == 3


@pytest.mark.parametrize("patch,needle", [
    ({"run_ticks": "10"}, "run_ticks"),
    ({"nodes": [{}]}, "nodes"),
    ({"bogus": 1}, "bogus"),
    ({"connections": ["0 5 -> 9 1"]}, "connections[0]"),
    ({"aggregator": {"barrier": {"skew": [3]}}}, "barrier"),
    ({"run_ticks": 0}, "run_ticks"),
])
def test_config_schema_errors(patch, needle):
    body = {"node_count": 2, "run_ticks": 100}
    body.update(patch)
    text = json.dumps({"format": "spikefabric.simconfig", "version": 1, "config": body})
    with pytest.raises(SchemaError, match=needle.replace("[", r"\[").replace("]", r"\]")):
        load_config(text)


def test_overrides():
    text = dump_config(sample_config())
    cfg = load_config(text, ["nodes.*.params.cdc_in_cycles=7", "aggregator.queue_depth=4",
                             "nodes.3.chip.jitter_compensation=false"])
    assert {n.params.cdc_in_cycles for n in cfg.nodes} == {7}
    assert cfg.aggregator.queue_depth == 4
    assert not cfg.nodes[3].chip.jitter_compensation and cfg.nodes[0].chip.jitter_compensation
    with pytest.raises(SchemaError):
        load_config(text, ["nodes.9.params.cdc_in_cycles=1"])
    with pytest.raises(SchemaError):
        load_config(text, ["no_equals_sign"])
    assert apply_override({"node_count": 2}, "nodes.*.ready_at=5")["nodes"] == [{"ready_at": 5}] * 2


@settings(max_examples=200)
@given(st.one_of(st.text(max_size=80), st.binary(max_size=80)))
def test_config_loader_is_total(data):
    try:
        load_config(data)
    except FileFormatError:
        pass


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-3, 70000) | st.text(max_size=5),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.text(max_size=12), inner, max_size=3),
    max_leaves=10,
)
config_keys = st.sampled_from(["node_count", "run_ticks", "nodes", "aggregator", "connections",
                               "node_defaults", "seed", "step_every_tick"])


@settings(max_examples=300)
@given(st.dictionaries(config_keys, json_values, max_size=5))
def test_config_loader_is_total_on_structured_junk(body):
    text = json.dumps({"format": "spikefabric.simconfig", "version": 1, "config": body})
    try:
        load_config(text)
    except FileFormatError:
        pass


# -- RunReport ---------------------------------------------------------------


@pytest.fixture(scope="module")
def report():
    return run(sample_config())


def test_report_roundtrip(report, tmp_path):
    files = dump_report(report)
    assert set(files) == {"summary.json", "traces.csv", "fpga_latencies.csv", "histogram.csv"}
    back = load_report(files)
    assert back == report
    assert dump_report(back) == files
    write_report(report, tmp_path)
    assert read_report(tmp_path) == report


def test_report_tables(report):
    files = dump_report(report)
    lines = files["traces.csv"].splitlines()
    assert lines[0].startswith("receiver,label,src_node,src_label")
    assert len(lines) - 1 == report.counters["traced"]
    hist = files["histogram.csv"].splitlines()
    assert hist[0] == "bin_ns,count"
    assert sum(int(l.split(",")[1]) for l in hist[1:]) == report.counters["traced"]


def test_report_tamper_and_truncation(report):
    files = dump_report(report)
    bad = dict(files, **{"traces.csv": files["traces.csv"].replace("1048", "1056", 1)})
    with pytest.raises(ChecksumError):
        load_report(bad)
    missing = {k: v for k, v in files.items() if k != "traces.csv"}
    with pytest.raises(TruncatedError):
        load_report(missing)
    with pytest.raises(TruncatedError):
        load_report({})
    with pytest.raises(TruncatedError):
        load_report(dict(files, **{"summary.json": files["summary.json"][:50]}))


@settings(max_examples=100)
@given(st.dictionaries(st.sampled_from(["summary.json", "traces.csv", "fpga_latencies.csv"]),
                       st.text(max_size=60)))
def test_report_loader_is_total(files):
    try:
        load_report(files)
    except FileFormatError:
        pass
