"""File formats: connectivity text, fabric program images, simulation
configs and run reports.

Every loader is total. Whatever bytes it is handed, it returns a valid
object or raises a :class:`FileFormatError` subclass; truncation, checksum
mismatch and unknown versions each get their own class.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import re
import struct
import types
import typing
import warnings
import zlib
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np

from .aggregator import AggregatorParams, BarrierParams, RouteMatrix
from .chip import ChipParams, SourceSpec, TraceRecord
from .engine import NodeConfig, RunReport, SimConfig
from .link import ChipLinkParams, LinkParams
from .netcompiler import FabricProgram, LogicalConnection
from .node import (
    BarrierSync,
    EmitSpikes,
    EndOfRealtime,
    InboundLut,
    NodeParams,
    OutboundLut,
    PlaybackProgram,
)
from .types import CHIP_LABEL_BITS, FABRIC_LABEL_BITS, MAX_NODES, TICK_NS, Layer2Group


class FileFormatError(ValueError):
    kind = "format"

    def as_dict(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class TruncatedError(FileFormatError):
    kind = "truncated"


class ChecksumError(FileFormatError):
    kind = "checksum"


class VersionError(FileFormatError):
    kind = "version"


class SchemaError(FileFormatError):
    kind = "schema"


class ConnectivityError(FileFormatError):
    kind = "connectivity"

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason

    def as_dict(self) -> dict:
        return {"error": self.kind, "line": self.line, "message": self.reason}


class DuplicateConnectionWarning(UserWarning):
    pass


# -- connectivity text -----------------------------------------------------

_EDGE = re.compile(r"^(\S+)\s+(\S+)\s*->\s*(\S+)\s+(\S+)$")


def _parse_int(tok: str) -> Optional[int]:
    try:
        return int(tok, 16) if tok.lower().startswith("0x") else int(tok, 10)
    except ValueError:
        return None


def parse_connectivity(text: str, node_count: Optional[int] = None) -> list[LogicalConnection]:
    """Parse ``src_node src_label -> dst_node dst_label`` lines.

    ``#`` starts a comment. Duplicate edges are dropped with a
    :class:`DuplicateConnectionWarning`. Order of first appearance is kept.
    """
    max_node = (node_count if node_count is not None else MAX_NODES) - 1
    seen: dict[LogicalConnection, int] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _EDGE.match(line)
        if m is None:
            raise ConnectivityError(no, f"expected 'src_node src_label -> dst_node dst_label', got {line!r}")
        vals = [_parse_int(t) for t in m.groups()]
        for tok, v in zip(m.groups(), vals):
            if v is None:
                raise ConnectivityError(no, f"not an integer: {tok!r}")
        sn, sl, dn, dl = vals
        for name, v in (("source node", sn), ("destination node", dn)):
            if not 0 <= v <= max_node:
                raise ConnectivityError(no, f"{name} {v} outside [0, {max_node}]")
        for name, v in (("source label", sl), ("destination label", dl)):
            if not 0 <= v < 1 << CHIP_LABEL_BITS:
                raise ConnectivityError(no, f"{name} {v} outside [0, {(1 << CHIP_LABEL_BITS) - 1}]")
        conn = LogicalConnection(sn, sl, dn, dl)
        if conn in seen:
            warnings.warn(f"line {no}: duplicate of line {seen[conn]} ({conn})",
                          DuplicateConnectionWarning, stacklevel=2)
            continue
        seen[conn] = no
    return list(seen)


def format_connectivity(connections: Iterable[LogicalConnection]) -> str:
    """Canonical text: one edge per line, sorted, duplicates removed."""
    return "".join(f"{c}\n" for c in sorted(set(connections)))


# -- fabric program binary ---------------------------------------------------

PROGRAM_MAGIC = b"SFPG"
PROGRAM_VERSION = 1
_HEADER = struct.Struct("<4sHHII")  # magic, version, node count, payload length, crc32
_OUT_BYTES = (1 << CHIP_LABEL_BITS) * 2
_IN_BITS = 17
_IN_BYTES = (1 << FABRIC_LABEL_BITS) * _IN_BITS // 8
_ASSIGN = struct.Struct("<BHH")
_SHIFTS = np.arange(_IN_BITS, dtype=np.uint32)


def pack_inbound(table: np.ndarray) -> bytes:
    """2^15 17-bit entries, LSB first, entry 0 in the lowest bits."""
    bits = ((np.asarray(table, dtype=np.uint32)[:, None] >> _SHIFTS) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_inbound(data: bytes) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = bits.reshape(-1, _IN_BITS).astype(np.uint32)
    return (bits << _SHIFTS).sum(axis=1, dtype=np.uint32)


def _route_bytes(n: int) -> int:
    return (n * n + 7) // 8


def dump_program(program: FabricProgram) -> bytes:
    """Binary image of a fabric program.

    Layout after the 16-byte header: per node the outbound table (2^16 x u16
    little-endian) and the packed inbound table; then the route matrix as an
    N x N row-major bitmap (LSB first); then a u32 assignment count followed
    by (u8 node, u16 chip label, u16 fabric label) records in key order.
    """
    n = program.node_count
    parts = []
    for lut in program.outbound:
        parts.append(lut.table.astype("<u2").tobytes())
    for lut in program.inbound:
        parts.append(pack_inbound(lut.table))
    parts.append(np.packbits(program.routes.enable.reshape(-1), bitorder="little").tobytes())
    parts.append(struct.pack("<I", len(program.assignment)))
    for (node, label), fabric in sorted(program.assignment.items()):
        parts.append(_ASSIGN.pack(node, label, fabric))
    payload = b"".join(parts)
    return _HEADER.pack(PROGRAM_MAGIC, PROGRAM_VERSION, n, len(payload), zlib.crc32(payload)) + payload


def load_program(data: bytes) -> FabricProgram:
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise TruncatedError(f"fabric program: {len(data)} bytes, header needs {_HEADER.size}")
    magic, version, n, length, crc = _HEADER.unpack_from(data)
    if magic != PROGRAM_MAGIC:
        raise FileFormatError(f"fabric program: bad magic {magic!r}")
    if version != PROGRAM_VERSION:
        raise VersionError(f"fabric program: unsupported version {version} (expected {PROGRAM_VERSION})")
    payload = data[_HEADER.size:]
    if len(payload) < length:
        raise TruncatedError(f"fabric program: payload has {len(payload)} of {length} bytes")
    if len(payload) > length:
        raise FileFormatError(f"fabric program: {len(payload) - length} trailing bytes")
    if zlib.crc32(payload) != crc:
        raise ChecksumError("fabric program: payload checksum mismatch")
    if not 1 <= n <= MAX_NODES:
        raise FileFormatError(f"fabric program: node count {n} outside 1..{MAX_NODES}")
    fixed = n * (_OUT_BYTES + _IN_BYTES) + _route_bytes(n) + 4
    if length < fixed:
        raise FileFormatError(f"fabric program: payload of {length} bytes too short for {n} nodes")
    pos = 0
    outbound = []
    for _ in range(n):
        outbound.append(OutboundLut(np.frombuffer(payload, dtype="<u2", count=1 << CHIP_LABEL_BITS, offset=pos)))
        pos += _OUT_BYTES
    inbound = []
    for _ in range(n):
        inbound.append(InboundLut(unpack_inbound(payload[pos:pos + _IN_BYTES])))
        pos += _IN_BYTES
    rb = _route_bytes(n)
    bits = np.unpackbits(np.frombuffer(payload[pos:pos + rb], dtype=np.uint8), bitorder="little")
    if bits[n * n:].any():
        raise FileFormatError("fabric program: nonzero padding after the route matrix")
    routes = RouteMatrix(bits[:n * n].reshape(n, n).astype(bool))
    pos += rb
    (count,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    if length - pos != count * _ASSIGN.size:
        raise FileFormatError(f"fabric program: assignment table size does not match its count {count}")
    assignment: dict[tuple[int, int], int] = {}
    last = None
    for _ in range(count):
        node, label, fabric = _ASSIGN.unpack_from(payload, pos)
        pos += _ASSIGN.size
        if node >= n or fabric >= 1 << FABRIC_LABEL_BITS:
            raise FileFormatError(f"fabric program: invalid assignment ({node}, {label}) -> {fabric}")
        if last is not None and (node, label) <= last:
            raise FileFormatError("fabric program: assignment records out of order")
        last = (node, label)
        assignment[(node, label)] = fabric
    return FabricProgram(n, outbound, inbound, routes, assignment)


# -- JSON documents with checksum -------------------------------------------

CONFIG_FORMAT = "spikefabric.simconfig"
CONFIG_VERSION = 1
REPORT_FORMAT = "spikefabric.runreport"
REPORT_VERSION = 1


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _checksum(obj: Any) -> str:
    return f"{zlib.crc32(_canonical(obj)):08x}"


def _dump_document(fmt: str, version: int, key: str, body: Any) -> str:
    doc = {"format": fmt, "version": version, "checksum": _checksum(body), key: body}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load_document(text: Union[str, bytes], fmt: str, version: int, key: str,
                   require_checksum: bool) -> Any:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FileFormatError(f"{fmt}: not UTF-8 text ({exc.reason})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        if exc.pos >= len(text.rstrip()) or exc.msg.startswith("Unterminated string"):
            raise TruncatedError(f"{fmt}: document ends early ({exc.msg})") from None
        raise FileFormatError(f"{fmt}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    except (RecursionError, ValueError) as exc:
        raise FileFormatError(f"{fmt}: unreadable document ({type(exc).__name__})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{fmt}: top level must be an object")
    if doc.get("format") != fmt:
        raise FileFormatError(f"expected format {fmt!r}, got {doc.get('format')!r}")
    if type(doc.get("version")) is not int or doc["version"] != version:
        raise VersionError(f"{fmt}: unsupported version {doc.get('version')!r} (expected {version})")
    if key not in doc:
        raise SchemaError(f"{fmt}: missing {key!r}")
    extra = set(doc) - {"format", "version", "checksum", key}
    if extra:
        raise SchemaError(f"{fmt}: unknown top-level keys {sorted(extra)}")
    body = doc[key]
    if "checksum" in doc:
        if doc["checksum"] != _checksum(body):
            raise ChecksumError(f"{fmt}: checksum mismatch")
    elif require_checksum:
        raise SchemaError(f"{fmt}: missing checksum")
    return body


# -- dataclass <-> plain data --------------------------------------------------

def _type_name(tp: Any) -> str:
    return getattr(tp, "__name__", str(tp))


def _convert(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _convert(value, inner, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise SchemaError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if origin in (tuple, frozenset, list):
        if not isinstance(value, list):
            raise SchemaError(f"{path}: expected a list, got {value!r}")
        items = [_convert(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
        return origin(items)
    if dataclasses.is_dataclass(tp):
        return from_plain(tp, value, path)
    raise SchemaError(f"{path}: unsupported type {_type_name(tp)}")


def from_plain(cls: type, value: Any, path: str) -> Any:
    if not isinstance(value, dict):
        raise SchemaError(f"{path}: expected an object, got {value!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - names
    if unknown:
        raise SchemaError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {k: _convert(v, hints[k], f"{path}.{k}") for k, v in value.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError, OverflowError) as exc:
        raise SchemaError(f"{path}: {exc}") from None


def to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, frozenset):
        return sorted(obj)
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    return obj


# -- SimConfig ---------------------------------------------------------------

def _playback_to_plain(program: Optional[PlaybackProgram]) -> Optional[list]:
    if program is None:
        return None
    out = []
    for c in program.commands:
        if isinstance(c, BarrierSync):
            out.append({"op": "barrier_sync"})
        elif isinstance(c, EmitSpikes):
            out.append({"op": "emit", "at": c.at, "spikes": [list(e) for e in c.group.entries]})
        else:
            out.append({"op": "end", "at": c.at})
    return out


def _playback_from_plain(value: Any, path: str) -> Optional[PlaybackProgram]:
    if value is None:
        return None
    if not isinstance(value, list):
        raise SchemaError(f"{path}: expected a list of commands")
    cmds = []
    for i, c in enumerate(value):
        p = f"{path}[{i}]"
        if not isinstance(c, dict) or "op" not in c:
            raise SchemaError(f"{p}: expected an object with an 'op'")
        op = c["op"]
        allowed = {"barrier_sync": {"op"}, "emit": {"op", "at", "spikes"}, "end": {"op", "at"}}.get(op)
        if allowed is None:
            raise SchemaError(f"{p}: unknown op {op!r}")
        if set(c) != allowed:
            raise SchemaError(f"{p}: op {op!r} takes keys {sorted(allowed)}")
        if op == "barrier_sync":
            cmds.append(BarrierSync())
            continue
        at = _convert(c["at"], int, f"{p}.at")
        if at < 0:
            raise SchemaError(f"{p}.at: must be >= 0")
        if op == "end":
            cmds.append(EndOfRealtime(at))
            continue
        spikes = _convert(c["spikes"], tuple[tuple[int, ...], ...], f"{p}.spikes")
        if any(len(s) != 2 for s in spikes):
            raise SchemaError(f"{p}.spikes: entries are [label, timestamp] pairs")
        try:
            cmds.append(EmitSpikes(at, Layer2Group(spikes)))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{p}.spikes: {exc}") from None
    try:
        return PlaybackProgram(tuple(cmds))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


_NODE_FIELDS = {
    "params": NodeParams, "chip": ChipParams, "mgt_up": LinkParams, "mgt_down": LinkParams,
    "chip_up": ChipLinkParams, "chip_down": ChipLinkParams,
}


def config_to_plain(config: SimConfig) -> dict:
    nodes = []
    for n in config.nodes:
        d = {k: to_plain(getattr(n, k)) for k in _NODE_FIELDS}
        d["sources"] = to_plain(n.sources)
        d["playback"] = _playback_to_plain(n.playback)
        d["ready_at"] = n.ready_at
        nodes.append(d)
    return {
        "node_count": config.node_count,
        "run_ticks": config.run_ticks,
        "seed": config.seed,
        "step_every_tick": config.step_every_tick,
        "connections": [str(c) for c in config.connections],
        "aggregator": to_plain(config.aggregator),
        "nodes": nodes,
    }


def _node_from_plain(value: Any, path: str) -> NodeConfig:
    if not isinstance(value, dict):
        raise SchemaError(f"{path}: expected an object")
    known = set(_NODE_FIELDS) | {"sources", "playback", "ready_at"}
    unknown = set(value) - known
    if unknown:
        raise SchemaError(f"{path}: unknown keys {sorted(unknown)}")
    kw: dict[str, Any] = {}
    for k, cls in _NODE_FIELDS.items():
        if k in value:
            kw[k] = from_plain(cls, value[k], f"{path}.{k}")
    if "sources" in value:
        kw["sources"] = _convert(value["sources"], tuple[SourceSpec, ...], f"{path}.sources")
    if "playback" in value:
        kw["playback"] = _playback_from_plain(value["playback"], f"{path}.playback")
    if "ready_at" in value:
        kw["ready_at"] = _convert(value["ready_at"], Optional[int], f"{path}.ready_at")
    return NodeConfig(**kw)


def config_from_plain(value: Any) -> SimConfig:
    """Build a :class:`SimConfig` from its JSON form.

    Omitted fields take their defaults. ``node_defaults`` (optional) is merged
    under every entry of ``nodes``; if ``nodes`` is omitted every node uses
    ``node_defaults`` alone.
    """
    if not isinstance(value, dict):
        raise SchemaError("config: expected an object")
    known = {"node_count", "run_ticks", "seed", "step_every_tick", "connections", "aggregator",
             "nodes", "node_defaults"}
    unknown = set(value) - known
    if unknown:
        raise SchemaError(f"config: unknown keys {sorted(unknown)}")
    for k in ("node_count", "run_ticks"):
        if k not in value:
            raise SchemaError(f"config: missing {k!r}")
    n = _convert(value["node_count"], int, "config.node_count")
    if not 1 <= n <= MAX_NODES:
        raise SchemaError(f"config.node_count: must be in 1..{MAX_NODES}")
    defaults = value.get("node_defaults", {})
    if not isinstance(defaults, dict):
        raise SchemaError("config.node_defaults: expected an object")
    raw_nodes = value.get("nodes", [{} for _ in range(n)])
    if not isinstance(raw_nodes, list) or len(raw_nodes) != n:
        raise SchemaError(f"config.nodes: expected a list of {n} node objects")
    nodes = []
    for i, raw in enumerate(raw_nodes):
        if not isinstance(raw, dict):
            raise SchemaError(f"config.nodes[{i}]: expected an object")
        nodes.append(_node_from_plain(_merge(defaults, raw), f"config.nodes[{i}]"))
    conns_raw = value.get("connections", [])
    if not isinstance(conns_raw, list) or not all(isinstance(c, str) for c in conns_raw):
        raise SchemaError("config.connections: expected a list of 'src_node src_label -> dst_node dst_label' strings")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", DuplicateConnectionWarning)
            conns = parse_connectivity("\n".join(conns_raw), n)
    except ConnectivityError as exc:
        raise SchemaError(f"config.connections[{exc.line - 1}]: {exc.reason}") from None
    except DuplicateConnectionWarning as exc:
        raise SchemaError(f"config.connections: {exc}") from None
    agg = from_plain(AggregatorParams, value.get("aggregator", {}), "config.aggregator")
    try:
        return SimConfig(
            node_count=n,
            nodes=tuple(nodes),
            run_ticks=_convert(value["run_ticks"], int, "config.run_ticks"),
            connections=tuple(conns),
            aggregator=agg,
            seed=_convert(value.get("seed", 0), int, "config.seed"),
            step_every_tick=_convert(value.get("step_every_tick", False), bool, "config.step_every_tick"),
        )
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"config: {exc}") from None


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def dump_config(config: SimConfig) -> str:
    return _dump_document(CONFIG_FORMAT, CONFIG_VERSION, "config", config_to_plain(config))


def load_config(text: Union[str, bytes], overrides: Iterable[str] = ()) -> SimConfig:
    """Parse a SimConfig document; ``overrides`` are ``dotted.key=value`` strings.

    A missing checksum is accepted so configs can be written by hand; a
    present one must match.
    """
    body = _load_document(text, CONFIG_FORMAT, CONFIG_VERSION, "config", require_checksum=False)
    for ov in overrides:
        body = apply_override(body, ov)
    config = config_from_plain(body)
    problems = config.validate()
    if problems:
        raise SchemaError("config: " + "; ".join(problems))
    return config


def apply_override(body: Any, override: str) -> Any:
    """Set ``key.path=value`` in a plain config. ``*`` in a path matches
    every list element; the value is parsed as JSON, else taken as a string.

    ``nodes.*.params.cdc_in_cycles=6`` expands an omitted ``nodes`` list
    from ``node_count`` first.
    """
    if "=" not in override:
        raise SchemaError(f"override {override!r}: expected key=value")
    key, raw = override.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    parts = key.strip().split(".")
    if not all(parts):
        raise SchemaError(f"override {override!r}: empty key component")
    body = json.loads(json.dumps(body))
    if parts[0] == "nodes" and "nodes" not in body and isinstance(body.get("node_count"), int):
        body["nodes"] = [{} for _ in range(max(0, min(body["node_count"], MAX_NODES)))]
    _set_path(body, parts, val, override)
    return body


def _set_path(obj: Any, parts: list[str], val: Any, override: str) -> None:
    head, rest = parts[0], parts[1:]
    if isinstance(obj, list):
        if head == "*":
            idx = range(len(obj))
        else:
            i = _parse_int(head)
            if i is None or not 0 <= i < len(obj):
                raise SchemaError(f"override {override!r}: no list element {head!r}")
            idx = [i]
        for i in idx:
            if rest:
                _set_path(obj[i], rest, val, override)
            else:
                obj[i] = val
        return
    if not isinstance(obj, dict):
        raise SchemaError(f"override {override!r}: {head!r} is not inside an object")
    if rest:
        if obj.get(head) is None:
            obj[head] = {}
        _set_path(obj[head], rest, val, override)
    else:
        obj[head] = val


# -- RunReport ---------------------------------------------------------------

SUMMARY_FILE = "summary.json"
TRACES_FILE = "traces.csv"
FPGA_FILE = "fpga_latencies.csv"
HISTOGRAM_FILE = "histogram.csv"
_TRACE_COLUMNS = ["receiver", "label", "src_node", "src_label", "emitted_tick", "arrived_tick",
                  "emitted_ns", "arrived_ns", "latency_ns"]


def report_tables(report: RunReport) -> dict[str, str]:
    """CSV tables of a report, keyed by file name."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_TRACE_COLUMNS)
    for node in sorted(report.traces):
        for r in report.traces[node]:
            w.writerow([node, r.label, r.src_node, r.src_label, r.emitted_at, r.arrived_at,
                        r.emitted_at * TICK_NS, r.arrived_at * TICK_NS, r.latency_ticks * TICK_NS])
    traces = buf.getvalue()
    fpga = "latency_tick\n" + "".join(f"{t}\n" for t in report.fpga_latencies_ticks)
    hist = "bin_ns,count\n" + "".join(f"{b},{c}\n" for b, c in report.histogram())
    return {TRACES_FILE: traces, FPGA_FILE: fpga, HISTOGRAM_FILE: hist}


def dump_report(report: RunReport) -> dict[str, str]:
    """All files of a stored report (summary plus CSV tables), keyed by name.

    The summary carries the CRC of each table, so the checksum covers the
    whole report.
    """
    tables = report_tables(report)
    body = {
        "node_count": report.node_count,
        "run_ticks": report.run_ticks,
        "receivers": sorted(report.traces),
        "counters": report.counters,
        "lane_words": report.lane_words,
        "lane_throughput_mevents": {k: round(v, 6) for k, v in report.lane_throughput_mevents().items()},
        "barrier_starts": report.barrier_starts,
        "barrier_fires": report.barrier_fires,
        "congestion": report.congestion,
        "percentiles_ns": report.percentiles(),
        "conservation_ok": report.conservation_ok(),
        "files": {name: f"{zlib.crc32(text.encode()):08x}" for name, text in sorted(tables.items())},
    }
    files = dict(tables)
    files[SUMMARY_FILE] = _dump_document(REPORT_FORMAT, REPORT_VERSION, "report", body)
    return files


def load_report(files: dict[str, Union[str, bytes]]) -> RunReport:
    if SUMMARY_FILE not in files:
        raise TruncatedError(f"run report: {SUMMARY_FILE} missing")
    body = _load_document(files[SUMMARY_FILE], REPORT_FORMAT, REPORT_VERSION, "report", require_checksum=True)
    if not isinstance(body, dict):
        raise SchemaError("run report: body must be an object")
    listed = body.get("files")
    if not isinstance(listed, dict):
        raise SchemaError("run report: missing file list")
    texts: dict[str, str] = {}
    for name, crc in listed.items():
        if name not in files:
            raise TruncatedError(f"run report: {name} missing")
        data = files[name]
        raw = data.encode() if isinstance(data, str) else bytes(data)
        if f"{zlib.crc32(raw):08x}" != crc:
            raise ChecksumError(f"run report: {name} checksum mismatch")
        texts[name] = raw.decode("utf-8", errors="replace")
    for name in (TRACES_FILE, FPGA_FILE):
        if name not in texts:
            raise SchemaError(f"run report: {name} not listed")
    try:
        receivers = [int(r) for r in body["receivers"]]
        traces: dict[int, list[TraceRecord]] = {r: [] for r in receivers}
        rows = list(csv.reader(io.StringIO(texts[TRACES_FILE])))
        if not rows or rows[0] != _TRACE_COLUMNS:
            raise SchemaError(f"run report: unexpected {TRACES_FILE} header")
        for row in rows[1:]:
            node, label, sn, sl, em, ar = (int(x) for x in row[:6])
            traces[node].append(TraceRecord(label, ar, em, sn, sl))
        fpga_lines = texts[FPGA_FILE].splitlines()
        if not fpga_lines or fpga_lines[0] != "latency_tick":
            raise SchemaError(f"run report: unexpected {FPGA_FILE} header")
        report = RunReport(
            node_count=int(body["node_count"]),
            run_ticks=int(body["run_ticks"]),
            traces=traces,
            counters={str(k): int(v) for k, v in body["counters"].items()},
            lane_words={str(k): int(v) for k, v in body["lane_words"].items()},
            barrier_starts=[None if s is None else int(s) for s in body["barrier_starts"]],
            barrier_fires=[int(f) for f in body["barrier_fires"]],
            fpga_latencies_ticks=[int(x) for x in fpga_lines[1:]],
            congestion={str(k): {str(a): (None if b is None else int(b)) for a, b in v.items()}
                        for k, v in body["congestion"].items()},
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError, IndexError) as exc:
        raise SchemaError(f"run report: malformed content ({type(exc).__name__}: {exc})") from None
    if dump_report(report) != {k: (v if isinstance(v, str) else v.decode("utf-8", "replace"))
                               for k, v in files.items() if k in listed or k == SUMMARY_FILE}:
        raise SchemaError("run report: summary is inconsistent with the tables")
    return report


def write_report(report: RunReport, directory: Union[str, Path]) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for name, text in sorted(dump_report(report).items()):
        p = d / name
        p.write_text(text)
        out.append(p)
    return out


def read_report(directory: Union[str, Path]) -> RunReport:
    d = Path(directory)
    files = {p.name: p.read_bytes() for p in d.iterdir() if p.is_file() and p.suffix in (".json", ".csv")}
    return load_report(files)
