"""Compile logical chip-to-chip connectivity into lookup tables and route enables.

Each (source node, source chip label) with at least one connection gets one
fabric label. A receiver's inbound table is keyed on the fabric label alone,
so every source key that reaches a receiver (because its node has the route
enabled) places a demand on that receiver: "deliver as label X" or "filter".
Two keys may share a fabric label only if their demands agree at every
receiver both reach. Keys are assigned greedily, in sorted order, the least
fabric label compatible with everything assigned before.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .aggregator import RouteMatrix
from .node import IN_ENABLE, OUT_ENABLE, InboundLut, OutboundLut
from .types import CHIP_LABEL_BITS, FABRIC_LABEL_BITS, MAX_NODES

FABRIC_SPACE = 1 << FABRIC_LABEL_BITS
_FILTER = -1


@dataclass(frozen=True, order=True)
class LogicalConnection:
    src_node: int
    src_label: int
    dst_node: int
    dst_label: int

    def __post_init__(self) -> None:
        for name in ("src_node", "dst_node"):
            v = getattr(self, name)
            if not 0 <= v < MAX_NODES:
                raise ValueError(f"{name} {v} outside [0, {MAX_NODES - 1}]")
        for name in ("src_label", "dst_label"):
            v = getattr(self, name)
            if not 0 <= v < 1 << CHIP_LABEL_BITS:
                raise ValueError(f"{name} {v} outside the 16-bit label range")

    @property
    def src(self) -> tuple[int, int]:
        return self.src_node, self.src_label

    def __str__(self) -> str:
        return f"{self.src_node} {self.src_label} -> {self.dst_node} {self.dst_label}"


@dataclass
class FabricProgram:
    node_count: int
    outbound: list[OutboundLut]
    inbound: list[InboundLut]
    routes: RouteMatrix
    assignment: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 1 <= self.node_count <= MAX_NODES:
            raise ValueError(f"node count must be in 1..{MAX_NODES}")
        if len(self.outbound) != self.node_count or len(self.inbound) != self.node_count:
            raise ValueError("one outbound and one inbound table per node")
        if self.routes.size != self.node_count:
            raise ValueError("route matrix size does not match node count")

    @classmethod
    def empty(cls, node_count: int) -> "FabricProgram":
        return cls(node_count, [OutboundLut() for _ in range(node_count)],
                   [InboundLut() for _ in range(node_count)], RouteMatrix.empty(node_count))

    def copy(self) -> "FabricProgram":
        return FabricProgram(
            self.node_count,
            [OutboundLut(l.table) for l in self.outbound],
            [InboundLut(l.table) for l in self.inbound],
            RouteMatrix(self.routes.enable),
            dict(self.assignment),
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FabricProgram)
            and self.node_count == other.node_count
            and self.outbound == other.outbound
            and self.inbound == other.inbound
            and self.routes == other.routes
            and self.assignment == other.assignment
        )

    def summary(self) -> str:
        lines = [f"fabric program: {self.node_count} nodes"]
        for n in range(self.node_count):
            lines.append(
                f"  node {n}: {len(self.outbound[n].enabled())} outbound, "
                f"{len(self.inbound[n].enabled())} inbound entries enabled; "
                f"routes to {self.routes.destinations(n)}"
            )
        lines.append(f"  fabric labels in use: {len(set(self.assignment.values()))}")
        for (node, label), f in sorted(self.assignment.items()):
            lines.append(f"    ({node}, {label}) -> fabric {f}")
        return "\n".join(lines) + "\n"


class CompileError(ValueError):
    """The connection set cannot be realized; ``conflicts`` names the culprits."""

    def __init__(self, message: str, conflicts: Sequence[LogicalConnection] = ()):
        super().__init__(message)
        self.conflicts = list(conflicts)

    def report(self) -> dict:
        return {"error": "infeasible", "message": str(self), "conflicts": [str(c) for c in self.conflicts]}


def _check_inputs(connections: Iterable[LogicalConnection], node_count: int) -> list[LogicalConnection]:
    if not 1 <= node_count <= MAX_NODES:
        raise CompileError(f"node count must be in 1..{MAX_NODES}, got {node_count}")
    conns = sorted(set(connections))
    bad = [c for c in conns if c.src_node >= node_count or c.dst_node >= node_count]
    if bad:
        raise CompileError(f"connections reference nodes outside 0..{node_count - 1}", bad)
    return conns


def compile_program(connections: Iterable[LogicalConnection], node_count: int) -> FabricProgram:
    conns = _check_inputs(connections, node_count)

    # demand[key][dst_node] = dst_label
    demand: dict[tuple[int, int], dict[int, int]] = defaultdict(dict)
    by_key: dict[tuple[int, int], list[LogicalConnection]] = defaultdict(list)
    for c in conns:
        by_key[c.src].append(c)
        prev = demand[c.src].get(c.dst_node)
        if prev is not None and prev != c.dst_label:
            clash = [x for x in by_key[c.src] if x.dst_node == c.dst_node]
            raise CompileError(
                f"source {c.src} needs two different labels at node {c.dst_node}; "
                "one fabric label cannot be translated twice by the same receiver",
                clash,
            )
        demand[c.src][c.dst_node] = c.dst_label

    routes = np.zeros((node_count, node_count), dtype=bool)
    for c in conns:
        routes[c.src_node, c.dst_node] = True

    # used[d][f] = label delivered for fabric label f at receiver d, or _FILTER
    used: list[dict[int, int]] = [dict() for _ in range(node_count)]
    owners: list[dict[int, list[tuple[int, int]]]] = [defaultdict(list) for _ in range(node_count)]
    assignment: dict[tuple[int, int], int] = {}
    for key in sorted(demand):
        reach = [int(d) for d in np.flatnonzero(routes[key[0]])]
        want = {d: demand[key].get(d, _FILTER) for d in reach}
        f = 0
        while f < FABRIC_SPACE:
            if all(used[d].get(f, want[d]) == want[d] for d in reach):
                break
            f += 1
        if f == FABRIC_SPACE:
            culprits = {key}
            for d in reach:
                for g, lab in used[d].items():
                    if lab != want[d]:
                        culprits.update(owners[d][g])
            conflicts = sorted(c for k in culprits for c in by_key.get(k, []))
            raise CompileError(
                f"no free fabric label for source {key}: receiver namespaces exhausted", conflicts
            )
        assignment[key] = f
        for d in reach:
            used[d][f] = want[d]
            owners[d][f].append(key)

    outbound = [OutboundLut() for _ in range(node_count)]
    inbound = [InboundLut() for _ in range(node_count)]
    for (node, label), f in assignment.items():
        outbound[node].table[label] = OUT_ENABLE | f
    for d in range(node_count):
        for f, lab in used[d].items():
            if lab != _FILTER:
                inbound[d].table[f] = IN_ENABLE | lab
    return FabricProgram(node_count, outbound, inbound, RouteMatrix(routes), assignment)


def deliveries(program: FabricProgram) -> set[tuple[int, int, int, int]]:
    """Symbolically push every enabled source label through tables and routes.

    Returns ``{(src_node, src_label, dst_node, dst_label)}``.
    """
    out = set()
    n = program.node_count
    for s in range(n):
        dests = program.routes.destinations(s)
        if not dests:
            continue
        for label, f in program.outbound[s].enabled().items():
            for d in dests:
                lab = program.inbound[d].lookup(f)
                if lab is not None:
                    out.add((s, label, d, lab))
    return out


@dataclass
class VerifyReport:
    missing: list[LogicalConnection] = field(default_factory=list)
    spurious: list[LogicalConnection] = field(default_factory=list)
    mislabeled: list[tuple[LogicalConnection, LogicalConnection]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.missing or self.spurious or self.mislabeled)

    def __bool__(self) -> bool:
        return not self.ok

    def as_dict(self) -> dict:
        return {
            "missing": [str(c) for c in self.missing],
            "spurious": [str(c) for c in self.spurious],
            "mislabeled": [{"expected": str(e), "delivered": str(g)} for e, g in self.mislabeled],
        }


def verify(program: FabricProgram, connections: Iterable[LogicalConnection]) -> VerifyReport:
    """Compare what ``program`` delivers with ``connections``; empty report iff equal."""
    expected = {(c.src_node, c.src_label, c.dst_node, c.dst_label) for c in connections}
    got = deliveries(program)
    exp_by = defaultdict(set)
    got_by = defaultdict(set)
    for s, l, d, x in expected:
        exp_by[(s, l, d)].add(x)
    for s, l, d, x in got:
        got_by[(s, l, d)].add(x)
    rep = VerifyReport()
    for key in sorted(set(exp_by) | set(got_by)):
        e, g = exp_by.get(key, set()), got_by.get(key, set())
        if e == g:
            continue
        wrong_e, wrong_g = sorted(e - g), sorted(g - e)
        if wrong_e and wrong_g:
            rep.mislabeled.append((LogicalConnection(*key, wrong_e[0]), LogicalConnection(*key, wrong_g[0])))
            wrong_e, wrong_g = wrong_e[1:], wrong_g[1:]
        rep.missing.extend(LogicalConnection(*key, x) for x in wrong_e)
        rep.spurious.extend(LogicalConnection(*key, x) for x in wrong_g)
    return rep
