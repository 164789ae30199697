"""Cycle-driven simulation kernel.

Every tick the components are advanced in one fixed order::

    chip sources/egress -> node tap -> node outbound -> MGT uplinks ->
    Aggregator -> MGT downlinks -> node inbound -> chip links -> jitter
    buffer -> trace

Ticks on which no component has anything to do are skipped; components
register the next tick they need through ``wake``. Skipping changes nothing
observable: ``SimConfig.step_every_tick`` forces the plain loop and yields
identical reports.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import calibration as cal
from .aggregator import Aggregator, AggregatorParams, distribute_sync
from .chip import ChipEndpoint, ChipParams, SourceSpec, TraceRecord
from .link import ChipLink, ChipLinkParams, LinkParams, MgtLink
from .netcompiler import FabricProgram, LogicalConnection, compile_program, verify
from .node import Node, NodeParams, PlaybackProgram
from .types import MAX_NODES, SYSTEM_CYCLE_NS, TICK_NS, TICKS_PER_SYSTEM_CYCLE


_CHIP_TX, _TAP, _NODE_TX, _AGG, _NODE_RX, _NODE_IN, _CHIP_RX = range(7)


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class NodeConfig:
    params: NodeParams = cal.DEFAULT_NODE
    chip: ChipParams = field(default_factory=ChipParams)
    sources: tuple[SourceSpec, ...] = ()
    playback: Optional[PlaybackProgram] = None
    ready_at: Optional[int] = 0  # tick the playback starts; None: never
    mgt_up: LinkParams = cal.DEFAULT_MGT_LINK
    mgt_down: LinkParams = cal.DEFAULT_MGT_LINK
    chip_up: ChipLinkParams = cal.DEFAULT_CHIP_LINK
    chip_down: ChipLinkParams = cal.DEFAULT_CHIP_LINK


@dataclass(frozen=True)
class SimConfig:
    node_count: int
    nodes: tuple[NodeConfig, ...]
    run_ticks: int
    connections: tuple[LogicalConnection, ...] = ()
    program: Optional[FabricProgram] = field(default=None, compare=False)
    aggregator: AggregatorParams = cal.DEFAULT_AGGREGATOR
    seed: int = 0
    step_every_tick: bool = False

    @classmethod
    def uniform(cls, node_count: int, run_ticks: int, node: NodeConfig = NodeConfig(), **kw) -> "SimConfig":
        return cls(node_count, tuple(node for _ in range(node_count)), run_ticks, **kw)

    def resolved_program(self) -> FabricProgram:
        if self.program is not None:
            return self.program
        return compile_program(self.connections, self.node_count)

    def validate(self) -> list[str]:
        problems = []
        if not 1 <= self.node_count <= MAX_NODES:
            problems.append(f"node_count must be in 1..{MAX_NODES}")
        if len(self.nodes) != self.node_count:
            problems.append(f"{len(self.nodes)} node configs for {self.node_count} nodes")
        if self.run_ticks <= 0:
            problems.append("run_ticks must be > 0")
        for c in self.connections:
            if c.src_node >= self.node_count or c.dst_node >= self.node_count:
                problems.append(f"connection {c} references a missing node")
        bp = self.aggregator.barrier
        if bp.participants is not None and any(not 0 <= p < self.node_count for p in bp.participants):
            problems.append("barrier participants outside the node range")
        if len(bp.skew) > self.node_count:
            problems.append("more skew entries than nodes")
        for i, n in enumerate(self.nodes):
            if n.ready_at is not None and n.ready_at < 0:
                problems.append(f"node {i}: ready_at must be >= 0")
        if problems:
            return problems
        try:
            program = self.resolved_program()
        except ValueError as exc:
            return [f"fabric program: {exc}"]
        if program.node_count != self.node_count:
            problems.append("fabric program node count does not match")
        elif self.connections or self.program is None:
            rep = verify(program, self.connections)
            if not rep.ok:
                problems.append(f"fabric program does not realize the connections: {rep.as_dict()}")
        return problems


@dataclass
class RunReport:
    node_count: int
    run_ticks: int
    traces: dict[int, list[TraceRecord]]
    counters: dict[str, int]
    lane_words: dict[str, int]
    barrier_starts: list[Optional[int]]
    barrier_fires: list[int]
    fpga_latencies_ticks: list[int]
    congestion: dict[str, dict[str, Optional[int]]]

    def all_records(self) -> list[TraceRecord]:
        return [r for n in sorted(self.traces) for r in self.traces[n]]

    def latencies_ns(self) -> np.ndarray:
        recs = self.all_records()
        return np.array([r.latency_ticks * TICK_NS for r in recs], dtype=np.int64)

    def histogram(self, bin_ns: int = SYSTEM_CYCLE_NS) -> list[tuple[int, int]]:
        return latency_histogram(self.latencies_ns(), bin_ns)

    def fpga_histogram(self, bin_ns: int = SYSTEM_CYCLE_NS) -> list[tuple[int, int]]:
        return latency_histogram(np.asarray(self.fpga_latencies_ticks, dtype=np.int64) * TICK_NS, bin_ns)

    def percentiles(self) -> dict[str, Optional[int]]:
        return latency_percentiles(self.latencies_ns())

    @property
    def drops(self) -> int:
        c = self.counters
        return c["chip_egress_drops"] + c["node_egress_drops"] + c["aggregator_drops"] + c["node_ingress_drops"]

    def conservation_ok(self) -> bool:
        c = self.counters
        lhs = c["generated"] + c["fanout_delta"]
        rhs = (c["traced"] + c["untraced"] + self.drops + c["filtered_outbound"]
               + c["filtered_inbound"] + c["in_flight"])
        return lhs == rhs

    def lane_throughput_mevents(self) -> dict[str, float]:
        seconds = self.run_ticks * TICK_NS * 1e-9
        return {k: v / seconds / 1e6 for k, v in sorted(self.lane_words.items())}

    @property
    def max_start_skew_ticks(self) -> Optional[int]:
        starts = [s for s in self.barrier_starts if s is not None]
        return max(starts) - min(starts) if starts else None


def latency_histogram(values_ns: np.ndarray, bin_ns: int = SYSTEM_CYCLE_NS) -> list[tuple[int, int]]:
    if len(values_ns) == 0:
        return []
    bins, counts = np.unique(np.asarray(values_ns) // bin_ns, return_counts=True)
    return [(int(b) * bin_ns, int(c)) for b, c in zip(bins, counts)]


def latency_percentiles(values_ns: np.ndarray) -> dict[str, Optional[int]]:
    if len(values_ns) == 0:
        return {"p1": None, "p50": None, "p99": None, "max": None}
    p = np.percentile(values_ns, [1, 50, 99], method="inverted_cdf")
    return {"p1": int(p[0]), "p50": int(p[1]), "p99": int(p[2]), "max": int(np.max(values_ns))}


class Simulation:
    """One simulation instance; build from a :class:`SimConfig` and call :meth:`run`."""

    def __init__(self, config: SimConfig):
        problems = config.validate()
        if problems:
            raise ConfigError(problems)
        self.config = config
        self.program = config.resolved_program()
        n = config.node_count
        self._heap: list[int] = []
        self._pending: dict[int, set[int]] = {}
        self._current: Optional[set[int]] = None
        self.now = -1

        # Scheduling slots; a slot's number encodes its position in the
        # per-tick order (stage * MAX_NODES + node).
        def slot(stage: int, i: int = 0):
            k = stage * MAX_NODES + i
            return lambda t: self.wake(t, k)

        nodes = config.nodes
        self.chip_up = [ChipLink(c.chip_up, f"chip{i}->node{i}", slot(_TAP, i)) for i, c in enumerate(nodes)]
        self.chip_down = [ChipLink(c.chip_down, f"node{i}->chip{i}", slot(_CHIP_RX, i)) for i, c in enumerate(nodes)]
        self.mgt_up = [MgtLink(c.mgt_up, f"node{i}->agg", slot(_AGG)) for i, c in enumerate(nodes)]
        self.mgt_down = [MgtLink(c.mgt_down, f"agg->node{i}", slot(_NODE_RX, i)) for i, c in enumerate(nodes)]
        self.chips = [
            ChipEndpoint(i, c.chip, c.sources, self.chip_up[i], self.chip_down[i],
                         slot(_CHIP_TX, i), slot(_CHIP_RX, i))
            for i, c in enumerate(nodes)
        ]
        self.nodes = [
            Node(i, c.params, self.chip_up[i], self.chip_down[i], self.mgt_up[i], self.mgt_down[i],
                 self.program.outbound[i], self.program.inbound[i], slot(_NODE_TX, i), slot(_NODE_IN, i))
            for i, c in enumerate(nodes)
        ]
        self.aggregator = Aggregator(config.aggregator, self.program.routes, self.mgt_up, self.mgt_down,
                                     slot(_AGG), self._on_fire)
        handlers: dict[int, object] = {_AGG * MAX_NODES: self.aggregator.step}
        for i in range(n):
            handlers[_CHIP_TX * MAX_NODES + i] = self.chips[i].egress_step
            handlers[_TAP * MAX_NODES + i] = self.nodes[i].tap_step
            handlers[_NODE_TX * MAX_NODES + i] = self.nodes[i].outbound_step
            handlers[_NODE_RX * MAX_NODES + i] = self.nodes[i].receive_step
            handlers[_NODE_IN * MAX_NODES + i] = self.nodes[i].inbound_step
            handlers[_CHIP_RX * MAX_NODES + i] = self.chips[i].receive_step
        self._handlers = handlers
        self._system_only = {k for k in handlers if k // MAX_NODES in (_CHIP_TX, _TAP, _NODE_IN, _CHIP_RX)}
        self.starts: list[Optional[int]] = [None] * n
        self._ready: dict[int, list[int]] = {}

    def wake(self, tick: int, slot: int = -1) -> None:
        """Ask for ``slot`` to be stepped at ``tick`` (``-1``: tick-level work only)."""
        if tick == self.now and self._current is not None:
            if slot >= 0:
                if slot <= self._cursor:
                    raise RuntimeError(f"slot {slot} woken for tick {tick} after it already ran")
                self._current.add(slot)
            return
        if tick < self.now:
            raise RuntimeError(f"wake-up for past tick {tick} at {self.now}")
        slots = self._pending.get(tick)
        if slots is None:
            slots = self._pending[tick] = set()
            heapq.heappush(self._heap, tick)
        if slot >= 0:
            slots.add(slot)

    def _on_fire(self, cycle: int) -> None:
        bp = self.config.aggregator.barrier
        starts = distribute_sync(cycle, self.config.node_count, bp.sync_delay_cycles, bp.skew)
        participants = self.aggregator.barrier.participants
        for i, node in enumerate(self.nodes):
            if i in participants and node.waiting_for_sync:
                self._start_node(i, starts[i])

    def _start_node(self, i: int, tick: int) -> None:
        node = self.nodes[i]
        if node.program is not None:
            node.on_sync(tick)
        else:
            node.start_realtime(tick)
        self.chips[i].start(tick)
        if node.end_tick is not None:
            self.chips[i].stop(node.end_tick)
        self.starts[i] = tick

    def _setup(self) -> None:
        for i, c in enumerate(self.config.nodes):
            if c.playback is None:
                self._start_node(i, 0)
            else:
                self.nodes[i].load_program(c.playback)
                if c.ready_at is not None:
                    self._ready.setdefault(c.ready_at, []).append(i)
                    self.wake(c.ready_at, _NODE_TX * MAX_NODES + i)

    def _begin_ready(self, now: int) -> None:
        for i in self._ready.pop(now, ()):
            self.nodes[i].begin_playback(now)

    def step(self, now: int) -> None:
        """Advance every component once at ``now`` in the fixed order."""
        self.now = now
        self._current = None
        self._begin_ready(now)
        odd = now & 1
        for k in sorted(self._handlers):
            if odd and k in self._system_only:
                continue
            self._handlers[k](now)

    def _step_woken(self, now: int, slots: set[int]) -> None:
        self.now = now
        self._current = slots
        self._cursor = -1
        if self._ready:
            self._begin_ready(now)
        handlers = self._handlers
        while slots:
            k = min(slots) if len(slots) > 1 else next(iter(slots))
            slots.discard(k)
            self._cursor = k
            handlers[k](now)
        self._current = None

    def run(self) -> RunReport:
        self._setup()
        end = self.config.run_ticks
        if self.config.step_every_tick:
            for t in range(end):
                self.step(t)
        else:
            heap, pending = self._heap, self._pending
            while heap:
                t = heapq.heappop(heap)
                slots = pending.pop(t)
                if t >= end:
                    break
                self._step_woken(t, slots)
        self.now = end
        return self._report()

    def _in_flight(self) -> int:
        total = sum(len(c.egress) + len(c.jitter) for c in self.chips)
        total += sum(l.in_flight_events for l in self.chip_up + self.chip_down)
        total += sum(l.in_flight_events for l in self.mgt_up + self.mgt_down)
        total += sum(n.in_flight for n in self.nodes)
        total += self.aggregator.in_flight
        return total

    def _report(self) -> RunReport:
        agg = self.aggregator
        traces = {i: list(c.trace.records) for i, c in enumerate(self.chips)}
        traced = sum(len(t) for t in traces.values())
        counters = {
            "generated": sum(c.generated for c in self.chips) + sum(n.playback_sent for n in self.nodes),
            "source_spikes": sum(c.generated for c in self.chips),
            "playback_spikes": sum(n.playback_sent for n in self.nodes),
            "traced": traced,
            "untraced": sum(c.trace.rejected for c in self.chips),
            "chip_egress_drops": sum(c.egress_drops for c in self.chips),
            "node_egress_drops": sum(n.egress_drops for n in self.nodes),
            "aggregator_drops": sum(agg.drops),
            "node_ingress_drops": sum(n.ingress_drops for n in self.nodes),
            "filtered_outbound": sum(n.filtered_out for n in self.nodes),
            "filtered_inbound": sum(n.filtered_in for n in self.nodes),
            "unrouted": agg.unrouted,
            "fanout_delta": agg.copies - agg.events_in,
            "in_flight": self._in_flight(),
            "node_egress_stalls": sum(n.egress_stalls for n in self.nodes),
            "aggregator_stalls": sum(agg.stalls),
            "node_ingress_stalls": sum(n.ingress_stalls for n in self.nodes),
            "jitter_held": sum(c.jitter.held_total for c in self.chips),
            "jitter_misses": sum(c.jitter.misses for c in self.chips),
            "barrier_timeouts": len(agg.barrier.timeouts),
            "barrier_ignored": agg.barrier.ignored,
            "unknown_commands": agg.unknown_commands,
        }
        lane_words = {}
        for i in range(self.config.node_count):
            lane_words[f"mgt_up{i}"] = self.mgt_up[i].accepted
            lane_words[f"mgt_down{i}"] = self.mgt_down[i].accepted
            lane_words[f"chip_up{i}"] = self.chip_up[i].events_sent
            lane_words[f"chip_down{i}"] = self.chip_down[i].events_sent
        congestion = {}
        for i, c in enumerate(self.chips):
            congestion[f"chip_egress{i}"] = {"first_backlog": None, "first_drop": c.first_drop_tick}
        for i, n in enumerate(self.nodes):
            congestion[f"node{i}"] = {"first_backlog": n.first_backlog_tick, "first_drop": n.first_drop_tick}
        for d in range(self.config.node_count):
            congestion[f"aggregator_out{d}"] = {
                "first_backlog": agg.first_backlog_tick[d],
                "first_drop": agg.first_drop_tick[d],
            }
        fpga = [x for n in self.nodes for x in n.fpga_latencies]
        return RunReport(
            node_count=self.config.node_count,
            run_ticks=self.config.run_ticks,
            traces=traces,
            counters=counters,
            lane_words=lane_words,
            barrier_starts=list(self.starts),
            barrier_fires=list(agg.barrier.fires),
            fpga_latencies_ticks=fpga,
            congestion=congestion,
        )


def run(config: SimConfig) -> RunReport:
    return Simulation(config).run()


def path_delay_breakdown(config: SimConfig, src: int, dst: int) -> dict[str, int]:
    """Zero-contention chip-to-chip delay split by stage, in ticks.

    Assumes the spike is emitted on a system tick and its MGT words do not
    meet a clock-compensation pause.
    """
    n = config.node_count
    if not (0 <= src < n and 0 <= dst < n):
        raise ValueError(f"nodes must be in 0..{n - 1}")
    s, d = config.nodes[src], config.nodes[dst]
    parts = {
        "chip_uplink": s.chip_up.latency_ticks,
        "outbound_cdc": TICKS_PER_SYSTEM_CYCLE * s.params.cdc_out_cycles,
        "outbound_lut": s.params.lut_pipeline_cycles,
        "mgt_uplink": s.mgt_up.latency_ticks,
        "aggregator_cdc": config.aggregator.cdc_cycles,
        "aggregator_routing": config.aggregator.pipeline_cycles,
        "mgt_downlink": d.mgt_down.latency_ticks,
        "inbound_lut": d.params.lut_pipeline_cycles,
    }
    t = sum(parts.values())
    parts["system_clock_alignment"] = t & 1
    parts["inbound_cdc"] = TICKS_PER_SYSTEM_CYCLE * d.params.cdc_in_cycles
    parts["packing"] = TICKS_PER_SYSTEM_CYCLE * d.params.pack_latency_cycles
    parts["pack_window"] = TICKS_PER_SYSTEM_CYCLE * d.params.pack_window_cycles
    parts["chip_downlink"] = d.chip_down.latency_ticks
    if d.chip.jitter_compensation:
        expected = d.chip.expected_delay
        if expected is None:
            expected = d.chip_down.latency_ticks // TICKS_PER_SYSTEM_CYCLE
        parts["jitter_hold"] = max(0, TICKS_PER_SYSTEM_CYCLE * expected - d.chip_down.latency_ticks)
    else:
        parts["jitter_hold"] = 0
    return parts


_INTER_FPGA = (
    "outbound_cdc", "outbound_lut", "mgt_uplink", "aggregator_cdc", "aggregator_routing",
    "mgt_downlink", "inbound_lut", "system_clock_alignment", "inbound_cdc", "packing", "pack_window",
)


def path_delay(config: SimConfig, src: int, dst: int) -> int:
    return sum(path_delay_breakdown(config, src, dst).values())


def inter_fpga_delay(config: SimConfig, src: int, dst: int) -> int:
    parts = path_delay_breakdown(config, src, dst)
    return sum(parts[k] for k in _INTER_FPGA)


def mgt_hop_delay(config: SimConfig, src: int, dst: int) -> int:
    parts = path_delay_breakdown(config, src, dst)
    return parts["mgt_uplink"] + parts["mgt_downlink"]
