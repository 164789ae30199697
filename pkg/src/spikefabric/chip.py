"""Minimal chip endpoint: regular-rate spike sources, the layer-1 egress
queue feeding the layer-2 link, and the receive side with its jitter
compensation buffer and trace recorder."""

from __future__ import annotations

import csv
import heapq
import io
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .link import ChipLink
from .types import (
    TICK_NS,
    TICKS_PER_SYSTEM_CYCLE,
    Layer2Group,
    SpikeEvent,
    next_system_tick,
)


@dataclass(frozen=True)
class SourceSpec:
    """Regular spike train: spike ``i`` is due at ``start_offset + i * period_ticks``
    ticks after the real-time section starts."""

    label: int
    period_ticks: int
    count: int
    start_offset: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.label < 1 << 16:
            raise ValueError(f"chip label out of range: {self.label}")
        if self.period_ticks < 1:
            raise ValueError("period_ticks must be >= 1")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.start_offset < 0:
            raise ValueError("start_offset must be >= 0")

    def due_tick(self, i: int) -> int:
        return self.start_offset + i * self.period_ticks

    @property
    def rate_mhz(self) -> float:
        return 1e3 / (self.period_ticks * TICK_NS)


def _first_index_after(spec: SourceSpec, tick: int) -> int:
    """Smallest i with due_tick(i) > tick (may be >= count)."""
    if tick < spec.start_offset:
        return 0
    return (tick - spec.start_offset) // spec.period_ticks + 1


def generate(spec: SourceSpec, cycle: int, base: int = 0, origin_node: int = -1) -> list[SpikeEvent]:
    """Spikes a source emits in the system cycle at tick ``cycle``.

    A spike due at tick ``d`` (relative to ``base``) is emitted on the first
    system tick at or after ``base + d``; that tick is its ``emitted_at``.
    """
    if cycle % TICKS_PER_SYSTEM_CYCLE:
        raise ValueError("sources only fire on system ticks")
    rel = cycle - base
    lo = _first_index_after(spec, rel - TICKS_PER_SYSTEM_CYCLE)
    hi = min(_first_index_after(spec, rel), spec.count)
    return [
        SpikeEvent(spec.label, cycle, origin_node, spec.label)
        for _ in range(lo, hi)
    ]


@dataclass(frozen=True)
class JitterBufferParams:
    expected_delay: int
    depth: int = 64

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("jitter buffer depth must be >= 1")
        if self.expected_delay < 0:
            raise ValueError("expected_delay must be >= 0")


def reconstruct_send_cycle(arrival_cycle: int, sent_ts: int) -> int:
    """Latest cycle at or before ``arrival_cycle`` whose low byte is ``sent_ts``."""
    return arrival_cycle - ((arrival_cycle - sent_ts) % 256)


def jitter_release(arrival_cycle: int, sent_ts: int, expected_delay: int) -> int:
    """System cycle at which an event arriving at ``arrival_cycle`` is released."""
    return max(arrival_cycle, reconstruct_send_cycle(arrival_cycle, sent_ts) + expected_delay)


class JitterBuffer:
    def __init__(self, params: JitterBufferParams):
        self.params = params
        self._held: list = []
        self._seq = 0
        self.misses = 0
        self.held_total = 0

    def push(self, event: SpikeEvent, sent_ts: int, now: int, expected_delay: Optional[int] = None) -> int:
        """Buffer ``event`` arriving at tick ``now``; returns its release tick."""
        if expected_delay is None:
            expected_delay = self.params.expected_delay
        arrival = now // TICKS_PER_SYSTEM_CYCLE
        release = jitter_release(arrival, sent_ts, expected_delay) * TICKS_PER_SYSTEM_CYCLE
        if release > now:
            if len(self._held) >= self.params.depth:
                self.misses += 1
                release = now
            else:
                self.held_total += 1
        heapq.heappush(self._held, (release, self._seq, event))
        self._seq += 1
        return release

    def pop_due(self, now: int) -> list[SpikeEvent]:
        out = []
        held = self._held
        while held and held[0][0] <= now:
            out.append(heapq.heappop(held)[2])
        return out

    def next_release(self) -> Optional[int]:
        return self._held[0][0] if self._held else None

    def __len__(self) -> int:
        return len(self._held)


@dataclass(frozen=True, slots=True)
class TraceRecord:
    label: int
    arrived_at: int
    emitted_at: int
    src_node: int = -1
    src_label: int = -1

    @property
    def latency_ticks(self) -> int:
        return self.arrived_at - self.emitted_at


class TraceRecorder:
    """Append-only arrival trace of one receiving chip."""

    def __init__(self) -> None:
        self.records: list[TraceRecord] = []
        self.active = False
        self.rejected = 0

    def record(self, event: SpikeEvent, now: int) -> Optional[TraceRecord]:
        if not self.active:
            self.rejected += 1
            return None
        if self.records and now < self.records[-1].arrived_at:
            raise ValueError("trace records must be appended in arrival order")
        if now < event.emitted_at:
            raise ValueError("spike arrived before it was emitted")
        rec = TraceRecord(event.label, now, event.emitted_at, event.origin_node, event.origin_label)
        self.records.append(rec)
        return rec

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        return trace_csv(self.records)


def trace_csv(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "emitted_ns", "arrived_ns"])
    for r in records:
        w.writerow([r.label, r.emitted_at * TICK_NS, r.arrived_at * TICK_NS])
    return buf.getvalue()


@dataclass(frozen=True)
class ChipParams:
    egress_depth: int = 2
    jitter_depth: int = 64
    # None: derived from the downlink latency (zero-contention chip link delay)
    expected_delay: Optional[int] = None
    jitter_compensation: bool = True

    def __post_init__(self) -> None:
        if self.egress_depth < 1:
            raise ValueError("egress_depth must be >= 1")
        if self.jitter_depth < 1:
            raise ValueError("jitter_depth must be >= 1")


class ChipEndpoint:
    """One chip: sources -> layer-1 egress queue -> uplink; downlink -> jitter buffer -> trace."""

    def __init__(
        self,
        node: int,
        params: ChipParams,
        sources: Sequence[SourceSpec],
        uplink: ChipLink,
        downlink: ChipLink,
        wake: Optional[Callable[[int], None]] = None,
        wake_receive: Optional[Callable[[int], None]] = None,
    ):
        self.node = node
        self.params = params
        self.sources = list(sources)
        self.uplink = uplink
        self.downlink = downlink
        self._wake = wake or (lambda t: None)
        self._wake_rx = wake_receive or self._wake
        expected = params.expected_delay
        if expected is None:
            expected = downlink.params.latency_ticks // TICKS_PER_SYSTEM_CYCLE
        self.jitter = JitterBuffer(JitterBufferParams(expected, params.jitter_depth))
        self.trace = TraceRecorder()
        self.egress: deque = deque()
        self._next_index = [0] * len(self.sources)
        self._due: Optional[int] = None
        self.start_tick: Optional[int] = None
        self.end_tick: Optional[int] = None
        self.generated = 0
        self.egress_drops = 0
        self.first_drop_tick: Optional[int] = None

    # -- send side --------------------------------------------------------
    def start(self, tick: int) -> None:
        """Begin the real-time section at system tick ``tick``."""
        self.start_tick = tick
        self.trace.active = True
        self._due = self._next_due()
        if self._due is not None:
            self._wake(self._due)

    def stop(self, tick: int) -> None:
        self.end_tick = tick

    def _next_due(self) -> Optional[int]:
        if self.start_tick is None:
            return None
        best = None
        for spec, i in zip(self.sources, self._next_index):
            if i < spec.count:
                t = next_system_tick(self.start_tick + spec.due_tick(i))
                if best is None or t < best:
                    best = t
        return best

    def egress_step(self, now: int) -> None:
        due = self._due
        if due is not None and due <= now:
            base = self.start_tick
            for k, spec in enumerate(self.sources):
                i = self._next_index[k]
                while i < spec.count and base + spec.due_tick(i) <= now:
                    self.egress.append(SpikeEvent(spec.label, now, self.node, spec.label))
                    i += 1
                    self.generated += 1
                self._next_index[k] = i
            self._due = due = self._next_due()
            if due is not None:
                self._wake(due)
        q = self.egress
        if q:
            n = min(self.uplink.capacity(now), len(q))
            if n:
                events = [q.popleft() for _ in range(n)]
                group = Layer2Group(tuple((e.label, (now >> 1) & 0xFF) for e in events))
                self.uplink.try_send(group, now, events)
            while len(q) > self.params.egress_depth:
                q.pop()
                self.egress_drops += 1
                if self.first_drop_tick is None:
                    self.first_drop_tick = now
            if q:
                self._wake(now + TICKS_PER_SYSTEM_CYCLE)

    # -- receive side -----------------------------------------------------
    def receive_step(self, now: int) -> None:
        got = self.downlink.poll(now)
        if got is not None:
            group, events = got
            for (label, ts), event in zip(group.entries, events):
                if not self.params.jitter_compensation:
                    ts = (now >> 1) & 0xFF
                    release = self.jitter.push(event, ts, now, expected_delay=0)
                else:
                    release = self.jitter.push(event, ts, now)
                if release > now:
                    self._wake_rx(release)
        for event in self.jitter.pop_due(now):
            if self.end_tick is not None and now >= self.end_tick:
                self.trace.active = False
            self.trace.record(event, now)

    @property
    def in_flight(self) -> int:
        return len(self.egress) + len(self.jitter)
