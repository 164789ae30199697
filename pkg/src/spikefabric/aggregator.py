"""Central Aggregator: all-to-all event broadcast under a route-enable matrix
with per-output round-robin arbitration, plus the barrier state machine that
drives the out-of-band synchronization signal."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .codec import BARRIER_REQUEST, COMMAND_FLAG, PAYLOAD_MASK
from .link import MgtLink
from .types import MAX_NODES, TICKS_PER_SYSTEM_CYCLE


class RouteMatrix:
    """``enable[src, dst]``: events from node ``src`` are forwarded to ``dst``."""

    def __init__(self, enable):
        enable = np.asarray(enable, dtype=bool)
        if enable.ndim != 2 or enable.shape[0] != enable.shape[1]:
            raise ValueError(f"route matrix must be square, got shape {enable.shape}")
        if not 1 <= enable.shape[0] <= MAX_NODES:
            raise ValueError(f"route matrix supports 1..{MAX_NODES} nodes")
        self.enable = enable.copy()

    @classmethod
    def empty(cls, n: int) -> "RouteMatrix":
        return cls(np.zeros((n, n), dtype=bool))

    @classmethod
    def full(cls, n: int) -> "RouteMatrix":
        return cls(np.ones((n, n), dtype=bool))

    @property
    def size(self) -> int:
        return self.enable.shape[0]

    def destinations(self, src: int) -> list[int]:
        return [int(d) for d in np.flatnonzero(self.enable[src])]

    def __eq__(self, other) -> bool:
        return isinstance(other, RouteMatrix) and np.array_equal(self.enable, other.enable)


class BarrierState(enum.Enum):
    IDLE = "idle"
    COLLECTING = "collecting"
    FIRE = "fire"
    REFRACTORY = "refractory"


@dataclass(frozen=True)
class BarrierParams:
    participants: Optional[frozenset[int]] = None  # None: every node
    timeout_cycles: int = 1000
    refractory_cycles: int = 100
    sync_delay_cycles: int = 2
    skew: tuple[int, ...] = ()  # extra per-node distribution delay, 0 or 1 cycle

    def __post_init__(self) -> None:
        if self.participants is not None and not self.participants:
            raise ValueError("barrier needs at least one participant")
        if self.timeout_cycles < 0 or self.refractory_cycles < 0 or self.sync_delay_cycles < 0:
            raise ValueError("barrier periods must be >= 0")
        if any(s not in (0, 1) for s in self.skew):
            raise ValueError("per-node sync skew must be 0 or 1 system cycle")


class BarrierFsm:
    """Barrier synchronization state machine, stepped once per system cycle.

    Within one cycle, timers expire first, then that cycle's requests are
    applied, then completion or timeout is evaluated. A request arriving on
    the very cycle the timeout elapses still completes the barrier.
    """

    def __init__(self, participants: Iterable[int], timeout_cycles: int, refractory_cycles: int):
        self.participants = frozenset(participants)
        if not self.participants:
            raise ValueError("barrier needs at least one participant")
        self.timeout_cycles = timeout_cycles
        self.refractory_cycles = refractory_cycles
        self.state = BarrierState.IDLE
        self.pending: set[int] = set()
        self.collect_start: Optional[int] = None
        self.refractory_until: Optional[int] = None
        self.fires: list[int] = []
        self.timeouts: list[int] = []
        self.ignored = 0
        self.duplicates = 0
        self.last_cycle: Optional[int] = None

    def step(self, cycle: int, requests: Iterable[int] = ()) -> bool:
        """Advance to ``cycle`` applying ``requests``; returns the sync signal level."""
        if self.last_cycle is not None and cycle <= self.last_cycle:
            raise ValueError("barrier cycles must increase")
        self.last_cycle = cycle
        requests = list(requests)

        if self.state is BarrierState.FIRE:
            self.state = BarrierState.REFRACTORY
            self.refractory_until = self.fires[-1] + 1 + self.refractory_cycles
        if self.state is BarrierState.REFRACTORY and cycle >= self.refractory_until:
            self.state = BarrierState.IDLE
            self.refractory_until = None

        if self.state is BarrierState.REFRACTORY:
            self.ignored += len(requests)
            return False

        for node in requests:
            if node not in self.participants:
                self.ignored += 1
                continue
            if self.state is BarrierState.IDLE:
                self.state = BarrierState.COLLECTING
                self.collect_start = cycle
                self.pending = set(self.participants)
            if node in self.pending:
                self.pending.discard(node)
            else:
                self.duplicates += 1

        if self.state is BarrierState.COLLECTING:
            if not self.pending:
                self.state = BarrierState.FIRE
                self.fires.append(cycle)
                self.collect_start = None
                return True
            if cycle - self.collect_start >= self.timeout_cycles:
                self.timeouts.append(cycle)
                self.state = BarrierState.REFRACTORY
                self.refractory_until = cycle + self.refractory_cycles
                self.pending = set()
                self.collect_start = None
        return False

    @property
    def idle(self) -> bool:
        return self.state is BarrierState.IDLE


def distribute_sync(fire_cycle: int, node_count: int, delay_cycles: int = 0,
                    skew: Sequence[int] = ()) -> list[int]:
    """Real-time start tick observed by each node for a sync pulse at ``fire_cycle``."""
    skew = list(skew) + [0] * (node_count - len(skew))
    if any(s not in (0, 1) for s in skew):
        raise ValueError("per-node sync skew must be 0 or 1 system cycle")
    return [(fire_cycle + delay_cycles + skew[n]) * TICKS_PER_SYSTEM_CYCLE for n in range(node_count)]


@dataclass(frozen=True)
class AggregatorParams:
    cdc_cycles: int = 18  # MGT cycles, both clock-domain crossings together
    pipeline_cycles: int = 5  # MGT cycles of routing/arbitration pipeline
    queue_depth: int = 16  # words per output lane
    barrier: BarrierParams = field(default_factory=BarrierParams)

    def __post_init__(self) -> None:
        if self.cdc_cycles < 0 or self.pipeline_cycles < 0:
            raise ValueError("aggregator latencies must be >= 0")
        if self.queue_depth < 1:
            raise ValueError("queue_depth must be >= 1")

    @property
    def traversal_ticks(self) -> int:
        return self.cdc_cycles + self.pipeline_cycles


class Aggregator:
    def __init__(
        self,
        params: AggregatorParams,
        routes: RouteMatrix,
        uplinks: Sequence[MgtLink],
        downlinks: Sequence[MgtLink],
        wake: Optional[Callable[[int], None]] = None,
        on_fire: Optional[Callable[[int], None]] = None,
    ):
        n = routes.size
        if len(uplinks) != n or len(downlinks) != n:
            raise ValueError("one up- and one downlink per node")
        self.params = params
        self.routes = routes
        self.uplinks = list(uplinks)
        self.downlinks = list(downlinks)
        self.n = n
        self._wake = wake or (lambda t: None)
        self._on_fire = on_fire
        self._dests = [routes.destinations(s) for s in range(n)]
        self._rx: deque = deque()  # (ready, src, word, meta)
        self._voq = [[deque() for _ in range(n)] for _ in range(n)]  # [dst][src]
        self._occ = [0] * n
        self._rr = [n - 1] * n
        self._busy: set[int] = set()
        self._requests: list[int] = []

        bp = params.barrier
        participants = bp.participants if bp.participants is not None else range(n)
        self.barrier = BarrierFsm(participants, bp.timeout_cycles, bp.refractory_cycles)

        self.events_in = 0
        self.commands_in = 0
        self.unknown_commands = 0
        self.copies = 0
        self.unrouted = 0
        self.drops = [0] * n
        self.sent = [0] * n
        self.stalls = [0] * n
        self.max_occupancy = [0] * n
        self.first_backlog_tick: list[Optional[int]] = [None] * n
        self.first_drop_tick: list[Optional[int]] = [None] * n

    def step(self, now: int) -> None:
        lat = self.params.traversal_ticks
        for src, link in enumerate(self.uplinks):
            got = link.poll(now)
            if got is not None:
                self._rx.append((now + lat, src, got[0], got[1]))
                self._wake(now + lat)

        rx = self._rx
        depth = self.params.queue_depth
        while rx and rx[0][0] <= now:
            _, src, word, meta = rx.popleft()
            if word & COMMAND_FLAG:
                self.commands_in += 1
                if word & PAYLOAD_MASK == BARRIER_REQUEST:
                    self._requests.append(src)
                else:
                    self.unknown_commands += 1
                continue
            self.events_in += 1
            dests = self._dests[src]
            if not dests:
                self.unrouted += 1
            for d in dests:
                self.copies += 1
                if self._occ[d] >= depth:
                    self.drops[d] += 1
                    if self.first_drop_tick[d] is None:
                        self.first_drop_tick[d] = now
                    continue
                self._voq[d][src].append((word, meta))
                self._occ[d] += 1
                if self._occ[d] > self.max_occupancy[d]:
                    self.max_occupancy[d] = self._occ[d]
                self._busy.add(d)

        if self._busy:
            for d in sorted(self._busy):
                self._arbitrate(d, now)
            if self._busy:
                self._wake(now + 1)

        if now % TICKS_PER_SYSTEM_CYCLE == 0 and (self._requests or not self.barrier.idle):
            reqs, self._requests = self._requests, []
            if self.barrier.step(now // TICKS_PER_SYSTEM_CYCLE, reqs) and self._on_fire:
                self._on_fire(now // TICKS_PER_SYSTEM_CYCLE)
            if not self.barrier.idle:
                self._wake(now + TICKS_PER_SYSTEM_CYCLE)
        elif self._requests:
            self._wake(now + 1)

    def _arbitrate(self, d: int, now: int) -> None:
        voq = self._voq[d]
        n = self.n
        start = self._rr[d]
        for k in range(1, n + 1):
            src = (start + k) % n
            if voq[src]:
                word, meta = voq[src][0]
                if self.downlinks[d].try_send(word, now, meta):
                    voq[src].popleft()
                    self._occ[d] -= 1
                    self.sent[d] += 1
                    self._rr[d] = src
                else:
                    self.stalls[d] += 1
                break
        if self._occ[d]:
            if self.first_backlog_tick[d] is None:
                self.first_backlog_tick[d] = now
        else:
            self._busy.discard(d)

    @property
    def in_flight(self) -> int:
        return sum(1 for item in self._rx if not item[2] & COMMAND_FLAG) + sum(self._occ)
