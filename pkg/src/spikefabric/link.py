"""Unidirectional serial lanes.

:class:`MgtLink` models a Node<->Aggregator transceiver lane: fixed transport
latency, one 16-bit word per MGT cycle (one base tick) and periodic
clock-compensation (CC) pauses. The pause schedule is free running: after the
first ``cc_interval`` cycles, the first ``cc_length`` cycles of every
``cc_interval``-cycle window carry no payload.

:class:`ChipLink` models the layer-2 chip link: one group of up to three
events per system cycle, sustained rate capped by a token bucket.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .types import MAX_GROUP_SIZE, TICKS_PER_SYSTEM_CYCLE, Layer2Group

Wake = Optional[Callable[[int], None]]


class LinkContractError(RuntimeError):
    """A sender broke the one-injection-per-cycle contract."""


@dataclass(frozen=True)
class LinkParams:
    latency_ticks: int = 37
    cc_interval: Optional[int] = 5000
    cc_length: int = 2

    def __post_init__(self) -> None:
        if self.latency_ticks < 1:
            raise ValueError("latency_ticks must be >= 1")
        if self.cc_interval is not None:
            if self.cc_interval < 1 or self.cc_length < 1:
                raise ValueError("cc_interval and cc_length must be >= 1")
            if self.cc_length >= self.cc_interval:
                raise ValueError("cc_length must be shorter than cc_interval")

    @property
    def payload_fraction(self) -> float:
        if self.cc_interval is None:
            return 1.0
        return 1.0 - self.cc_length / self.cc_interval


class MgtLink:
    def __init__(self, params: LinkParams = LinkParams(), name: str = "", wake: Wake = None):
        self.params = params
        self.name = name
        self._wake = wake
        self._inflight: deque = deque()
        self._last_send = -1
        self.accepted = 0
        self.delivered = 0
        self.backpressured = 0

    def is_pause(self, now: int) -> bool:
        p = self.params
        if p.cc_interval is None or now < p.cc_interval:
            return False
        return now % p.cc_interval < p.cc_length

    def try_send(self, word: int, now: int, meta: Any = None) -> bool:
        """Offer ``word`` at MGT cycle ``now``; ``False`` means retry next cycle."""
        if now <= self._last_send:
            raise LinkContractError(f"{self.name}: second injection at tick {now}")
        self._last_send = now
        if self.is_pause(now):
            self.backpressured += 1
            return False
        deliver_at = now + self.params.latency_ticks
        self._inflight.append((deliver_at, word, meta))
        self.accepted += 1
        if self._wake is not None:
            self._wake(deliver_at)
        return True

    def poll(self, now: int) -> Optional[tuple[int, Any]]:
        """Return ``(word, meta)`` delivered at ``now``, or ``None``."""
        q = self._inflight
        if q and q[0][0] <= now:
            deliver_at, word, meta = q.popleft()
            if deliver_at != now:
                raise LinkContractError(f"{self.name}: delivery at {deliver_at} polled late at {now}")
            self.delivered += 1
            return word, meta
        return None

    @property
    def in_flight(self) -> int:
        return len(self._inflight)

    @property
    def in_flight_events(self) -> int:
        """In-flight words that carry a spike (commands travel with ``meta=None``)."""
        return sum(1 for _, _, meta in self._inflight if meta is not None)


@dataclass(frozen=True)
class ChipLinkParams:
    latency_ticks: int = 62
    burst: int = MAX_GROUP_SIZE
    refill_per_cycle: int = 2

    def __post_init__(self) -> None:
        if self.latency_ticks < 2 or self.latency_ticks % TICKS_PER_SYSTEM_CYCLE:
            raise ValueError("chip link latency must be a positive whole number of system cycles")
        if not 1 <= self.burst <= MAX_GROUP_SIZE:
            raise ValueError("burst must be in 1..3")
        if not 1 <= self.refill_per_cycle <= self.burst:
            raise ValueError("refill must be in 1..burst")


class ChipLink:
    """Layer-2 link between a chip and its Node-FPGA (one direction)."""

    def __init__(self, params: ChipLinkParams = ChipLinkParams(), name: str = "", wake: Wake = None):
        self.params = params
        self.name = name
        self._wake = wake
        self._inflight: deque = deque()
        self._tokens = params.burst
        self._token_cycle = 0
        self._last_send = -1
        self.groups_sent = 0
        self.events_sent = 0
        self.delivered_groups = 0

    def _refill(self, now: int) -> None:
        cycle = now // TICKS_PER_SYSTEM_CYCLE
        if cycle > self._token_cycle:
            p = self.params
            self._tokens = min(p.burst, self._tokens + p.refill_per_cycle * (cycle - self._token_cycle))
            self._token_cycle = cycle

    def capacity(self, now: int) -> int:
        """Number of events that may be sent in the system cycle at ``now``."""
        if now % TICKS_PER_SYSTEM_CYCLE or now <= self._last_send:
            return 0
        self._refill(now)
        return self._tokens

    def try_send(self, group: Layer2Group, now: int, meta: Any = None) -> bool:
        if now % TICKS_PER_SYSTEM_CYCLE:
            raise LinkContractError(f"{self.name}: chip link only sends on system ticks ({now})")
        if now <= self._last_send:
            raise LinkContractError(f"{self.name}: second group at tick {now}")
        self._refill(now)
        if len(group) > self._tokens:
            return False
        self._last_send = now
        self._tokens -= len(group)
        deliver_at = now + self.params.latency_ticks
        self._inflight.append((deliver_at, group, meta))
        self.groups_sent += 1
        self.events_sent += len(group)
        if self._wake is not None:
            self._wake(deliver_at)
        return True

    def poll(self, now: int) -> Optional[tuple[Layer2Group, Any]]:
        q = self._inflight
        if q and q[0][0] <= now:
            deliver_at, group, meta = q.popleft()
            if deliver_at != now:
                raise LinkContractError(f"{self.name}: delivery at {deliver_at} polled late at {now}")
            self.delivered_groups += 1
            return group, meta
        return None

    @property
    def in_flight_events(self) -> int:
        return sum(len(g) for _, g, _ in self._inflight)
