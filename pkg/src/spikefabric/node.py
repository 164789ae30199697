"""Node-FPGA multi-chip extension.

Outbound: tap the chip's layer-2 stream, drop timestamps, unpack, translate
each 16-bit chip label through the outbound table (enable + 15-bit fabric
label), cross into the MGT domain and transmit one word per MGT cycle.

Inbound: translate received fabric labels through the inbound table
(enable + 16-bit chip label), cross into the system domain, pack up to three
events, stamp the low byte of the system time and merge with the playback
stream onto the chip link.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .codec import BARRIER_REQUEST, COMMAND_FLAG, PAYLOAD_MASK, frame_mgt
from .link import ChipLink, MgtLink
from .types import (
    CHIP_LABEL_BITS,
    FABRIC_LABEL_BITS,
    MAX_GROUP_SIZE,
    TICKS_PER_SYSTEM_CYCLE,
    Layer2Group,
    SpikeEvent,
    WordKind,
)

OUT_ENABLE = 1 << 15
IN_ENABLE = 1 << 16
OUTBOUND_ENTRIES = 1 << CHIP_LABEL_BITS
INBOUND_ENTRIES = 1 << FABRIC_LABEL_BITS


class RealtimeError(RuntimeError):
    """Operation not allowed while a real-time section is running."""


class ProgramError(ValueError):
    """Malformed playback program."""


class OutboundLut:
    """2^16 entries of 16 bits: bit 15 enables routing, bits 14..0 the fabric label."""

    def __init__(self, table: Optional[np.ndarray] = None):
        if table is None:
            table = np.zeros(OUTBOUND_ENTRIES, dtype=np.uint16)
        table = np.asarray(table)
        if table.shape != (OUTBOUND_ENTRIES,):
            raise ValueError(f"outbound table needs {OUTBOUND_ENTRIES} entries, got {table.shape}")
        self.table = table.astype(np.uint16, copy=True)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int]) -> "OutboundLut":
        lut = cls()
        for label, fabric in mapping.items():
            lut.set(label, fabric)
        return lut

    def set(self, label: int, fabric: Optional[int]) -> None:
        if not 0 <= label < OUTBOUND_ENTRIES:
            raise ValueError(f"chip label out of range: {label}")
        if fabric is None:
            self.table[label] = 0
            return
        if not 0 <= fabric < INBOUND_ENTRIES:
            raise ValueError(f"fabric label out of range: {fabric}")
        self.table[label] = OUT_ENABLE | fabric

    def lookup(self, label: int) -> Optional[int]:
        v = int(self.table[label])
        return v & PAYLOAD_MASK if v & OUT_ENABLE else None

    def enabled(self) -> dict[int, int]:
        idx = np.flatnonzero(self.table & OUT_ENABLE)
        return {int(i): int(self.table[i]) & PAYLOAD_MASK for i in idx}

    def __eq__(self, other) -> bool:
        return isinstance(other, OutboundLut) and np.array_equal(self.table, other.table)


class InboundLut:
    """2^15 entries of 17 bits: bit 16 enables delivery, bits 15..0 the chip label."""

    def __init__(self, table: Optional[np.ndarray] = None):
        if table is None:
            table = np.zeros(INBOUND_ENTRIES, dtype=np.uint32)
        table = np.asarray(table)
        if table.shape != (INBOUND_ENTRIES,):
            raise ValueError(f"inbound table needs {INBOUND_ENTRIES} entries, got {table.shape}")
        if table.size and int(table.max()) >= 1 << 17:
            raise ValueError("inbound entries are 17 bits wide")
        self.table = table.astype(np.uint32, copy=True)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int]) -> "InboundLut":
        lut = cls()
        for fabric, label in mapping.items():
            lut.set(fabric, label)
        return lut

    def set(self, fabric: int, label: Optional[int]) -> None:
        if not 0 <= fabric < INBOUND_ENTRIES:
            raise ValueError(f"fabric label out of range: {fabric}")
        if label is None:
            self.table[fabric] = 0
            return
        if not 0 <= label < OUTBOUND_ENTRIES:
            raise ValueError(f"chip label out of range: {label}")
        self.table[fabric] = IN_ENABLE | label

    def lookup(self, fabric: int) -> Optional[int]:
        v = int(self.table[fabric])
        return v & 0xFFFF if v & IN_ENABLE else None

    def enabled(self) -> dict[int, int]:
        idx = np.flatnonzero(self.table & IN_ENABLE)
        return {int(i): int(self.table[i]) & 0xFFFF for i in idx}

    def __eq__(self, other) -> bool:
        return isinstance(other, InboundLut) and np.array_equal(self.table, other.table)


@dataclass(frozen=True)
class NodeParams:
    cdc_out_cycles: int = 5  # system cycles, system -> MGT domain
    cdc_in_cycles: int = 5  # system cycles, MGT -> system domain
    lut_pipeline_cycles: int = 6  # MGT cycles, each direction
    pack_latency_cycles: int = 3  # system cycles
    pack_window_cycles: int = 1  # system cycles a partial group may wait for company
    egress_depth: int = 16
    ingress_depth: int = 16
    playback_priority: bool = True

    def __post_init__(self) -> None:
        for name in ("cdc_out_cycles", "cdc_in_cycles", "lut_pipeline_cycles",
                     "pack_latency_cycles", "pack_window_cycles"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.egress_depth < 1 or self.ingress_depth < 1:
            raise ValueError("queue depths must be >= 1")

    @property
    def outbound_ticks(self) -> int:
        return TICKS_PER_SYSTEM_CYCLE * self.cdc_out_cycles + self.lut_pipeline_cycles

    def inbound_ready(self, arrival_tick: int) -> int:
        """Tick at which a word received at ``arrival_tick`` reaches the packer queue."""
        t = arrival_tick + self.lut_pipeline_cycles
        t += t & 1
        return t + TICKS_PER_SYSTEM_CYCLE * (self.cdc_in_cycles + self.pack_latency_cycles)


@dataclass(frozen=True)
class BarrierSync:
    pass


@dataclass(frozen=True)
class EmitSpikes:
    at: int  # system cycles after the synchronized start
    group: Layer2Group


@dataclass(frozen=True)
class EndOfRealtime:
    at: int


PlaybackCommand = Union[BarrierSync, EmitSpikes, EndOfRealtime]


@dataclass(frozen=True)
class PlaybackProgram:
    commands: tuple[PlaybackCommand, ...] = field(default_factory=lambda: (BarrierSync(),))

    def __post_init__(self) -> None:
        cmds = self.commands
        if not cmds or not isinstance(cmds[0], BarrierSync):
            raise ProgramError("a playback program starts with exactly one BarrierSync")
        last = 0
        for i, c in enumerate(cmds[1:], start=1):
            if isinstance(c, BarrierSync):
                raise ProgramError(f"command {i}: only one BarrierSync is allowed")
            if not isinstance(c, (EmitSpikes, EndOfRealtime)):
                raise ProgramError(f"command {i}: unknown command {c!r}")
            if c.at < last:
                raise ProgramError(f"command {i}: timestamps must be non-decreasing")
            last = c.at
            if isinstance(c, EndOfRealtime) and i != len(cmds) - 1:
                raise ProgramError("EndOfRealtime must be the last command")

    @property
    def end_of_realtime(self) -> Optional[int]:
        last = self.commands[-1]
        return last.at if isinstance(last, EndOfRealtime) else None


class Node:
    def __init__(
        self,
        index: int,
        params: NodeParams,
        chip_up: ChipLink,
        chip_down: ChipLink,
        mgt_up: MgtLink,
        mgt_down: MgtLink,
        outbound: Optional[OutboundLut] = None,
        inbound: Optional[InboundLut] = None,
        wake: Optional[Callable[[int], None]] = None,
        wake_inbound: Optional[Callable[[int], None]] = None,
    ):
        self.index = index
        self.params = params
        self.chip_up = chip_up
        self.chip_down = chip_down
        self.mgt_up = mgt_up
        self.mgt_down = mgt_down
        self.outbound = outbound or OutboundLut()
        self.inbound = inbound or InboundLut()
        # outbound and inbound halves may be scheduled separately
        self._wake = wake or (lambda t: None)
        self._wake_in = wake_inbound or self._wake
        self.realtime = False

        self._out_pipe: deque = deque()  # (ready, word, meta)
        self.egress: deque = deque()  # (word, meta)
        self._in_pipe: deque = deque()  # (ready, label, event)
        self.ingress: deque = deque()  # (ready, label, event)
        self._playback_q: deque = deque()  # (due, label, event)

        self.program: Optional[PlaybackProgram] = None
        self.waiting_for_sync = False
        self.start_tick: Optional[int] = None
        self.end_tick: Optional[int] = None

        self.tapped = 0
        self.filtered_out = 0
        self.words_sent = 0
        self.egress_drops = 0
        self.egress_stalls = 0
        self.received = 0
        self.filtered_in = 0
        self.commands_in = 0
        self.ingress_drops = 0
        self.ingress_stalls = 0
        self.chip_events = 0
        self.playback_sent = 0
        self.fpga_latencies: list[int] = []
        self.first_backlog_tick: Optional[int] = None
        self.first_drop_tick: Optional[int] = None

    # -- configuration ----------------------------------------------------
    def configure_luts(self, outbound: OutboundLut, inbound: InboundLut) -> None:
        if self.realtime:
            raise RealtimeError(f"node {self.index}: tables cannot change during a real-time section")
        if not isinstance(outbound, OutboundLut) or not isinstance(inbound, InboundLut):
            raise TypeError("expected OutboundLut and InboundLut")
        self.outbound, self.inbound = outbound, inbound

    def load_program(self, program: PlaybackProgram) -> None:
        if self.realtime:
            raise RealtimeError("cannot load a program during a real-time section")
        if not isinstance(program, PlaybackProgram):
            raise ProgramError("not a playback program")
        self.program = program

    # -- playback ---------------------------------------------------------
    def begin_playback(self, now: int) -> None:
        """Execute the program's BarrierSync: send the request and halt."""
        if self.program is None:
            raise ProgramError(f"node {self.index} has no playback program")
        self.egress.append((frame_mgt(WordKind.COMMAND, BARRIER_REQUEST), None))
        self.waiting_for_sync = True
        self._wake(now)

    def on_sync(self, start_tick: int) -> None:
        """External sync observed; the real-time section starts at ``start_tick``."""
        self.waiting_for_sync = False
        self.start_realtime(start_tick)

    def start_realtime(self, start_tick: int) -> None:
        self.realtime = True
        self.start_tick = start_tick
        if self.program is None:
            return
        for c in self.program.commands[1:]:
            due = start_tick + TICKS_PER_SYSTEM_CYCLE * c.at
            if isinstance(c, EmitSpikes):
                for label, _ in c.group.entries:
                    self._playback_q.append((due, label, SpikeEvent(label, due, self.index, label)))
                self._wake_in(due)
            else:
                self.end_tick = due

    # -- outbound ---------------------------------------------------------
    def tap_step(self, now: int) -> None:
        got = self.chip_up.poll(now)
        if got is None:
            return
        group, events = got
        ready = now + self.params.outbound_ticks
        lut = self.outbound.table
        for (label, _ts), event in zip(group.entries, events):
            self.tapped += 1
            v = int(lut[label])
            if v & OUT_ENABLE:
                ev = SpikeEvent(event.label, event.emitted_at, event.origin_node, event.origin_label, now)
                self._out_pipe.append((ready, v & PAYLOAD_MASK, ev))
            else:
                self.filtered_out += 1
        self._wake(ready)

    def outbound_step(self, now: int) -> None:
        pipe, q = self._out_pipe, self.egress
        while pipe and pipe[0][0] <= now:
            _, word, meta = pipe.popleft()
            if len(q) >= self.params.egress_depth:
                self.egress_drops += 1
                if self.first_drop_tick is None:
                    self.first_drop_tick = now
            else:
                q.append((word, meta))
        if q:
            word, meta = q[0]
            if self.mgt_up.try_send(word, now, meta):
                q.popleft()
                self.words_sent += 1
            else:
                self.egress_stalls += 1
                if self.first_backlog_tick is None:
                    self.first_backlog_tick = now
            if q:
                self._wake(now + 1)

    # -- inbound ----------------------------------------------------------
    def receive_step(self, now: int) -> None:
        got = self.mgt_down.poll(now)
        if got is None:
            return
        word, event = got
        if word & COMMAND_FLAG:
            self.commands_in += 1
            return
        self.received += 1
        v = int(self.inbound.table[word & PAYLOAD_MASK])
        if not v & IN_ENABLE:
            self.filtered_in += 1
            return
        ready = self.params.inbound_ready(now)
        self._in_pipe.append((ready, v & 0xFFFF, event))
        self._wake_in(ready)

    def inbound_step(self, now: int) -> None:
        pipe, q = self._in_pipe, self.ingress
        while pipe and pipe[0][0] <= now:
            item = pipe.popleft()
            if len(q) >= self.params.ingress_depth:
                self.ingress_drops += 1
                if self.first_drop_tick is None:
                    self.first_drop_tick = now
            else:
                q.append(item)

        pb = self._playback_q
        pb_due = bool(pb) and pb[0][0] <= now
        if not q and not pb_due:
            return
        cap = min(self.chip_down.capacity(now), MAX_GROUP_SIZE)
        window = TICKS_PER_SYSTEM_CYCLE * self.params.pack_window_cycles
        routed_go = bool(q) and (len(q) >= MAX_GROUP_SIZE or q[0][0] + window <= now)

        picked: list[tuple[int, SpikeEvent, bool]] = []

        def take_playback() -> None:
            while pb and pb[0][0] <= now and len(picked) < cap:
                _, label, ev = pb.popleft()
                picked.append((label, ev, False))

        def take_routed() -> None:
            while q and len(picked) < cap:
                _, label, ev = q.popleft()
                picked.append((label, ev, True))

        if self.params.playback_priority:
            take_playback()
            if routed_go or picked:
                take_routed()
        else:
            if routed_go or pb_due:
                take_routed()
            take_playback()

        if picked:
            ts = (now >> 1) & 0xFF
            group = Layer2Group(tuple((label, ts) for label, _, _ in picked))
            events = []
            for label, ev, routed in picked:
                if routed:
                    if ev.label != label:
                        ev = SpikeEvent(label, ev.emitted_at, ev.origin_node, ev.origin_label, ev.tapped_at)
                    self.chip_events += 1
                    self.fpga_latencies.append(now - ev.tapped_at)
                else:
                    self.playback_sent += 1
                events.append(ev)
            if not self.chip_down.try_send(group, now, events):
                raise RuntimeError("chip link refused a group sized to its capacity")
        if q and routed_go:
            self.ingress_stalls += 1
            if self.first_backlog_tick is None:
                self.first_backlog_tick = now
        if q or pb:
            nxt = now + TICKS_PER_SYSTEM_CYCLE
            if not q and pb:
                nxt = max(nxt, pb[0][0])
            self._wake_in(nxt)

    @property
    def in_flight(self) -> int:
        return (len(self._out_pipe) + sum(1 for w, m in self.egress if m is not None)
                + len(self._in_pipe) + len(self.ingress))
