"""Shared value types for the spike fabric: labels, timestamps, words, node ids.

Time is counted in base ticks of 4 ns. The MGT user clock (250 MHz) advances
every tick, the FPGA system clock (125 MHz) on every even tick.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

TICK_NS = 4
TICKS_PER_SYSTEM_CYCLE = 2
SYSTEM_CYCLE_NS = TICK_NS * TICKS_PER_SYSTEM_CYCLE

CHIP_LABEL_BITS = 16
FABRIC_LABEL_BITS = 15
TIMESTAMP_BITS = 8
MAX_NODES = 16
MAX_GROUP_SIZE = 3


class _BoundedInt(int):
    """int subclass that refuses values outside ``[0, 2**bits)``."""

    bits: int = 0

    def __new__(cls, value: int):
        value = int(value)
        if not 0 <= value < (1 << cls.bits):
            raise ValueError(
                f"{cls.__name__} must be in [0, {(1 << cls.bits) - 1}], got {value}"
            )
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({int(self)})"


class ChipLabel(_BoundedInt):
    """16-bit spike label in the address space of one chip."""

    bits = CHIP_LABEL_BITS


class FabricLabel(_BoundedInt):
    """15-bit spike label carried on the Aggregator links."""

    bits = FABRIC_LABEL_BITS


class Timestamp8(_BoundedInt):
    """Low eight bits of the system-clock cycle counter."""

    bits = TIMESTAMP_BITS


class NodeId(int):
    def __new__(cls, value: int, node_count: int = MAX_NODES):
        value = int(value)
        if not 1 <= node_count <= MAX_NODES:
            raise ValueError(f"node count must be in [1, {MAX_NODES}], got {node_count}")
        if not 0 <= value < node_count:
            raise ValueError(f"node id {value} outside [0, {node_count - 1}]")
        return super().__new__(cls, value)


def is_system_tick(ticks: int) -> bool:
    return ticks % TICKS_PER_SYSTEM_CYCLE == 0


def next_system_tick(ticks: int) -> int:
    """First system-clock tick at or after ``ticks``."""
    return ticks + (ticks & 1)


def system_time_low8(ticks: int) -> Timestamp8:
    """Low eight bits of the system cycle count at base tick ``ticks``."""
    if ticks < 0:
        raise ValueError("simulation time is non-negative")
    return Timestamp8((ticks // TICKS_PER_SYSTEM_CYCLE) % 256)


def ticks_to_ns(ticks: int) -> int:
    return ticks * TICK_NS


@dataclass(frozen=True, slots=True)
class SpikeEvent:
    """A spike in flight.

    Only ``label`` travels on the wire. ``emitted_at`` and the origin fields
    are out-of-band metadata used for latency measurement and bookkeeping;
    ``tapped_at`` is filled in when the sending Node-FPGA picks the event up.
    """

    label: int
    emitted_at: int
    origin_node: int = -1
    origin_label: int = -1
    tapped_at: int = -1

    def __post_init__(self) -> None:
        if not 0 <= self.label < (1 << CHIP_LABEL_BITS):
            raise ValueError(f"chip label out of range: {self.label}")
        if self.emitted_at < 0:
            raise ValueError("emitted_at must be non-negative")


class WordKind(enum.Enum):
    EVENT = "event"
    COMMAND = "command"
    PAUSE = "pause"


@dataclass(frozen=True, slots=True)
class MgtWord:
    """One 16-bit transfer on a Node/Aggregator link (or a CC pause slot)."""

    kind: WordKind
    payload: int = 0

    def __post_init__(self) -> None:
        if self.kind is WordKind.PAUSE:
            if self.payload != 0:
                raise ValueError("pause words carry no payload")
        elif not 0 <= self.payload < (1 << FABRIC_LABEL_BITS):
            raise ValueError(f"payload must fit in 15 bits, got {self.payload}")

    @classmethod
    def event(cls, label: int) -> "MgtWord":
        return cls(WordKind.EVENT, int(label))

    @classmethod
    def command(cls, code: int) -> "MgtWord":
        return cls(WordKind.COMMAND, int(code))

    @classmethod
    def pause(cls) -> "MgtWord":
        return cls(WordKind.PAUSE)


@dataclass(frozen=True)
class Layer2Group:
    """Chip-link transfer unit: one to three (chip label, timestamp) pairs."""

    entries: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        n = len(self.entries)
        if not 1 <= n <= MAX_GROUP_SIZE:
            raise ValueError(f"layer-2 group holds 1..{MAX_GROUP_SIZE} entries, got {n}")
        for label, ts in self.entries:
            if not (0 <= label < 1 << CHIP_LABEL_BITS and 0 <= ts < 1 << TIMESTAMP_BITS):
                raise ValueError(f"bad layer-2 entry ({label}, {ts})")

    def __len__(self) -> int:
        return len(self.entries)
