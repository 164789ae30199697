"""Wire formats: layer-2 groups, MGT word framing and the 8b10b line code.

MGT word layout (16 bit)::

    bit 15      discriminator: 0 = event, 1 = command
    bits 14..0  payload (fabric label or command code)

8b10b code groups are written ``abcdei fghj`` with ``a`` as bit 9, which is
also the first bit on the line.
"""

from __future__ import annotations

import re

from dataclasses import dataclass
from typing import Iterable, Sequence

from .types import (
    FABRIC_LABEL_BITS,
    MAX_GROUP_SIZE,
    ChipLabel,
    Layer2Group,
    MgtWord,
    Timestamp8,
    WordKind,
)

BARRIER_REQUEST = 0x0001
NOOP = 0x7FFF
COMMAND_FLAG = 1 << 15
PAYLOAD_MASK = (1 << FABRIC_LABEL_BITS) - 1


class CodecError(ValueError):
    pass


class InvalidSymbolError(CodecError):
    """10-bit group that is not a code group under either disparity."""


class DisparityError(CodecError):
    """Valid code group, but not for the current running disparity."""


def pack_layer2(events: Sequence[tuple[int, int]]) -> Layer2Group:
    if not 1 <= len(events) <= MAX_GROUP_SIZE:
        raise CodecError(f"a layer-2 group takes 1..{MAX_GROUP_SIZE} events, got {len(events)}")
    return Layer2Group(tuple((ChipLabel(l), Timestamp8(t)) for l, t in events))


def unpack_layer2(group: Layer2Group) -> list[tuple[int, int]]:
    return [(int(l), int(t)) for l, t in group.entries]


def frame_mgt(kind: WordKind | str, payload: int) -> int:
    kind = WordKind(kind)
    if kind is WordKind.PAUSE:
        raise CodecError("pause slots are not framed")
    if not 0 <= payload <= PAYLOAD_MASK:
        raise CodecError(f"payload {payload:#x} does not fit in 15 bits")
    return (COMMAND_FLAG if kind is WordKind.COMMAND else 0) | payload


def deframe_mgt(word: int) -> MgtWord:
    if not 0 <= word <= 0xFFFF:
        raise CodecError(f"not a 16-bit word: {word}")
    kind = WordKind.COMMAND if word & COMMAND_FLAG else WordKind.EVENT
    return MgtWord(kind, word & PAYLOAD_MASK)


def frame_word(word: MgtWord) -> int:
    return frame_mgt(word.kind, word.payload)


# --- 8b10b ---------------------------------------------------------------

# 5b/6b codes (abcdei) for running disparity -1.
_6B_RD_MINUS = [
    0b100111, 0b011101, 0b101101, 0b110001, 0b110101, 0b101001, 0b011001, 0b111000,
    0b111001, 0b100101, 0b010101, 0b110100, 0b001101, 0b101100, 0b011100, 0b010111,
    0b011011, 0b100011, 0b010011, 0b110010, 0b001011, 0b101010, 0b011010, 0b111010,
    0b110011, 0b100110, 0b010110, 0b110110, 0b001110, 0b101110, 0b011110, 0b101011,
]
# 3b/4b codes (fghj) for running disparity -1; index 7 is the primary D.x.P7.
_4B_RD_MINUS = [0b1011, 0b1001, 0b0101, 0b1100, 0b1101, 0b1010, 0b0110, 0b1110]
_4B_K_RD_MINUS = [0b1011, 0b0110, 0b1010, 0b1100, 0b1101, 0b0101, 0b1001, 0b0111]
_A7_RD_MINUS = 0b0111
_K28_6B_RD_MINUS = 0b001111

K_CODES = frozenset(
    [(7 << 5 | 23), (7 << 5 | 27), (7 << 5 | 29), (7 << 5 | 30)]
    + [(y << 5) | 28 for y in range(8)]
)


def K(x: int, y: int) -> int:
    return (y << 5) | x


def D(x: int, y: int) -> int:
    return (y << 5) | x


def _ones(value: int) -> int:
    return bin(value).count("1")


def _alternate(code: int, bits: int) -> int:
    """Code for RD +1 given the RD -1 code: complement unless already balanced."""
    return code if 2 * _ones(code) == bits else code ^ ((1 << bits) - 1)


def _after(rd: int, code: int, bits: int) -> int:
    diff = 2 * _ones(code) - bits
    if diff == 0:
        return rd
    return 1 if diff > 0 else -1


@dataclass(frozen=True, slots=True)
class Symbol10b:
    bits: int
    is_control: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.bits < 1024:
            raise CodecError(f"not a 10-bit value: {self.bits}")

    def bitstring(self) -> str:
        return format(self.bits, "010b")


def _check_rd(rd: int) -> None:
    if rd not in (-1, 1):
        raise CodecError(f"running disparity must be -1 or +1, got {rd}")


def encode_8b10b(byte: int, is_control: bool = False, rd: int = -1) -> tuple[Symbol10b, int]:
    _check_rd(rd)
    if not 0 <= byte <= 0xFF:
        raise CodecError(f"not a byte: {byte}")
    if is_control and byte not in K_CODES:
        raise CodecError(f"{byte:#04x} is not a valid K code")
    x, y = byte & 0x1F, byte >> 5

    six = _K28_6B_RD_MINUS if is_control and x == 28 else _6B_RD_MINUS[x]
    if rd == 1:
        six = 0b000111 if six == 0b111000 else _alternate(six, 6)
    rd = _after(rd, six, 6)

    if is_control:
        four = _4B_K_RD_MINUS[y]
    elif y == 7 and ((rd == -1 and x in (17, 18, 20)) or (rd == 1 and x in (11, 13, 14))):
        four = _A7_RD_MINUS
    else:
        four = _4B_RD_MINUS[y]
    if rd == 1:
        if is_control:
            four ^= 0b1111
        else:
            four = 0b0011 if four == 0b1100 else _alternate(four, 4)
    rd = _after(rd, four, 4)
    return Symbol10b((six << 4) | four, is_control), rd


def _build_tables():
    encode, decode = {}, {}
    for rd in (-1, 1):
        for byte in range(256):
            for ctrl in (False, True):
                if ctrl and byte not in K_CODES:
                    continue
                sym, new_rd = encode_8b10b(byte, ctrl, rd)
                encode[(byte, ctrl, rd)] = (sym, new_rd)
                decode[(rd, sym.bits)] = (byte, ctrl, new_rd)
    return encode, decode


_ENCODE, _DECODE = _build_tables()


def decode_8b10b(sym: Symbol10b | int, rd: int = -1) -> tuple[int, bool, int]:
    """Decode one code group; returns ``(byte, is_control, new_rd)``."""
    _check_rd(rd)
    bits = sym.bits if isinstance(sym, Symbol10b) else int(sym)
    hit = _DECODE.get((rd, bits))
    if hit is not None:
        return hit
    if (-rd, bits) in _DECODE:
        raise DisparityError(f"code group {bits:010b} is invalid at running disparity {rd:+d}")
    raise InvalidSymbolError(f"{bits:010b} is not an 8b10b code group")


def encode_stream(data: Iterable[int | tuple[int, bool]], rd: int = -1) -> tuple[list[Symbol10b], int]:
    out = []
    for item in data:
        byte, ctrl = item if isinstance(item, tuple) else (item, False)
        hit = _ENCODE.get((byte, ctrl, rd))
        sym, rd = hit if hit is not None else encode_8b10b(byte, ctrl, rd)
        out.append(sym)
    return out, rd


def decode_stream(symbols: Iterable[Symbol10b | int], rd: int = -1) -> tuple[list[tuple[int, bool]], int]:
    out = []
    for sym in symbols:
        byte, ctrl, rd = decode_8b10b(sym, rd)
        out.append((byte, ctrl))
    return out, rd


def line_bits(symbols: Iterable[Symbol10b]) -> str:
    return "".join(s.bitstring() for s in symbols)


_RUNS = re.compile(r"0+|1+")


def max_run_length(bits: str) -> int:
    return max((len(r) for r in _RUNS.findall(bits)), default=0)
