import pytest
from hypothesis import given, settings, strategies as st

from oracles import K_CODES_REF, ref_encode
from spikefabric.codec import (
    BARRIER_REQUEST,
    K_CODES,
    NOOP,
    CodecError,
    D,
    DisparityError,
    InvalidSymbolError,
    K,
    Symbol10b,
    decode_8b10b,
    decode_stream,
    deframe_mgt,
    encode_8b10b,
    encode_stream,
    frame_mgt,
    frame_word,
    line_bits,
    max_run_length,
    pack_layer2,
    unpack_layer2,
)
from spikefabric.types import MgtWord, WordKind


def test_frame_examples():
    assert frame_mgt(WordKind.EVENT, 0x1234) == 0x1234
    assert frame_mgt(WordKind.COMMAND, BARRIER_REQUEST) == 0x8001
    assert deframe_mgt(0xFFFF) == MgtWord(WordKind.COMMAND, NOOP)
    with pytest.raises(CodecError):
        frame_mgt(WordKind.EVENT, 1 << 15)
    with pytest.raises(CodecError):
        frame_mgt(WordKind.PAUSE, 0)
    with pytest.raises(CodecError):
        deframe_mgt(1 << 16)


def test_frame_is_a_bijection_on_all_words():
    seen = set()
    for w in range(1 << 16):
        m = deframe_mgt(w)
        assert frame_word(m) == w
        seen.add((m.kind, m.payload))
    assert len(seen) == 1 << 16


def test_layer2_pack_roundtrip():
    g = pack_layer2([(5, 1), (65535, 255)])
    assert unpack_layer2(g) == [(5, 1), (65535, 255)]
    with pytest.raises(CodecError):
        pack_layer2([])
    with pytest.raises(ValueError):
        pack_layer2([(0, 256)])


@given(st.lists(st.tuples(st.integers(0, 0xFFFF), st.integers(0, 255)), min_size=1, max_size=3))
def test_layer2_roundtrip_property(events):
    assert unpack_layer2(pack_layer2(events)) == events


# Standard code groups, abcdei fghj.
KNOWN = [
    (D(0, 0), False, -1, "1001110100", -1),
    (D(0, 0), False, +1, "0110001011", +1),
    (K(28, 5), True, -1, "0011111010", +1),
    (K(28, 5), True, +1, "1100000101", -1),
    (K(28, 0), True, -1, "0011110100", -1),
    (K(28, 1), True, -1, "0011111001", +1),
    (K(28, 7), True, -1, "0011111000", -1),
    (K(23, 7), True, -1, "1110101000", -1),
    (D(17, 7), False, -1, "1000110111", +1),
    (D(11, 7), False, +1, "1101001000", -1),
    (D(3, 3), False, -1, "1100011100", -1),
]


@pytest.mark.parametrize("byte,ctrl,rd,bits,rd_out", KNOWN)
def test_known_code_groups(byte, ctrl, rd, bits, rd_out):
    sym, new_rd = encode_8b10b(byte, ctrl, rd)
    assert sym.bitstring() == bits
    assert new_rd == rd_out
    assert decode_8b10b(sym, rd) == (byte, ctrl, rd_out)


def test_matches_table_driven_reference_everywhere():
    assert sorted(K_CODES) == sorted(K_CODES_REF)
    for rd in (-1, 1):
        for b in range(256):
            sym, new = encode_8b10b(b, False, rd)
            assert (sym.bits, new) == ref_encode(b, False, rd)
        for b in K_CODES_REF:
            sym, new = encode_8b10b(b, True, rd)
            assert (sym.bits, new) == ref_encode(b, True, rd)


def test_decode_errors():
    with pytest.raises(InvalidSymbolError):
        decode_8b10b(0b0000000000, -1)
    sym, _ = encode_8b10b(D(0, 0), False, -1)  # unbalanced, only valid at RD-
    with pytest.raises(DisparityError):
        decode_8b10b(sym, +1)
    with pytest.raises(CodecError):
        encode_8b10b(D(0, 0), True, -1)
    with pytest.raises(CodecError):
        encode_8b10b(0, False, 0)
    with pytest.raises(CodecError):
        Symbol10b(1024)


def test_every_code_group_is_balanced_or_off_by_two():
    for rd in (-1, 1):
        for b in range(256):
            sym, _ = encode_8b10b(b, False, rd)
            assert bin(sym.bits).count("1") in (4, 5, 6)


def test_max_run_length_helper():
    assert max_run_length("") == 0
    assert max_run_length("0011100") == 3


stream_item = st.one_of(st.integers(0, 255), st.sampled_from(sorted(K_CODES)).map(lambda k: (k, True)))


@settings(max_examples=300)
@given(st.lists(stream_item, max_size=64), st.sampled_from([-1, 1]))
def test_stream_roundtrip_and_line_properties(data, rd):
    syms, end_rd = encode_stream(data, rd)
    decoded, rd2 = decode_stream(syms, rd)
    assert decoded == [d if isinstance(d, tuple) else (d, False) for d in data]
    assert rd2 == end_rd
    bits = line_bits(syms)
    assert max_run_length(bits) <= 5
    # running digital sum, starting at the running disparity; 8b10b keeps it within +-3
    rds = rd
    for b in bits:
        rds += 1 if b == "1" else -1
        assert -3 <= rds <= 3
