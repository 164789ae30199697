import numpy as np
import pytest

from spikefabric.engine import NodeConfig, SimConfig, run
from spikefabric.link import ChipLink, LinkParams, MgtLink
from spikefabric.node import (
    BarrierSync,
    EmitSpikes,
    EndOfRealtime,
    InboundLut,
    Node,
    NodeParams,
    OutboundLut,
    PlaybackProgram,
    ProgramError,
    RealtimeError,
)
from spikefabric.types import Layer2Group, SpikeEvent


def test_outbound_lut_layout():
    lut = OutboundLut.from_mapping({5: 0x1234})
    assert lut.table[5] == 0x8000 | 0x1234
    assert lut.lookup(5) == 0x1234
    assert lut.lookup(6) is None
    lut.set(5, None)
    assert lut.enabled() == {}
    with pytest.raises(ValueError):
        lut.set(1 << 16, 0)
    with pytest.raises(ValueError):
        lut.set(0, 1 << 15)


def test_inbound_lut_layout():
    lut = InboundLut.from_mapping({0x7FFF: 0xFFFF})
    assert lut.table[0x7FFF] == (1 << 16) | 0xFFFF
    assert lut.enabled() == {0x7FFF: 0xFFFF}
    with pytest.raises(ValueError):
        InboundLut(np.full(1 << 15, 1 << 17, dtype=np.uint32))
    with pytest.raises(ValueError):
        InboundLut(np.zeros(10, dtype=np.uint32))


def test_node_params_timing():
    p = NodeParams()
    assert p.outbound_ticks == 2 * 5 + 6
    # arrival 100 + 6 lookup = 106 (already a system edge) + 2 * (5 + 3)
    assert p.inbound_ready(100) == 122
    assert p.inbound_ready(101) == 124


def emit(at, *labels):
    return EmitSpikes(at, Layer2Group(tuple((l, 0) for l in labels)))


@pytest.mark.parametrize("cmds", [
    (),
    (emit(1, 3),),
    (BarrierSync(), BarrierSync()),
    (BarrierSync(), emit(5, 1), emit(4, 1)),
    (BarrierSync(), EndOfRealtime(5), emit(6, 1)),
    (BarrierSync(), "bogus"),
])
def test_malformed_programs_rejected(cmds):
    with pytest.raises(ProgramError):
        PlaybackProgram(tuple(cmds))


def test_program_end_of_realtime():
    assert PlaybackProgram((BarrierSync(), emit(1, 2), EndOfRealtime(9))).end_of_realtime == 9
    assert PlaybackProgram().end_of_realtime is None


def bare_node(**kw):
    return Node(0, NodeParams(**kw), ChipLink(), ChipLink(), MgtLink(), MgtLink(LinkParams(latency_ticks=1)))


def test_tables_frozen_during_realtime():
    node = bare_node()
    node.start_realtime(0)
    with pytest.raises(RealtimeError):
        node.configure_luts(OutboundLut(), InboundLut())
    with pytest.raises(RealtimeError):
        node.load_program(PlaybackProgram())


def test_begin_playback_without_program():
    with pytest.raises(ProgramError):
        bare_node().begin_playback(0)


def drive_inbound(node, sends, ticks):
    groups = []
    for t in range(ticks):
        if t in sends:
            node.mgt_down.try_send(sends[t], t, SpikeEvent(0, 0, tapped_at=0))
        node.receive_step(t)
        if t % 2 == 0:
            node.inbound_step(t)
        g = node.chip_down._inflight
        while g:
            groups.append((g[0][0] - node.chip_down.params.latency_ticks, len(g[0][1])))
            g.popleft()
    return groups


def test_pack_window_joins_back_to_back_words():
    node = bare_node()
    node.inbound = InboundLut.from_mapping({1: 10, 2: 20, 3: 30})
    groups = drive_inbound(node, {10: 1, 11: 2, 12: 3}, 100)
    assert [n for _, n in groups] == [3]


def test_lone_word_waits_one_window():
    node = bare_node()
    node.inbound = InboundLut.from_mapping({1: 10})
    groups = drive_inbound(node, {10: 1}, 100)
    # arrives 11, lookup to 17, edge 18, + 2 * (5 + 3) = 34, window + 2 = 36
    assert groups == [(36, 1)]


def test_filtered_inbound_word_is_counted():
    node = bare_node()
    drive_inbound(node, {4: 9}, 60)
    assert node.filtered_in == 1 and node.received == 1


def test_playback_reaches_local_chip():
    program = PlaybackProgram((BarrierSync(), emit(5, 7, 8), EndOfRealtime(400)))
    config = SimConfig.uniform(1, 3000, NodeConfig(playback=program))
    r = run(config)
    start = r.barrier_starts[0]
    recs = r.traces[0]
    assert [x.label for x in recs] == [7, 8]
    assert all(x.emitted_at == start + 10 for x in recs)
    assert all(x.latency_ticks == 62 for x in recs)
    assert r.conservation_ok()
