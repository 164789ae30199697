import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import fast_deliveries
from spikefabric.fileio import dump_program
from spikefabric.netcompiler import (
    CompileError,
    FabricProgram,
    LogicalConnection as L,
    compile_program,
    deliveries,
    verify,
)


def as_tuples(conns):
    return Counter((c.src_node, c.src_label, c.dst_node, c.dst_label) for c in set(conns))


def oracle(program):
    return fast_deliveries([l.table for l in program.outbound], [l.table for l in program.inbound],
                           program.routes.enable)


def test_empty_connection_list():
    p = compile_program([], 4)
    assert p == FabricProgram.empty(4)
    assert not p.routes.enable.any()
    assert verify(p, []).ok


def test_single_connection():
    p = compile_program([L(0, 5, 1, 300)], 2)
    f = p.outbound[0].lookup(5)
    assert f is not None
    assert p.inbound[1].lookup(f) == 300
    assert p.outbound[0].enabled() == {5: f}
    assert p.inbound[1].enabled() == {f: 300}
    assert p.outbound[1].enabled() == {} and p.inbound[0].enabled() == {}
    assert p.routes.enable.tolist() == [[False, True], [False, False]]


def test_shared_receiver_needs_distinct_fabric_labels():
    conns = [L(0, 1, 2, 10), L(1, 1, 2, 20)]
    p = compile_program(conns, 3)
    assert p.outbound[0].lookup(1) != p.outbound[1].lookup(1)
    assert verify(p, conns).ok


def test_convergence_may_share_a_label():
    conns = [L(0, 1, 2, 10), L(1, 7, 2, 10)]
    p = compile_program(conns, 3)
    assert p.outbound[0].lookup(1) == p.outbound[1].lookup(7)


def test_filter_demand_blocks_label_reuse():
    # node 0 routes to 1 and 2; label 4 only goes to 1, so at node 2 its
    # fabric label must stay disabled, and node 3's key cannot reuse it there
    conns = [L(0, 3, 2, 30), L(0, 4, 1, 40), L(3, 9, 2, 90)]
    p = compile_program(conns, 4)
    assert verify(p, conns).ok
    assert as_tuples(conns) == oracle(p)


def test_loopback():
    conns = [L(1, 5, 1, 6)]
    p = compile_program(conns, 2)
    assert p.routes.enable[1, 1]
    assert verify(p, conns).ok


def test_infeasible_reports_conflicting_connections():
    conns = [L(0, 5, 1, 1), L(0, 5, 1, 2), L(0, 6, 1, 3)]
    with pytest.raises(CompileError) as info:
        compile_program(conns, 2)
    assert sorted(info.value.conflicts) == [L(0, 5, 1, 1), L(0, 5, 1, 2)]
    assert info.value.report()["error"] == "infeasible"


def test_out_of_range_nodes():
    with pytest.raises(CompileError):
        compile_program([L(0, 1, 3, 1)], 2)
    with pytest.raises(CompileError):
        compile_program([], 17)
    with pytest.raises(ValueError):
        L(0, 1 << 16, 0, 0)


def random_connections(rng, nodes, edges, labels=16):
    conns = set()
    used = {}
    for _ in range(edges):
        s, sl, d = rng.randrange(nodes), rng.randrange(labels), rng.randrange(nodes)
        dl = used.setdefault((s, sl, d), rng.randrange(1 << 16))
        conns.add(L(s, sl, d, dl))
    return sorted(conns)


conn_sets = st.builds(
    lambda seed, nodes, edges: (random_connections(random.Random(seed), nodes, edges), nodes),
    st.integers(0, 2**32), st.integers(1, 4), st.integers(0, 64),
)


@settings(max_examples=60, deadline=None)
@given(conn_sets)
def test_compiled_program_matches_oracle(case):
    conns, n = case
    p = compile_program(conns, n)
    assert verify(p, conns).ok
    assert oracle(p) == as_tuples(conns)
    assert set(oracle(p)) == deliveries(p)


@settings(max_examples=30, deadline=None)
@given(conn_sets, st.randoms(use_true_random=False))
def test_subsets_stay_feasible_and_compilation_is_deterministic(case, rnd):
    conns, n = case
    sub = [c for c in conns if rnd.random() < 0.5]
    p = compile_program(sub, n)
    assert verify(p, sub).ok
    shuffled = list(sub)
    rnd.shuffle(shuffled)
    assert dump_program(compile_program(shuffled, n)) == dump_program(p)


def test_enable_bit_flip_gives_exactly_one_missing():
    conns = [L(0, 5, 1, 300)]
    p = compile_program(conns, 2)
    f = p.outbound[0].lookup(5)
    bad = p.copy()
    bad.inbound[1].table[f] ^= 1 << 16
    rep = verify(bad, conns)
    assert [str(c) for c in rep.missing] == ["0 5 -> 1 300"]
    assert not rep.spurious and not rep.mislabeled


def test_extra_inbound_enable_gives_spurious():
    conns = [L(0, 3, 2, 30), L(0, 4, 1, 40)]
    p = compile_program(conns, 3)
    f = p.outbound[0].lookup(4)
    bad = p.copy()
    bad.inbound[2].set(f, 77)
    rep = verify(bad, conns)
    assert [str(c) for c in rep.spurious] == ["0 4 -> 2 77"]


def test_payload_flip_is_mislabeled():
    conns = [L(0, 5, 1, 300)]
    p = compile_program(conns, 2)
    f = p.outbound[0].lookup(5)
    bad = p.copy()
    bad.inbound[1].table[f] ^= 1
    rep = verify(bad, conns)
    assert len(rep.mislabeled) == 1 and rep.mislabeled[0][1].dst_label == 301


def flip_random_bit(program, rng):
    """Flip one table or route bit; returns a description."""
    n = program.node_count
    kind = rng.choice(["out", "in", "route"])
    node = rng.randrange(n)
    if kind == "out":
        enabled = list(program.outbound[node].enabled()) or [rng.randrange(1 << 16)]
        label = rng.choice(enabled) if rng.random() < 0.8 else rng.randrange(1 << 16)
        program.outbound[node].table[label] ^= 1 << rng.randrange(16)
    elif kind == "in":
        enabled = list(program.inbound[node].enabled()) or [rng.randrange(1 << 15)]
        f = rng.choice(enabled) if rng.random() < 0.8 else rng.randrange(1 << 15)
        program.inbound[node].table[f] ^= 1 << rng.randrange(17)
    else:
        program.routes.enable[node, rng.randrange(n)] ^= True


def test_single_bit_flips_detected_whenever_semantics_change():
    rng = random.Random(7)
    changed = 0
    for _ in range(300):
        n = rng.randint(1, 4)
        conns = random_connections(rng, n, rng.randint(1, 32))
        p = compile_program(conns, n)
        bad = p.copy()
        flip_random_bit(bad, rng)
        differs = oracle(bad) != as_tuples(conns)
        assert (not verify(bad, conns).ok) == differs
        changed += differs
    assert changed > 150
