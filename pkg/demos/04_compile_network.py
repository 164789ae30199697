"""Compile a small network into lookup tables and check it.

The compiler assigns fabric labels so each receiver sees exactly the chip
labels its connections ask for. verify() recomputes the delivered set from
the tables alone, so a corrupted table entry shows up as a mismatch.
"""

from spikefabric import compile_program, dump_program, load_program, parse_connectivity, verify

NETWORK = """
# src label -> dst label
0 5  -> 1 300
0 5  -> 2 301
1 7  -> 0 9
2 1  -> 1 4
"""


def main() -> None:
    conns = parse_connectivity(NETWORK)
    program = compile_program(conns, node_count=3)
    print(program.summary())

    image = dump_program(program)
    assert load_program(image) == program
    print(f"program image: {len(image)} bytes, verify: {verify(program, conns).as_dict()}")

    broken = program.copy()
    fabric = broken.outbound[0].lookup(5)
    broken.inbound[2].table[fabric] ^= 1  # receiver now sees label 300 instead of 301
    print(f"after one bit flip: {verify(broken, conns).as_dict()}")


if __name__ == "__main__":
    main()
