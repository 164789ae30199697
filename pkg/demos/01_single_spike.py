"""Follow one spike from a sending chip to a receiving chip.

The zero-contention delay is a sum of fixed pipeline stages. This demo prints
that breakdown, then simulates a single spike and shows that the traced
latency is exactly the sum.
"""

from spikefabric import NodeConfig, SimConfig, path_delay, path_delay_breakdown, run
from spikefabric.chip import SourceSpec
from spikefabric.netcompiler import LogicalConnection
from spikefabric.types import TICK_NS


def main() -> None:
    # chip 0 emits label 5 once; the fabric relabels it to 300 at chip 1
    sender = NodeConfig(sources=(SourceSpec(label=5, period_ticks=1, count=1),))
    config = SimConfig(2, (sender, NodeConfig()), run_ticks=2000,
                       connections=(LogicalConnection(0, 5, 1, 300),))

    print("stage                      ticks    ns")
    for stage, ticks in path_delay_breakdown(config, 0, 1).items():
        print(f"{stage:<24} {ticks:>7} {ticks * TICK_NS:>5}")
    total = path_delay(config, 0, 1)
    print(f"{'total':<24} {total:>7} {total * TICK_NS:>5}")

    report = run(config)
    (record,) = report.traces[1]
    print(f"\nsimulated: label {record.label} from node {record.src_node} label {record.src_label}, "
          f"latency {record.latency_ticks * TICK_NS} ns")
    assert record.latency_ticks == total


if __name__ == "__main__":
    main()
