"""Three chips send to one receiver at increasing rates.

Below saturation the receive-side jitter buffer holds every spike to the
same expected delay, so the histogram is a single bin. Once the shared
downlink is oversubscribed the aggregator queue fills and drops spikes.
Pass an output directory to keep the CSV tables.
"""

import sys
from pathlib import Path

from spikefabric import SweepSpec, latency_sweep


def bar(count: int, total: int, width: int = 40) -> str:
    return "#" * max(1, round(width * count / total))


def main(out: Path | None = None) -> None:
    spec = SweepSpec(fan_in=3, spikes_per_point=4096, rates_mhz=(1.0, 25.0, 62.5, 83.333, 125.0))
    result = latency_sweep(spec)
    for p in result.points:
        q = p.percentiles
        tag = "saturated" if p.saturated else "ok"
        print(f"\n{p.rate_mhz:g} MHz per sender ({tag}): p1 {q['p1']} p50 {q['p50']} p99 {q['p99']} ns, "
              f"drops {p.drops}")
        for bin_ns, count in p.histogram[:8]:
            print(f"  {bin_ns:>5} ns {count:>6} {bar(count, p.traced)}")
    print(f"\nsaturation from {result.saturation_rate_mhz} MHz")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "histogram.csv").write_text(result.histogram_csv())
        (out / "percentiles.csv").write_text(result.percentile_csv())
        print(f"tables written to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else None)
