"""Experiments: latency sweeps over spike rates, lane throughput benchmarks
and barrier fault-injection scenarios. Everything here returns plain data;
rendering is left to the caller."""

from __future__ import annotations

import csv
import io
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import calibration as cal
from .aggregator import AggregatorParams, BarrierParams
from .chip import ChipParams, SourceSpec
from .engine import NodeConfig, RunReport, SimConfig, path_delay, run
from .link import ChipLink, ChipLinkParams, LinkParams, MgtLink
from .netcompiler import LogicalConnection
from .node import PlaybackProgram
from .types import MAX_GROUP_SIZE, TICK_NS, TICKS_PER_SYSTEM_CYCLE, Layer2Group

MGT_CLOCK_MHZ = 1e3 / TICK_NS
DEFAULT_RATES_MHZ = (1.0, 5.0, 25.0, 50.0, 62.5, 83.333, 125.0)


@dataclass(frozen=True)
class SweepSpec:
    fan_in: int = 3
    rates_mhz: tuple[float, ...] = DEFAULT_RATES_MHZ
    spikes_per_point: int = 1 << 15
    topology: str = "star4"
    jitter_compensation: bool = True
    base: Optional[SimConfig] = None  # calibration source; per-node settings are copied from node 0

    def __post_init__(self) -> None:
        if self.fan_in < 1:
            raise ValueError("fan_in must be >= 1")
        if not self.rates_mhz or any(r <= 0 for r in self.rates_mhz):
            raise ValueError("rates must be positive")
        if self.spikes_per_point < 1:
            raise ValueError("spikes_per_point must be >= 1")


def period_for_rate(rate_mhz: float) -> int:
    """Nearest whole-tick spike period for a requested per-sender rate."""
    return max(1, round(MGT_CLOCK_MHZ / rate_mhz))


def topology_nodes(spec: SweepSpec) -> int:
    if spec.topology == "star4":
        return max(4, spec.fan_in + 1)
    if spec.topology == "backplane":
        return max(12, spec.fan_in + 1)
    if spec.topology == "full":
        return 16
    raise ValueError(f"unknown topology preset {spec.topology!r}")


def fan_in_config(spec: SweepSpec, period_ticks: int) -> SimConfig:
    """``fan_in`` senders (nodes 0..fan_in-1) feeding the last node, barrier-started."""
    n = topology_nodes(spec)
    if spec.fan_in > n - 1:
        raise ValueError(f"fan_in {spec.fan_in} needs more than {n} nodes")
    receiver = n - 1
    template = spec.base.nodes[0] if spec.base is not None else NodeConfig()
    agg = spec.base.aggregator if spec.base is not None else cal.DEFAULT_AGGREGATOR
    chip = replace(template.chip, jitter_compensation=spec.jitter_compensation)
    program = PlaybackProgram()
    nodes = []
    conns = []
    for i in range(n):
        sources: tuple[SourceSpec, ...] = ()
        if i < spec.fan_in:
            label = 0x100 + i
            sources = (SourceSpec(label, period_ticks, spec.spikes_per_point),)
            conns.append(LogicalConnection(i, label, receiver, 0x200 + i))
        nodes.append(replace(template, chip=chip, sources=sources, playback=program, ready_at=0))
    base = SimConfig(n, tuple(nodes), 1, tuple(conns), aggregator=agg)
    margin = 64 * path_delay(base, 0, receiver) + 4 * agg.barrier.timeout_cycles
    run_ticks = (spec.spikes_per_point - 1) * period_ticks + margin
    return replace(base, run_ticks=run_ticks)


@dataclass
class SweepPoint:
    rate_mhz: float
    period_ticks: int
    effective_rate_mhz: float
    percentiles: dict[str, Optional[int]]
    histogram: list[tuple[int, int]]
    fpga_histogram: list[tuple[int, int]]
    drops: int
    traced: int
    generated: int
    in_flight: int
    conservation_ok: bool
    saturated: bool = False

    @property
    def jitter_ratio(self) -> Optional[float]:
        p = self.percentiles
        if p["p50"] is None:
            return None
        return (p["p99"] - p["p1"]) / p["p50"]


def _run_point(args: tuple[SweepSpec, float]) -> SweepPoint:
    spec, rate = args
    period = period_for_rate(rate)
    report = run(fan_in_config(spec, period))
    return SweepPoint(
        rate_mhz=rate,
        period_ticks=period,
        effective_rate_mhz=MGT_CLOCK_MHZ / period,
        percentiles=report.percentiles(),
        histogram=report.histogram(),
        fpga_histogram=report.fpga_histogram(),
        drops=report.drops,
        traced=report.counters["traced"],
        generated=report.counters["generated"],
        in_flight=report.counters["in_flight"],
        conservation_ok=report.conservation_ok(),
    )


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list[SweepPoint]
    saturation_rate_mhz: Optional[float]

    @property
    def sub_saturation(self) -> list[SweepPoint]:
        return [p for p in self.points if not p.saturated]

    def histogram_csv(self, fpga: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rate_mhz", "bin_ns", "count"])
        for p in self.points:
            for b, c in (p.fpga_histogram if fpga else p.histogram):
                w.writerow([_fmt_rate(p.rate_mhz), b, c])
        return buf.getvalue()

    def percentile_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rate_mhz", "effective_rate_mhz", "p1_ns", "p50_ns", "p99_ns", "max_ns",
                    "jitter_ratio", "drops", "traced", "saturated"])
        for p in self.points:
            q = p.percentiles
            jr = p.jitter_ratio
            w.writerow([_fmt_rate(p.rate_mhz), f"{p.effective_rate_mhz:.3f}", q["p1"], q["p50"], q["p99"],
                        q["max"], "" if jr is None else f"{jr:.4f}", p.drops, p.traced, int(p.saturated)])
        return buf.getvalue()


def _fmt_rate(rate: float) -> str:
    return f"{rate:g}"


def flag_saturation(points: list[SweepPoint], divergence: float = 0.15) -> Optional[float]:
    """Mark every point from the first congested rate upwards as saturated.

    A point is congested if it dropped spikes, ended with a backlog, or its
    p99 grew past the lowest-rate p99 by more than ``divergence`` times the
    lowest-rate median.
    """
    if not points:
        return None
    ref = points[0].percentiles
    saturation = None
    for p in points:
        q = p.percentiles
        diverged = (
            ref["p99"] is not None and q["p99"] is not None
            and q["p99"] - ref["p99"] > divergence * ref["p50"]
        )
        if saturation is None and (p.drops > 0 or p.in_flight > 0 or diverged):
            saturation = p.rate_mhz
        p.saturated = saturation is not None
    return saturation


def latency_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    rates = sorted(set(spec.rates_mhz))
    jobs = [(spec, r) for r in rates]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_run_point, jobs))
    else:
        points = [_run_point(j) for j in jobs]
    points.sort(key=lambda p: p.rate_mhz)
    sat = flag_saturation(points)
    return SweepResult(spec, points, sat)


@dataclass
class ThroughputResult:
    lane: str
    cycles: int
    events: int
    mevents_per_s: float
    expected_mevents_per_s: float

    @property
    def relative_error(self) -> float:
        return abs(self.mevents_per_s - self.expected_mevents_per_s) / self.expected_mevents_per_s


def throughput_bench(lane: str = "mgt", words: int = 1_000_000,
                     mgt: LinkParams = cal.DEFAULT_MGT_LINK,
                     chip: ChipLinkParams = cal.DEFAULT_CHIP_LINK) -> ThroughputResult:
    """Drive one lane with a sender that always has data; measure delivered events/s."""
    if lane == "mgt":
        link = MgtLink(mgt, "bench")
        delivered = 0
        for t in range(words):
            link.try_send(t & 0x7FFF, t)
            if link.poll(t) is not None:
                delivered += 1
        for t in range(words, words + mgt.latency_ticks):
            if link.poll(t) is not None:
                delivered += 1
        if delivered != link.accepted:
            raise AssertionError("link lost or duplicated words")
        rate = delivered / words * MGT_CLOCK_MHZ
        return ThroughputResult("mgt", words, delivered, rate, mgt.payload_fraction * MGT_CLOCK_MHZ)
    if lane == "chip":
        link = ChipLink(chip, "bench")
        cycles = max(1, words // chip.refill_per_cycle)
        for c in range(cycles):
            t = c * TICKS_PER_SYSTEM_CYCLE
            n = link.capacity(t)
            if n:
                link.try_send(Layer2Group(tuple((0, 0) for _ in range(min(n, MAX_GROUP_SIZE)))), t)
        seconds = cycles * TICKS_PER_SYSTEM_CYCLE * TICK_NS * 1e-9
        rate = link.events_sent / seconds / 1e6
        expected = chip.refill_per_cycle * MGT_CLOCK_MHZ / TICKS_PER_SYSTEM_CYCLE
        return ThroughputResult("chip", cycles, link.events_sent, rate, expected)
    raise ValueError(f"unknown lane {lane!r}; expected 'mgt' or 'chip'")


@dataclass
class BarrierReport:
    scenario: str
    node_count: int
    ready_at: list[Optional[int]]
    starts: list[Optional[int]]
    fires: list[int]
    timeouts: int
    ignored: int

    @property
    def max_skew_ticks(self) -> Optional[int]:
        s = [x for x in self.starts if x is not None]
        return max(s) - min(s) if s else None

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "node_count": self.node_count,
            "ready_at": self.ready_at,
            "starts": self.starts,
            "fires": self.fires,
            "timeouts": self.timeouts,
            "ignored": self.ignored,
            "max_skew_ticks": self.max_skew_ticks,
        }


BARRIER_SCENARIOS = ("all-request", "missing-node", "straggler")


def barrier_config(ready_at: Sequence[Optional[int]], barrier: BarrierParams,
                   run_ticks: int) -> SimConfig:
    program = PlaybackProgram()
    nodes = tuple(NodeConfig(playback=program, ready_at=r) for r in ready_at)
    agg = replace(cal.DEFAULT_AGGREGATOR, barrier=barrier)
    return SimConfig(len(nodes), nodes, run_ticks, aggregator=agg)


def barrier_test(scenario: str, node_count: int = 4, seed: int = 0,
                 timeout_cycles: int = 1000, refractory_cycles: int = 100,
                 skew: Sequence[int] = (), max_offset_ticks: int = 400) -> BarrierReport:
    if scenario not in BARRIER_SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {BARRIER_SCENARIOS}")
    rng = random.Random(seed)
    ready: list[Optional[int]] = [rng.randrange(max_offset_ticks) for _ in range(node_count)]
    if scenario == "missing-node":
        ready[rng.randrange(node_count)] = None
    elif scenario == "straggler":
        late = rng.randrange(node_count)
        others = [r for i, r in enumerate(ready) if i != late] or [0]
        # late, but inside the window the earliest request opened
        offset = TICKS_PER_SYSTEM_CYCLE * max(0, timeout_cycles - 50)
        ready[late] = max(max(others) + 1, min(others) + offset)
    bp = BarrierParams(timeout_cycles=timeout_cycles, refractory_cycles=refractory_cycles, skew=tuple(skew))
    horizon = max((r for r in ready if r is not None), default=0)
    run_ticks = horizon + TICKS_PER_SYSTEM_CYCLE * (timeout_cycles + refractory_cycles) + 1000
    sim_report = run(barrier_config(ready, bp, run_ticks))
    return BarrierReport(
        scenario=scenario,
        node_count=node_count,
        ready_at=ready,
        starts=sim_report.barrier_starts,
        fires=sim_report.barrier_fires,
        timeouts=sim_report.counters["barrier_timeouts"],
        ignored=sim_report.counters["barrier_ignored"],
    )
