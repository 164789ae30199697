"""Command line front end.

Every subcommand prints a JSON summary on stdout. Failures exit nonzero
with a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

from . import calibration as cal
from .engine import ConfigError, SimConfig, path_delay_breakdown, run
from .fileio import (
    FileFormatError,
    apply_override,
    config_from_plain,
    config_to_plain,
    dump_program,
    format_connectivity,
    from_plain,
    load_config,
    load_program,
    parse_connectivity,
    to_plain,
    write_report,
)
from .harness import BARRIER_SCENARIOS, DEFAULT_RATES_MHZ, SweepSpec, barrier_test, latency_sweep, throughput_bench
from .link import ChipLinkParams, LinkParams
from .netcompiler import CompileError, compile_program, verify
from .types import TICK_NS


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        super().__init__(message)
        self.payload = {"error": kind, "message": message, **extra}


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _out_dir(args) -> Optional[Path]:
    if args.out is None:
        return None
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read_connectivity(path: str, node_count: Optional[int]):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        conns = parse_connectivity(Path(path).read_text(), node_count)
    return conns, [str(w.message) for w in caught]


def _infer_nodes(conns) -> int:
    return max((max(c.src_node, c.dst_node) for c in conns), default=0) + 1


def cmd_compile(args) -> int:
    conns, notes = _read_connectivity(args.config, args.nodes)
    n = args.nodes or _infer_nodes(conns)
    program = compile_program(conns, n)
    summary = {"node_count": n, "connections": len(conns),
               "fabric_labels": len(set(program.assignment.values())), "warnings": notes}
    d = _out_dir(args)
    if d is not None:
        (d / "program.sfp").write_bytes(dump_program(program))
        (d / "program.txt").write_text(program.summary())
        (d / "connectivity.txt").write_text(format_connectivity(conns))
        summary["files"] = ["program.sfp", "program.txt", "connectivity.txt"]
    _emit(summary)
    return 0


def cmd_verify(args) -> int:
    program = load_program(Path(args.program).read_bytes())
    conns, notes = _read_connectivity(args.config, program.node_count)
    report = verify(program, conns)
    out = {"ok": report.ok, **report.as_dict(), "warnings": notes}
    _emit(out)
    return 0 if report.ok else 1


def _load_sim_config(args) -> SimConfig:
    config = load_config(Path(args.config).read_bytes(), args.override)
    if args.program:
        config = dataclasses.replace(config, program=load_program(Path(args.program).read_bytes()))
        problems = config.validate()
        if problems:
            raise ConfigError(problems)
    return config


def cmd_run(args) -> int:
    config = _load_sim_config(args)
    report = run(config)
    summary = {
        "traced": report.counters["traced"],
        "drops": report.drops,
        "percentiles_ns": report.percentiles(),
        "conservation_ok": report.conservation_ok(),
        "barrier_starts": report.barrier_starts,
    }
    d = _out_dir(args)
    if d is not None:
        summary["files"] = [p.name for p in write_report(report, d)]
    _emit(summary)
    return 0


def cmd_sweep(args) -> int:
    spec = SweepSpec(fan_in=args.fan_in, spikes_per_point=args.spikes,
                     rates_mhz=tuple(args.rates) if args.rates else DEFAULT_RATES_MHZ,
                     jitter_compensation=not args.no_jitter_compensation)
    if args.config or args.override:
        if args.config:
            base = load_config(Path(args.config).read_bytes(), args.override)
        else:
            plain = config_to_plain(SimConfig.uniform(1, 1))
            for ov in args.override:
                plain = apply_override(plain, ov)
            base = config_from_plain(plain)
        spec = dataclasses.replace(spec, base=base)
    if spec.fan_in < 1 or any(r <= 0 for r in spec.rates_mhz):
        raise CliError("usage", "fan-in must be >= 1 and rates > 0")
    result = latency_sweep(spec, workers=args.workers)
    d = _out_dir(args)
    files = []
    if d is not None:
        for name, text in (("histogram.csv", result.histogram_csv()),
                           ("fpga_histogram.csv", result.histogram_csv(fpga=True)),
                           ("percentiles.csv", result.percentile_csv())):
            (d / name).write_text(text)
            files.append(name)
    _emit({
        "saturation_rate_mhz": result.saturation_rate_mhz,
        "points": [{"rate_mhz": p.rate_mhz, "percentiles_ns": p.percentiles, "drops": p.drops,
                    "jitter_ratio": p.jitter_ratio, "saturated": p.saturated} for p in result.points],
        "files": files,
    })
    return 0


def cmd_bench_throughput(args) -> int:
    plain = {"mgt": to_plain(cal.DEFAULT_MGT_LINK), "chip": to_plain(cal.DEFAULT_CHIP_LINK)}
    for ov in args.override:
        plain = apply_override(plain, ov)
    unknown = set(plain) - {"mgt", "chip"}
    if unknown:
        raise CliError("usage", f"overrides must start with 'mgt.' or 'chip.', got {sorted(unknown)}")
    mgt = from_plain(LinkParams, plain["mgt"], "mgt")
    chip = from_plain(ChipLinkParams, plain["chip"], "chip")
    lanes = ("mgt", "chip") if args.lane == "all" else (args.lane,)
    out = []
    for lane in lanes:
        r = throughput_bench(lane, args.words, mgt=mgt, chip=chip)
        out.append({"lane": lane, "events": r.events, "cycles": r.cycles,
                    "mevents_per_s": r.mevents_per_s, "expected_mevents_per_s": r.expected_mevents_per_s,
                    "relative_error": r.relative_error})
    _emit({"results": out})
    return 0


def cmd_bench_barrier(args) -> int:
    scenarios = BARRIER_SCENARIOS if args.scenario == "all" else (args.scenario,)
    reports = []
    for sc in scenarios:
        for k in range(args.repeat):
            r = barrier_test(sc, node_count=args.nodes, seed=args.seed + k,
                             timeout_cycles=args.timeout, refractory_cycles=args.refractory)
            reports.append(r.as_dict())
    d = _out_dir(args)
    if d is not None:
        (d / "barrier.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    _emit({"runs": reports})
    return 0


def cmd_calibration(args) -> int:
    config = SimConfig.uniform(2, 1)
    parts = path_delay_breakdown(config, 0, 1)
    _emit({"path_delay_ticks": parts, "total_ticks": sum(parts.values()),
           "total_ns": sum(parts.values()) * TICK_NS})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikefabric", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help: str, config_required: bool = True):
        sp.add_argument("--config", required=config_required, help=config_help)
        sp.add_argument("--out", help="directory for output files")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a dotted config key, e.g. nodes.*.params.cdc_in_cycles=6")
        sp.add_argument("--workers", type=int, default=1, help="parallel simulations (sweep only)")

    sp = sub.add_parser("compile", help="connectivity text -> fabric program")
    common(sp, "connectivity file")
    sp.add_argument("--nodes", type=int, help="node count (default: highest node in the file + 1)")
    sp.set_defaults(func=cmd_compile)

    sp = sub.add_parser("verify", help="check a fabric program against connectivity")
    common(sp, "connectivity file")
    sp.add_argument("--program", required=True, help="fabric program image")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("run", help="simulate a config and store the run report")
    common(sp, "simulation config (JSON)")
    sp.add_argument("--program", help="use this fabric program instead of compiling the connections")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="latency sweep over spike rates")
    common(sp, "base config whose node 0 and aggregator settings are used", config_required=False)
    sp.add_argument("--rates", type=float, nargs="+", metavar="MHZ")
    sp.add_argument("--spikes", type=int, default=1 << 15, help="spikes per sender and rate")
    sp.add_argument("--fan-in", type=int, default=3)
    sp.add_argument("--no-jitter-compensation", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bench-throughput", help="sustained rate of a saturated lane")
    common(sp, "unused", config_required=False)
    sp.add_argument("--lane", choices=("mgt", "chip", "all"), default="all")
    sp.add_argument("--words", type=int, default=1_000_000)
    sp.set_defaults(func=cmd_bench_throughput)

    sp = sub.add_parser("bench-barrier", help="barrier synchronization scenarios")
    common(sp, "unused", config_required=False)
    sp.add_argument("--scenario", choices=BARRIER_SCENARIOS + ("all",), default="all")
    sp.add_argument("--nodes", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--repeat", type=int, default=1)
    sp.add_argument("--timeout", type=int, default=1000, help="cycles")
    sp.add_argument("--refractory", type=int, default=100, help="cycles")
    sp.set_defaults(func=cmd_bench_barrier)

    sp = sub.add_parser("calibration", help="print the zero-contention path delay breakdown")
    sp.set_defaults(func=cmd_calibration)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        err = exc.payload
    except CompileError as exc:
        err = exc.report()
    except ConfigError as exc:
        err = {"error": "config", "message": str(exc), "problems": exc.problems}
    except FileFormatError as exc:
        err = exc.as_dict()
    except OSError as exc:
        err = {"error": "io", "message": str(exc)}
    except ValueError as exc:
        err = {"error": "value", "message": str(exc)}
    json.dump(err, sys.stderr, sort_keys=True)
    sys.stderr.write("\n")
    return 1


if __name__ == "__main__":
    sys.exit(main())
