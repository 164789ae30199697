"""Cycle-level model of a star-topology spike routing fabric between
neuromorphic chips: chip endpoints, node FPGAs, transceiver links and a
central aggregator, plus the label compiler and experiment harness."""

from .aggregator import AggregatorParams, BarrierFsm, BarrierParams, BarrierState, RouteMatrix
from .chip import ChipParams, JitterBuffer, SourceSpec, TraceRecord
from .codec import (
    CodecError,
    DisparityError,
    InvalidSymbolError,
    Symbol10b,
    decode_8b10b,
    deframe_mgt,
    encode_8b10b,
    frame_mgt,
    pack_layer2,
    unpack_layer2,
)
from .engine import (
    ConfigError,
    NodeConfig,
    RunReport,
    SimConfig,
    Simulation,
    inter_fpga_delay,
    path_delay,
    path_delay_breakdown,
    run,
)
from .fileio import (
    ChecksumError,
    FileFormatError,
    SchemaError,
    TruncatedError,
    VersionError,
    dump_config,
    dump_program,
    dump_report,
    format_connectivity,
    load_config,
    load_program,
    load_report,
    parse_connectivity,
)
from .harness import SweepSpec, barrier_test, latency_sweep, throughput_bench
from .link import ChipLinkParams, LinkParams, MgtLink
from .netcompiler import CompileError, FabricProgram, LogicalConnection, compile_program, verify
from .node import (
    BarrierSync,
    EmitSpikes,
    EndOfRealtime,
    InboundLut,
    NodeParams,
    OutboundLut,
    PlaybackProgram,
)
from .types import Layer2Group, MgtWord, SpikeEvent, WordKind

__version__ = "0.1.0"
