"""Default latency calibration.

All figures in base ticks (4 ns) unless named ``*_cycles`` (8 ns system
cycles) or MGT cycles (one tick each). Only totals are pinned by published
measurements; how they split across pipeline stages is an assumption.

Inter-FPGA path (sending Node-FPGA tap -> receiving Node-FPGA chip link)::

    outbound CDC          5 system cycles      10 ticks
    outbound LUT          6 MGT cycles          6
    MGT hop               37 MGT cycles        37
    Aggregator CDC (x2)   18 MGT cycles        18
    Aggregator routing    5 MGT cycles          5
    MGT hop               37 MGT cycles        37
    inbound LUT           6 MGT cycles          6
    align to system clk                         1 (odd arrival tick)
    inbound CDC           5 system cycles      10
    packing pipeline      3 system cycles       6
    packing window        1 system cycle        2
                                              ---
                                              138 ticks = 552 ns

The two MGT hops account for 296 ns (~0.3 us). The four clock-domain
crossings add 38 ticks = 19 system cycles = 152 ns, about 60 % of the
256 ns the FPGAs add on top of the hops.

Chip side: 31 system cycles on each chip link (62 ticks, 248 ns), i.e.
~0.5 us of chip round trip, giving 262 ticks = 1.048 us chip to chip.
"""

from __future__ import annotations

from .aggregator import AggregatorParams
from .link import ChipLinkParams, LinkParams
from .node import NodeParams

MGT_HOP_TICKS = 37
CC_INTERVAL = 5000
CC_LENGTH = 2
CHIP_LINK_TICKS = 62

DEFAULT_MGT_LINK = LinkParams(latency_ticks=MGT_HOP_TICKS, cc_interval=CC_INTERVAL, cc_length=CC_LENGTH)
DEFAULT_CHIP_LINK = ChipLinkParams(latency_ticks=CHIP_LINK_TICKS)
DEFAULT_NODE = NodeParams()
DEFAULT_AGGREGATOR = AggregatorParams()

# Reference figures the defaults are tuned against.
TARGET_HOPS_NS = 300
TARGET_INTER_FPGA_NS = 550
TARGET_CDC_FRACTION = 0.60
LATENCY_BAND_NS = (900, 1300)
