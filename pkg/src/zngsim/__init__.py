"""Trace-driven simulator of a GPU whose memory is Z-NAND flash behind an L2."""

from .config import PLATFORMS, PlatformConfig, platform_config
from .engine import MetricsReport, Simulator, compare, oracle_reads, run
from .errors import ZngError
from .trace import Trace, TraceSpec, generate_trace, load_trace, write_trace

__all__ = [
    "PLATFORMS", "PlatformConfig", "platform_config", "MetricsReport", "Simulator", "compare",
    "oracle_reads", "run", "ZngError", "Trace", "TraceSpec", "generate_trace", "load_trace", "write_trace",
]
__version__ = "0.1.0"
