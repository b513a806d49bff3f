"""Platform configuration.

Defaults mirror the evaluated system: 16 channels x 1 package, 8 dies x
8 planes, 1024 blocks of 384 4KB pages, an 800 MT/s 8B-wide flash
interface, a 24MB STT-MRAM L2 (6MB SRAM for the unoptimised platforms)
and 2 or 8 flash registers per plane.

Configs are frozen dataclasses. ``platform_config(name, overrides)``
builds one of the seven platform presets and applies dotted-key
overrides such as ``{"registers.topology": "fcnet"}``. JSON files use the
same nesting as :meth:`PlatformConfig.to_dict`.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import jsonschema

from .errors import ConfigError

KB = 1024
MB = 1024 * KB
GB = 1024 * MB

PLATFORMS = ("hetero", "hybridgpu", "optane", "zng-base", "zng-rdopt", "zng-wropt", "zng")
ZNG_PLATFORMS = ("zng-base", "zng-rdopt", "zng-wropt", "zng")
TOPOLOGIES = ("baseline", "swnet", "fcnet", "nif")


@dataclass(frozen=True)
class Geometry:
    channels: int = 16
    packages: int = 1
    dies: int = 8
    planes: int = 8
    blocks: int = 1024
    pages: int = 384
    page_size: int = 4096
    group_size: int = 8
    over_provision: float = 0.07

    def __post_init__(self):
        for name in ("channels", "packages", "dies", "planes", "blocks", "pages", "page_size", "group_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"geometry.{name} must be positive")
        if self.page_size % 128:
            raise ConfigError("geometry.page_size must be a multiple of 128")
        if not 0.0 <= self.over_provision < 1.0:
            raise ConfigError("geometry.over_provision must be in [0, 1)")
        if self.data_blocks_per_plane < 1:
            raise ConfigError("over-provisioning leaves no data blocks")

    @property
    def planes_per_package(self) -> int:
        return self.dies * self.planes

    @property
    def n_packages(self) -> int:
        return self.channels * self.packages

    @property
    def total_planes(self) -> int:
        return self.n_packages * self.planes_per_package

    @property
    def total_blocks(self) -> int:
        return self.total_planes * self.blocks

    @property
    def block_bytes(self) -> int:
        return self.pages * self.page_size

    @property
    def capacity_bytes(self) -> int:
        return self.total_blocks * self.block_bytes

    @property
    def data_blocks_per_plane(self) -> int:
        return int(math.floor(self.blocks * (1.0 - self.over_provision)))

    @property
    def sectors_per_page(self) -> int:
        return self.page_size // 128


@dataclass(frozen=True)
class ZTimingConfig:
    t_read_ns: float = 3_000.0
    t_program_ns: float = 100_000.0
    t_erase_ns: float = 1_000_000.0
    channel_mts: int = 800
    channel_width: int = 8
    page_size: int = 4096
    pe_cycles: int = 100_000

    def __post_init__(self):
        for name in ("t_read_ns", "t_program_ns", "t_erase_ns", "channel_mts", "channel_width", "page_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"timing.{name} must be positive")


@dataclass(frozen=True)
class L2Config:
    capacity: int = 24 * MB
    banks: int = 6
    ways: int = 8
    line: int = 128
    read_cycles: int = 1
    write_cycles: int = 5
    pinned_ways: int = 1

    def __post_init__(self):
        if self.line != 128:
            raise ConfigError("l2.line must be 128 bytes")
        if self.capacity <= 0 or self.capacity % (self.banks * self.ways * self.line):
            raise ConfigError("l2.capacity must equal sets x ways x line x banks")
        if not 0 <= self.pinned_ways < self.ways:
            raise ConfigError("l2.pinned_ways must leave at least one unpinned way")

    @property
    def sets_per_bank(self) -> int:
        return self.capacity // (self.banks * self.ways * self.line)

    @property
    def total_sets(self) -> int:
        return self.sets_per_bank * self.banks


SRAM_L2 = L2Config(capacity=6 * MB, write_cycles=1)
STT_L2 = L2Config()


@dataclass(frozen=True)
class PrefetchConfig:
    enabled: bool = False
    predictor_entries: int = 512
    warp_slots: int = 5
    counter_max: int = 15
    threshold: int = 12
    high_threshold: float = 0.3
    low_threshold: float = 0.05
    initial_granularity: int = 4096
    epoch_misses: int = 4096

    def __post_init__(self):
        if not 0.0 <= self.low_threshold <= self.high_threshold <= 1.0:
            raise ConfigError("prefetch thresholds must satisfy 0 <= low <= high <= 1")
        g = self.initial_granularity
        if g < 128 or g > 4096 or g % 128:
            raise ConfigError("prefetch.initial_granularity must be a multiple of 128 in [128, 4096]")
        if self.predictor_entries <= 0 or self.warp_slots <= 0 or self.epoch_misses <= 0:
            raise ConfigError("prefetch table sizes must be positive")


@dataclass(frozen=True)
class RegisterConfig:
    per_plane: int = 8
    topology: str = "nif"
    io_ports: int = 2
    nif_width: int = 8
    router_latency_cycles: int = 16
    redirection: bool = False
    thrash_window: int = 64
    thrash_threshold: float = 0.5

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"registers.topology must be one of {TOPOLOGIES}")
        if self.per_plane < 1 or self.io_ports < 1 or self.nif_width < 1:
            raise ConfigError("register counts and widths must be positive")
        if self.thrash_window < 1 or not 0.0 <= self.thrash_threshold <= 1.0:
            raise ConfigError("thrash window must be positive and threshold in [0, 1]")


@dataclass(frozen=True)
class OptaneConfig:
    controllers: int = 6
    banks: int = 16
    row_bytes: int = 4096
    t_rcd_ns: float = 190.0
    t_cl_ns: float = 8.9
    t_rp_ns: float = 763.0
    bus_gbps: float = 6.5


@dataclass(frozen=True)
class HeteroConfig:
    fault_page: int = 4096
    ssd_read_ns: float = 20_000.0
    pcie_gbps: float = 12.0
    host_staging_ns: float = 30_000.0
    fault_handlers: int = 4
    gddr_latency_ns: float = 250.0
    gddr_channels: int = 6
    gddr_gbps_per_channel: float = 32.0


@dataclass(frozen=True)
class HybridConfig:
    engine_cores: int = 4
    ftl_ns: float = 400.0
    dram_buffer_bytes: int = 64 * MB
    dram_bus_gbps: float = 6.4
    channel_width: int = 1


@dataclass(frozen=True)
class PlatformConfig:
    platform: str = "zng"
    geometry: Geometry = field(default_factory=Geometry)
    timing: ZTimingConfig = field(default_factory=ZTimingConfig)
    l2: L2Config = field(default_factory=L2Config)
    prefetch: PrefetchConfig = field(default_factory=PrefetchConfig)
    registers: RegisterConfig = field(default_factory=RegisterConfig)
    optane: OptaneConfig = field(default_factory=OptaneConfig)
    hetero: HeteroConfig = field(default_factory=HeteroConfig)
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    clock_mhz: int = 1200
    tlb_enabled: bool = True
    tlb_entries: int = 128
    tlb_hit_cycles: int = 1
    tlb_miss_cycles: int = 20
    icnt_cycles: int = 8
    queue_depth: int = 32
    warp_cap: int = 8
    epoch_cycles: int = 12_000

    def __post_init__(self):
        if self.platform not in PLATFORMS:
            raise ConfigError(f"unknown platform {self.platform!r}; expected one of {PLATFORMS}")
        if self.clock_mhz <= 0 or self.queue_depth < 1 or self.warp_cap < 1 or self.epoch_cycles < 1:
            raise ConfigError("clock, queue depth, warp cap and epoch must be positive")
        if self.tlb_entries < 1:
            raise ConfigError("tlb_entries must be positive")

    @property
    def is_zng(self) -> bool:
        return self.platform in ZNG_PLATFORMS

    def ns_to_cycles(self, ns: float) -> int:
        return ns_to_cycles(ns, self.clock_mhz)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, overrides: dict[str, Any] | None = None) -> "PlatformConfig":
        if not overrides:
            return self
        d = self.to_dict()
        for key, value in overrides.items():
            _set_dotted(d, key, value)
        return config_from_dict(d)


def ns_to_cycles(ns: float, clock_mhz: int = 1200) -> int:
    """Round a nanosecond duration up to whole cycles."""
    # round() first so that 640 ns * 1.2 GHz lands on exactly 768
    return int(math.ceil(round(ns * clock_mhz / 1000.0, 6)))


_PRESETS: dict[str, dict[str, Any]] = {
    "zng-base": {"l2": SRAM_L2, "prefetch.enabled": False, "registers.per_plane": 2,
                 "registers.topology": "baseline", "registers.redirection": False},
    "zng-rdopt": {"l2": STT_L2, "prefetch.enabled": True, "registers.per_plane": 2,
                  "registers.topology": "baseline", "registers.redirection": False},
    "zng-wropt": {"l2": SRAM_L2, "prefetch.enabled": False, "registers.per_plane": 8,
                  "registers.topology": "nif", "registers.redirection": False},
    "zng": {"l2": STT_L2, "prefetch.enabled": True, "registers.per_plane": 8,
            "registers.topology": "nif", "registers.redirection": True},
    "hybridgpu": {"l2": SRAM_L2, "prefetch.enabled": False, "registers.per_plane": 2,
                  "registers.topology": "baseline", "registers.redirection": False},
    "optane": {"l2": SRAM_L2, "prefetch.enabled": False},
    "hetero": {"l2": SRAM_L2, "prefetch.enabled": False},
}


def platform_config(name: str, overrides: dict[str, Any] | None = None, base: PlatformConfig | None = None) -> PlatformConfig:
    """Preset for ``name`` on top of ``base`` (or the defaults), then ``overrides``."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown platform {name!r}; expected one of {PLATFORMS}")
    d = (base or PlatformConfig()).to_dict()
    d["platform"] = name
    for key, value in _PRESETS[name].items():
        _set_dotted(d, key, dataclasses.asdict(value) if is_dataclass(value) else value)
    for key, value in (overrides or {}).items():
        _set_dotted(d, key, value)
    return config_from_dict(d)


def _set_dotted(d: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    if isinstance(node[parts[-1]], dict) and isinstance(value, dict):
        merged = dict(node[parts[-1]])
        for k, v in value.items():
            if k not in merged:
                raise ConfigError(f"unknown config key {key}.{k}")
            merged[k] = v
        value = merged
    node[parts[-1]] = value


_SECTIONS = {
    "geometry": Geometry,
    "timing": ZTimingConfig,
    "l2": L2Config,
    "prefetch": PrefetchConfig,
    "registers": RegisterConfig,
    "optane": OptaneConfig,
    "hetero": HeteroConfig,
    "hybrid": HybridConfig,
}

_JSON_TYPES = {int: "integer", float: "number", bool: "boolean", str: "string",
               "int": "integer", "float": "number", "bool": "boolean", "str": "string"}


def _schema_for(cls) -> dict:
    props = {}
    for f in fields(cls):
        if f.name in _SECTIONS:
            props[f.name] = _schema_for(_SECTIONS[f.name])
        else:
            props[f.name] = {"type": _JSON_TYPES[f.type]}
    return {"type": "object", "properties": props, "additionalProperties": False}


CONFIG_SCHEMA = _schema_for(PlatformConfig)
CONFIG_SCHEMA["properties"]["platform"]["enum"] = list(PLATFORMS)
CONFIG_SCHEMA["properties"]["registers"]["properties"]["topology"]["enum"] = list(TOPOLOGIES)


def validate_config_dict(d: dict) -> list[str]:
    """Return a list of problems; empty when ``d`` is a valid (partial) config."""
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    problems = [f"{'.'.join(map(str, e.path)) or '<root>'}: {e.message}"
                for e in sorted(validator.iter_errors(d), key=lambda e: list(map(str, e.path)))]
    if problems:
        return problems
    try:
        config_from_partial(d)
    except ConfigError as exc:
        problems.append(str(exc))
    return problems


def config_from_dict(d: dict) -> PlatformConfig:
    kwargs = {}
    for f in fields(PlatformConfig):
        if f.name not in d:
            continue
        value = d[f.name]
        if f.name in _SECTIONS:
            try:
                value = _SECTIONS[f.name](**value)
            except TypeError as exc:
                raise ConfigError(f"{f.name}: {exc}") from None
        kwargs[f.name] = value
    unknown = set(d) - {f.name for f in fields(PlatformConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return PlatformConfig(**kwargs)


def config_from_partial(d: dict) -> PlatformConfig:
    """Apply a partial config dict on top of the preset named by ``d['platform']``."""
    d = copy.deepcopy(d)
    name = d.pop("platform", "zng")
    flat = {}
    for key, value in d.items():
        if key in _SECTIONS and isinstance(value, dict):
            for k, v in value.items():
                flat[f"{key}.{k}"] = v
        else:
            flat[key] = value
    return platform_config(name, flat)


def load_config(path: str | Path) -> PlatformConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    problems = validate_config_dict(d)
    if problems:
        raise ConfigError("; ".join(problems))
    return config_from_partial(d)
