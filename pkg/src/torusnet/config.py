"""Machine configuration.

All latencies are integer cycles at ``clock_ghz``.  The defaults split the
1-hop, 55 ns end-to-end budget across sender, core network, row adapter,
edge routers, channel adapters and the SERDES/wire crossing.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


class LatencyBudget(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gc_send: int = Field(14, ge=0, description="GC store issue to core-router injection")
    gc_receive: int = Field(31, ge=0, description="SRAM counted write to blocking-read return")
    core_u_hop: int = Field(2, ge=1)
    core_v_hop: int = Field(5, ge=1)
    core_eject: int = Field(2, ge=1, description="final core router to local endpoint")
    row_adapter: int = Field(4, ge=1)
    edge_hop: int = Field(3, ge=1)
    ca_egress: int = Field(8, ge=0)
    ca_ingress: int = Field(8, ge=0)
    wire: int = Field(61, ge=1, description="SERDES serialization pipeline plus wire flight")
    fence_merge: int = Field(31, ge=0, description="channel adapter cycles to merge a fence across VCs and re-inject it")


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = CONFIG_VERSION
    torus: tuple[int, int, int] = (2, 2, 2)
    core_u: int = Field(24, ge=2, le=32)
    core_v: int = Field(12, ge=6, le=16)
    clock_ghz: float = Field(2.8, gt=0)
    latency: LatencyBudget = Field(default_factory=LatencyBudget)
    lanes_per_neighbor: int = Field(16, ge=1)
    lane_gbps: float = Field(29.0, gt=0)
    slices: int = Field(2, ge=1, le=2)
    frame_bytes: int = Field(64, ge=16, le=4096)
    inz: bool = True
    pcache: bool = True
    pcache_threshold: int = Field(2, ge=0)
    queue_flits: int = Field(8, ge=2)
    seed: int = 0
    watchdog_cycles: int = Field(100_000, ge=100)
    max_blocked_reads: int = Field(1, ge=1)

    @field_validator("torus")
    @classmethod
    def _torus(cls, v):
        if any(d < 1 or d > 32 for d in v):
            raise ValueError("each torus dimension must be in [1, 32]")
        return v

    @field_validator("version")
    @classmethod
    def _version(cls, v):
        if v != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {v}")
        return v

    @model_validator(mode="after")
    def _pcache_needs_inz(self):
        if self.pcache and not self.inz:
            raise ValueError("pcache requires inz (residuals are sent INZ-encoded)")
        return self

    @property
    def link_bytes_per_cycle(self) -> float:
        """Per-slice payload bandwidth of one neighbor link direction."""
        bits_per_ns = self.lanes_per_neighbor * self.lane_gbps / self.slices
        return bits_per_ns / 8.0 / self.clock_ghz

    def ns(self, cycles: float) -> float:
        return cycles / self.clock_ghz

    @property
    def num_nodes(self) -> int:
        x, y, z = self.torus
        return x * y * z


def load_config(source: Union[str, Path, dict, None] = None, **overrides) -> SimConfig:
    """Build a :class:`SimConfig` from a YAML/JSON path or mapping.

    Validation failures become :class:`ConfigError` whose message carries the
    dotted field path.
    """
    from pydantic import ValidationError

    data: dict = {}
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
        data = json.loads(text) if str(source).endswith(".json") else (yaml.safe_load(text) or {})
    elif isinstance(source, dict):
        data = dict(source)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimConfig.model_validate(data)
    except ValidationError as exc:
        msgs = ["{}: {}".format(".".join(str(p) for p in e["loc"]) or "<root>", e["msg"]) for e in exc.errors()]
        raise ConfigError("; ".join(msgs)) from None
