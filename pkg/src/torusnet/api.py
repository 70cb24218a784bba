"""HTTP front end.  Run with ``uvicorn torusnet.api:app``."""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import service
from .config import ConfigError, SimConfig
from .fence import FenceProtocolError
from .pcache import ProtocolError
from .sync_memory import DeadlockError

app = FastAPI(title="torusnet", version="0.1.0")


class ConfigBody(BaseModel):
    config: dict = Field(default_factory=dict, description="SimConfig fields; see torusnet.config")
    config_path: Optional[str] = None

    def sim_config(self) -> SimConfig:
        return service.config_from(self.config, self.config_path)


class PingpongRequest(ConfigBody):
    hops: Optional[list[int]] = None
    pairs: int = Field(40, ge=1)
    iterations: int = Field(2, ge=1)
    src: Optional[list[int | str]] = None
    dst: Optional[list[int | str]] = None


class BarrierRequest(ConfigBody):
    hops: Optional[list[int]] = None
    pattern: str = "GC_to_GC"
    fold: bool = True


class GenTrajRequest(BaseModel):
    out: str
    n_particles: int = Field(ge=1)
    n_steps: int = Field(ge=1)
    max_step: int = Field(1 << 10, ge=0)
    max_accel: int = Field(16, ge=0)
    init_velocity: Optional[int] = None
    box_bits: int = Field(16, ge=1, le=31)
    seed: int = 0


class TrafficRequest(ConfigBody):
    trajectory: Optional[str] = None
    gen: Optional[dict] = None
    steps: Optional[int] = None
    hop_range: int = Field(1, ge=0)
    warmup: int = Field(2, ge=0)


class MdTrafficRequest(TrafficRequest):
    gcs_per_node: Optional[int] = None
    outdir: Optional[str] = None


class ReplayRequest(TrafficRequest):
    frames_out: Optional[str] = None


class Result(BaseModel):
    ok: bool = True
    result: dict[str, Any]


def _call(fn, *args, **kw) -> Result:
    """Map domain failures onto HTTP codes the CLI turns back into exit codes."""
    try:
        return Result(result=fn(*args, **kw))
    except ConfigError as exc:
        raise HTTPException(422, detail={"kind": "config", "message": str(exc)})
    except (ProtocolError, FenceProtocolError) as exc:
        raise HTTPException(409, detail={"kind": "protocol", "message": str(exc)})
    except DeadlockError as exc:
        raise HTTPException(504, detail={"kind": "deadlock", "message": str(exc)})


@app.get("/health")
def health() -> dict:
    return {"ok": True}


@app.post("/build-check", response_model=Result)
def build_check(req: ConfigBody) -> Result:
    return _call(lambda: service.build_check(req.sim_config()))


@app.post("/pingpong", response_model=Result)
def pingpong(req: PingpongRequest) -> Result:
    return _call(lambda: service.pingpong(req.sim_config(), req.hops, req.pairs, req.iterations, req.src, req.dst))


@app.post("/barrier", response_model=Result)
def barrier(req: BarrierRequest) -> Result:
    return _call(lambda: service.barrier(req.sim_config(), req.hops, req.pattern, req.fold))


@app.post("/gen-traj", response_model=Result)
def gen_traj(req: GenTrajRequest) -> Result:
    return _call(service.gen_traj, **req.model_dump())


@app.post("/md-traffic", response_model=Result)
def md_traffic(req: MdTrafficRequest) -> Result:
    return _call(lambda: service.md_traffic(req.sim_config(), req.trajectory, req.gen, req.steps, req.hop_range,
                                            req.gcs_per_node, req.outdir, req.warmup))


@app.post("/replay-compress", response_model=Result)
def replay_compress(req: ReplayRequest) -> Result:
    return _call(lambda: service.replay(req.sim_config(), req.trajectory, req.gen, req.steps, req.hop_range,
                                        req.frames_out, req.warmup))
