"""Command-line client.

Runs verbs in-process by default; with ``--server URL`` it posts the same
request to a running API instance instead.  Exit codes: 0 success, 2
configuration error, 3 protocol violation, 4 watchdog deadlock.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click

from . import service
from .config import ConfigError
from .fence import FenceProtocolError
from .pcache import ProtocolError
from .sync_memory import DeadlockError

EXIT_CONFIG, EXIT_PROTOCOL, EXIT_DEADLOCK = 2, 3, 4
_HTTP_EXIT = {422: EXIT_CONFIG, 409: EXIT_PROTOCOL, 504: EXIT_DEADLOCK}


def _overrides(ctx) -> dict:
    o = ctx.obj
    cfg = {}
    if o["seed"] is not None:
        cfg["seed"] = o["seed"]
    if o["inz"] is not None:
        cfg["inz"] = o["inz"]
    if o["pcache"] is not None:
        cfg["pcache"] = o["pcache"]
    if o["torus"]:
        cfg["torus"] = [int(x) for x in o["torus"].split("x")]
    return cfg


def _run(ctx, verb: str, body: dict, local) -> None:
    o = ctx.obj
    try:
        if o["server"]:
            import httpx

            body = dict(body)
            if verb != "gen-traj":
                body["config"] = {**body.get("config", {}), **_overrides(ctx)}
                if o["config"]:
                    body["config_path"] = o["config"]
            resp = httpx.post(o["server"].rstrip("/") + "/" + verb, json=body, timeout=None)
            if resp.status_code != 200:
                detail = resp.json().get("detail")
                click.echo(f"error: {detail}", err=True)
                sys.exit(_HTTP_EXIT.get(resp.status_code, 1))
            result = resp.json()["result"]
        else:
            cfg = None
            if verb != "gen-traj":
                cfg = service.config_from(None, o["config"], **_overrides(ctx))
            result = local(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (ProtocolError, FenceProtocolError) as exc:
        click.echo(f"protocol violation: {exc}", err=True)
        sys.exit(EXIT_PROTOCOL)
    except DeadlockError as exc:
        click.echo(f"deadlock: {exc}", err=True)
        sys.exit(EXIT_DEADLOCK)
    text = json.dumps(result, indent=2, sort_keys=True, default=str)
    if o["out"]:
        out = Path(o["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{verb}.json").write_text(text + "\n")
    click.echo(text)


def _hops(text: Optional[str]):
    if not text:
        return None
    if "-" in text:
        a, b = text.split("-")
        return list(range(int(a), int(b) + 1))
    return [int(x) for x in text.split(",")]


@click.group()
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), help="YAML or JSON SimConfig")
@click.option("--seed", type=int, default=None)
@click.option("--torus", default=None, help="dimensions as XxYxZ, e.g. 4x4x8")
@click.option("--inz/--no-inz", default=None, help="INZ payload encoding")
@click.option("--pcache/--no-pcache", default=None, help="particle cache")
@click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="output directory")
@click.option("--server", default=None, help="API base URL; run remotely instead of in-process")
@click.pass_context
def main(ctx, config, seed, torus, inz, pcache, out, server):
    ctx.obj = {"config": config, "seed": seed, "torus": torus, "inz": inz, "pcache": pcache, "out": out,
               "server": server}


@main.command("build-check")
@click.pass_context
def build_check(ctx):
    """Construct the machine and report topology and fence-table sizes."""
    _run(ctx, "build-check", {}, service.build_check)


@main.command()
@click.option("--hops", default=None, help="hop counts: '1-8' or '0,1,2'")
@click.option("--pairs", default=40, show_default=True)
@click.option("--iterations", default=2, show_default=True)
@click.option("--src", default=None, help="explicit GC, e.g. G,0,0,1,0")
@click.option("--dst", default=None)
@click.pass_context
def pingpong(ctx, hops, pairs, iterations, src, dst):
    """Ping-pong one-way latency per hop count, with a linear fit."""
    parse = lambda s: [s.split(",")[0]] + [int(x) for x in s.split(",")[1:]] if s else None  # noqa: E731
    body = {"hops": _hops(hops), "pairs": pairs, "iterations": iterations, "src": parse(src), "dst": parse(dst)}
    _run(ctx, "pingpong", body, lambda cfg: service.pingpong(cfg, body["hops"], pairs, iterations, body["src"], body["dst"]))


@main.command()
@click.option("--hops", default=None, help="hop counts: '0-8' or '0,4,8'")
@click.option("--pattern", default="GC_to_GC", show_default=True)
@click.option("--full", is_flag=True, help="simulate every node instead of the folded symmetric model")
@click.pass_context
def barrier(ctx, hops, pattern, full):
    """Barrier (fence) completion latency per hop count."""
    body = {"hops": _hops(hops), "pattern": pattern, "fold": not full}
    _run(ctx, "barrier", body, lambda cfg: service.barrier(cfg, body["hops"], pattern, not full))


@main.command("gen-traj")
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--particles", "n_particles", default=1024, show_default=True)
@click.option("--steps", "n_steps", default=8, show_default=True)
@click.option("--max-step", default=1 << 10, show_default=True, help="max per-step displacement (LSBs)")
@click.option("--max-accel", default=16, show_default=True)
@click.option("--box-bits", default=16, show_default=True)
@click.option("--traj-seed", default=0, show_default=True)
@click.pass_context
def gen_traj(ctx, path, n_particles, n_steps, max_step, max_accel, box_bits, traj_seed):
    """Write a synthetic smooth trajectory file."""
    body = {"out": path, "n_particles": n_particles, "n_steps": n_steps, "max_step": max_step,
            "max_accel": max_accel, "box_bits": box_bits, "seed": traj_seed}
    _run(ctx, "gen-traj", body, lambda _cfg: service.gen_traj(**body))


@main.command("md-traffic")
@click.argument("trajectory", type=click.Path(exists=True, dir_okay=False))
@click.option("--steps", default=None, type=int)
@click.option("--hop-range", default=1, show_default=True)
@click.option("--gcs-per-node", default=None, type=int)
@click.option("--warmup", default=2, show_default=True)
@click.pass_context
def md_traffic(ctx, trajectory, steps, hop_range, gcs_per_node, warmup):
    """Position/force traffic from a trajectory; writes stats CSVs with --out."""
    outdir = ctx.obj["out"]
    body = {"trajectory": trajectory, "steps": steps, "hop_range": hop_range, "gcs_per_node": gcs_per_node,
            "outdir": outdir, "warmup": warmup}
    _run(ctx, "md-traffic", body,
         lambda cfg: service.md_traffic(cfg, trajectory, None, steps, hop_range, gcs_per_node, outdir, warmup))


@main.command("replay-compress")
@click.argument("trajectory", type=click.Path(exists=True, dir_okay=False))
@click.option("--steps", default=None, type=int)
@click.option("--hop-range", default=1, show_default=True)
@click.option("--frames-out", default=None, type=click.Path(file_okay=False), help="write INZF link dumps here")
@click.option("--warmup", default=2, show_default=True)
@click.pass_context
def replay_compress(ctx, trajectory, steps, hop_range, frames_out, warmup):
    """Codec-only replay of a trajectory through the link compressors."""
    body = {"trajectory": trajectory, "steps": steps, "hop_range": hop_range, "frames_out": frames_out, "warmup": warmup}
    _run(ctx, "replay-compress", body,
         lambda cfg: service.replay(cfg, trajectory, None, steps, hop_range, frames_out, warmup))


if __name__ == "__main__":
    main()
