"""Machine-readable run output: JSON summary plus CSV tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

from .sim import Simulator

LINK_FIELDS = ["node", "side", "dir", "ptype", "raw_bytes", "wire_bytes"]
LATENCY_FIELDS = ["src", "dst", "torus_hops", "cycles", "ns"]
ACTIVITY_FIELDS = ["bucket_start_cycle", "component", "flits"]
STEP_FIELDS = ["step", "end_cycle", "ptype", "raw_bytes", "wire_bytes"]
FENCE_FIELDS = ["event", "cycle", "instance", "endpoint"]


def summary(sim: Optional[Simulator]) -> dict:
    if sim is None:
        return {"injected": 0, "delivered": 0, "conservation_ok": True}
    st = sim.stats
    raw = wire = 0
    for _, a in sim.adapters():
        raw += sum(a.raw_bytes.values())
        wire += sum(a.wire_bytes.values())
    return {
        "injected": st.injected,
        "delivered": st.delivered,
        "conservation_ok": st.conservation_ok(),
        "injected_by_type": dict(sorted(st.injected_by_type.items())),
        "delivered_by_type": dict(sorted(st.delivered_by_type.items())),
        "link_raw_bytes": raw,
        "link_wire_bytes": wire,
        "end_cycle": st.end_time,
        "fences_completed": sum(1 for i in sim.fences.instances if i.retired_at is not None),
        "trace_events": sim.trace_events,
        "trace_sha256": sim.trace_digest,
    }


def _write(path: Path, fields: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def _ep(ep) -> str:
    return ":".join(str(x) for x in ep)


def emit_stats(sim: Optional[Simulator], outdir, fmt: str = "both", extra: Optional[dict] = None) -> list[Path]:
    """Write ``summary.json`` and/or CSV tables into ``outdir``.

    ``sim=None`` stands for an empty run: headers-only CSVs and a zero
    summary.  Output depends only on simulator state, so identical runs
    produce byte-identical files.
    """
    if fmt not in ("json", "csv", "both"):
        raise ValueError(f"unknown stats format {fmt!r}")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("json", "both"):
        doc = summary(sim)
        if extra:
            doc["results"] = extra
        p = out / "summary.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
        written.append(p)
    if fmt in ("csv", "both"):
        cfg = sim.cfg if sim is not None else None
        links, lats, act, steps, fences = [], [], [], [], []
        if sim is not None:
            for (_, n, s, d), a in sim.adapters():
                for ptype in sorted(set(a.raw_bytes) | set(a.wire_bytes)):
                    links.append([n, s, d, ptype, a.raw_bytes[ptype], a.wire_bytes[ptype]])
            for src, dst, hops, cyc in sim.stats.latencies:
                lats.append([_ep(src), _ep(dst), hops, f"{cyc:.4f}", f"{cfg.ns(cyc):.4f}"])
            for (bucket, kind), flits in sorted(sim.stats.activity.items()):
                act.append([bucket * sim.bucket, kind, flits])
            for st in sim.stats.md_steps:
                for ptype in sorted(set(st["raw"]) | set(st["wire"])):
                    steps.append([st["step"], f"{st['end_cycle']:.4f}", ptype, st["raw"].get(ptype, 0), st["wire"].get(ptype, 0)])
            for ev in sim.fences.trace:
                fences.append([ev[0], f"{ev[1]:.4f}", ev[2], _ep(ev[3]) if len(ev) > 3 else ""])
        for name, fields, rows in (
            ("links.csv", LINK_FIELDS, links),
            ("latencies.csv", LATENCY_FIELDS, lats),
            ("activity.csv", ACTIVITY_FIELDS, act),
            ("md_steps.csv", STEP_FIELDS, steps),
            ("fences.csv", FENCE_FIELDS, fences),
        ):
            p = out / name
            _write(p, fields, rows)
            written.append(p)
    return written
