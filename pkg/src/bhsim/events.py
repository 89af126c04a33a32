"""Run event log: JSON-lines records with a strict, versioned schema.

One record per line, canonical key order and separators, so logs from
identical runs are byte-identical and trivially diffable.  Records are
totally ordered by the ``seq`` counter (ties in time keep emission
order).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

SCHEMA_VERSION = 1

EVENT_KINDS = (
    "detection",
    "track",
    "phase",
    "claim",
    "pop",
    "failure",
    "geofence",
)


def make_event(
    seq: int, t: float, agent: Optional[int], kind: str, data: dict
) -> dict:
    if kind not in EVENT_KINDS:
        raise ValueError(f"unknown event kind {kind!r}")
    return {
        "v": SCHEMA_VERSION,
        "seq": seq,
        "t": t,
        "agent": agent,
        "kind": kind,
        "data": data,
    }


def emit_line(event: dict) -> str:
    return json.dumps(event, sort_keys=True, separators=(",", ":"))


def parse_line(line: str) -> dict:
    event = json.loads(line)
    if event.get("v") != SCHEMA_VERSION:
        raise ValueError(f"unsupported event schema version {event.get('v')!r}")
    return event


def serialize_events(events: Iterable[dict]) -> bytes:
    return "".join(emit_line(e) + "\n" for e in events).encode("utf-8")


def write_event_log(path: str | Path, events: Iterable[dict]) -> None:
    Path(path).write_bytes(serialize_events(events))


def read_event_log(path: str | Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(parse_line(line))
    return out
