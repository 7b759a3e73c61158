"""Trace records and their line format.

A trace is a header line, one tab-separated line per event, and a trailer::

    #cbcast-trace v1 scenario=3f2a... seed=7 prng=splitmix64 roster=A,B,C
    0	0	A	request-in	{"payload":"x"}
    ...
    #end status=quiescent ticks=42

Event fields are ``seq``, ``tick``, ``process``, ``kind`` and a JSON payload
in canonical encoding (sorted keys, no spaces).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .core import DecodeError

TRACE_MAGIC = "#cbcast-trace v1"
EVENT_KINDS = (
    "notify",
    "packet-in",
    "request-in",
    "queue",
    "deliver",
    "install",
    "halt",
    "discard",
    "takeup",
    "subtx",
)


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    tick: int
    process: str
    kind: str
    payload: dict[str, Any]

    def render(self) -> str:
        body = json.dumps(self.payload, sort_keys=True, separators=(",", ":"))
        return f"{self.seq}\t{self.tick}\t{self.process}\t{self.kind}\t{body}"


@dataclass
class Trace:
    header: dict[str, str] = field(default_factory=dict)
    events: list[TraceEvent] = field(default_factory=list)
    trailer: dict[str, str] = field(default_factory=dict)

    @property
    def roster(self) -> list[str]:
        raw = self.header.get("roster", "")
        return [p for p in raw.split(",") if p]

    @property
    def status(self) -> str:
        return self.trailer.get("status", "unknown")

    def render(self) -> str:
        head = " ".join([TRACE_MAGIC] + [f"{k}={v}" for k, v in self.header.items()])
        tail = " ".join(["#end"] + [f"{k}={v}" for k, v in self.trailer.items()])
        lines = [head] + [e.render() for e in self.events] + [tail]
        return "\n".join(lines) + "\n"


def _fields(line: str, prefix: str) -> dict[str, str]:
    out = {}
    for tok in line[len(prefix):].split():
        if "=" not in tok:
            raise DecodeError(f"bad header token {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def parse_trace(text: str) -> Trace:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(TRACE_MAGIC):
        raise DecodeError("missing trace header")
    trace = Trace(header=_fields(lines[0], TRACE_MAGIC))
    last_seq = -1
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#end"):
            trace.trailer = _fields(line, "#end")
            continue
        parts = line.split("\t", 4)
        if len(parts) != 5:
            raise DecodeError(f"line {n}: expected 5 fields")
        seq_s, tick_s, proc, kind, body = parts
        if kind not in EVENT_KINDS:
            raise DecodeError(f"line {n}: unknown event kind {kind!r}")
        try:
            seq, tick = int(seq_s), int(tick_s)
            payload = json.loads(body)
        except ValueError as exc:
            raise DecodeError(f"line {n}: {exc}") from exc
        if seq <= last_seq:
            raise DecodeError(f"line {n}: seq {seq} not increasing")
        last_seq = seq
        trace.events.append(TraceEvent(seq, tick, proc, kind, payload))
    return trace


def renumber(events: Iterable[TraceEvent]) -> list[TraceEvent]:
    """Reassign consecutive seq numbers (used when editing traces by hand)."""
    return [TraceEvent(i, e.tick, e.process, e.kind, e.payload) for i, e in enumerate(events)]
