"""Append-only run trace and its JSON Lines persistence.

One JSON object per line, keys sorted, compact separators, so identical runs
serialize byte-for-byte identically. The closing ``RunSummary`` line carries
the SHA-256 of every line before it.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from .model import SkylinkError

SCHEMA_VERSION = 1

RECORD_KINDS = frozenset(
    {
        "RunStart",
        "Send",
        "Delivered",
        "Dropped",
        "Modified",
        "Injected",
        "StateChange",
        "Anomaly",
        "TimerFired",
        "RunSummary",
    }
)

# fields every record of a kind must carry (beyond seq/time_ms/kind)
REQUIRED_FIELDS = {
    "RunStart": ("schema_version", "entities", "seed"),
    "Send": ("env", "src", "dst", "interface", "message_type", "payload"),
    "Delivered": ("env", "src", "dst", "interface", "message_type", "payload"),
    "Dropped": ("env", "src", "dst", "interface", "message_type"),
    "Modified": ("env", "src", "dst", "interface", "message_type", "payload", "attacker_id"),
    "Injected": ("env", "src", "dst", "interface", "message_type", "payload", "attacker_id"),
    "StateChange": ("src", "what"),
    "Anomaly": ("src", "reason"),
    "TimerFired": ("src", "timer"),
    "RunSummary": ("trace_hash", "records"),
}


class MalformedTrace(SkylinkError):
    pass


def dumps(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


class Trace:
    def __init__(self) -> None:
        self.records: list[dict[str, Any]] = []
        self.summary: dict[str, Any] | None = None

    def append(self, kind: str, time_ms: int, **fields: Any) -> dict[str, Any]:
        if self.summary is not None:
            raise RuntimeError("trace is finalized")
        rec = {"seq": len(self.records), "time_ms": time_ms, "kind": kind}
        rec.update({k: v for k, v in fields.items() if v is not None})
        self.records.append(rec)
        return rec

    def lines(self) -> Iterator[str]:
        for rec in self.records:
            yield dumps(rec)

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def finalize(self, time_ms: int, **summary: Any) -> dict[str, Any]:
        if self.summary is not None:
            return self.summary
        digest = self.digest()
        self.summary = {
            "seq": len(self.records),
            "time_ms": time_ms,
            "kind": "RunSummary",
            "trace_hash": digest,
            "records": len(self.records),
            **summary,
        }
        return self.summary

    def all_records(self) -> list[dict[str, Any]]:
        return self.records + ([self.summary] if self.summary else [])

    def write(self, path: str | Path) -> None:
        if self.summary is None:
            raise RuntimeError("finalize the trace before writing it")
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")
            fh.write(dumps(self.summary) + "\n")

    def of_kind(self, *kinds: str) -> list[dict[str, Any]]:
        return [r for r in self.records if r["kind"] in kinds]


def parse_lines(lines: Iterable[str]) -> list[dict[str, Any]]:
    """Parse and schema-check trace lines; raise ``MalformedTrace`` on any defect."""
    records = []
    h = hashlib.sha256()
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            raise MalformedTrace(f"line {lineno}: blank line")
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"line {lineno}: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise MalformedTrace(f"line {lineno}: record is not an object")
        kind = rec.get("kind")
        if kind not in RECORD_KINDS:
            raise MalformedTrace(f"line {lineno}: unknown record kind {kind!r}")
        for key in ("seq", "time_ms", *REQUIRED_FIELDS[kind]):
            if key not in rec:
                raise MalformedTrace(f"line {lineno}: {kind} record missing {key!r}")
        if rec["seq"] != len(records):
            raise MalformedTrace(f"line {lineno}: seq {rec['seq']} out of order")
        if kind == "RunSummary":
            if rec["trace_hash"] != h.hexdigest():
                raise MalformedTrace(f"line {lineno}: trace hash mismatch")
        else:
            h.update(line.encode())
            h.update(b"\n")
        records.append(rec)
    if not records:
        raise MalformedTrace("empty trace")
    if records[0]["kind"] != "RunStart":
        raise MalformedTrace("trace does not start with RunStart")
    if records[-1]["kind"] != "RunSummary":
        raise MalformedTrace("trace is truncated: no RunSummary record")
    if sum(r["kind"] == "RunSummary" for r in records) != 1:
        raise MalformedTrace("more than one RunSummary record")
    if records[0]["schema_version"] != SCHEMA_VERSION:
        raise MalformedTrace(f"unsupported trace schema {records[0]['schema_version']}")
    return records


def read_trace(path: str | Path) -> list[dict[str, Any]]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_lines(fh)
    except UnicodeDecodeError as exc:
        raise MalformedTrace(f"not a text trace: {exc}") from None
