"""Verification reports (text and JSON) and per-run summaries for campaigns."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Optional

from .invariants import Finding, InvariantResult, TraceIndex, location_rounds
from .procedures import Verdict

PROFILES = ("strict", "lenient")


@dataclass
class Report:
    scenario: str
    seed: Optional[int]
    trace_hash: str
    verdicts: list[Verdict] = field(default_factory=list)
    invariants: list[InvariantResult] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)

    @property
    def violations(self) -> list[Verdict]:
        return [v for v in self.verdicts if v.outcome == "Violation"]

    @property
    def failed_invariants(self) -> list[InvariantResult]:
        return [i for i in self.invariants if not i.passed]

    def passes(self, profile: str = "strict") -> bool:
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        clean = not self.violations and not self.failed_invariants
        if profile == "lenient":
            return clean
        return clean and not self.findings and all(v.outcome == "Conformant" for v in self.verdicts)

    def exit_code(self, profile: str = "strict") -> int:
        return 0 if self.passes(profile) else 1

    def to_dict(self, profile: str = "strict") -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "trace_hash": self.trace_hash,
            "profile": profile,
            "passed": self.passes(profile),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "invariants": [i.to_dict() for i in self.invariants],
            "findings": [f.to_dict() for f in self.findings],
        }

    def render(self, profile: str = "strict") -> str:
        lines = [f"scenario {self.scenario} seed {self.seed}", f"trace {self.trace_hash}", ""]
        lines.append("workflows:")
        for v in self.verdicts:
            extra = ""
            if v.outcome == "Violation":
                extra = f" at {v.step} (seq {v.seq}): {v.reason}"
            elif v.observed:
                extra = ": " + "; ".join(v.observed)
            lines.append(f"  {v.instance:<28} {v.result or '-':<9} {v.outcome}{extra}")
        lines.append("invariants:")
        for i in self.invariants:
            tail = "" if i.passed else f"  (seq {i.witness}: {i.detail})"
            lines.append(f"  {'pass' if i.passed else 'FAIL'}  {i.name}{tail}")
        lines.append(f"findings: {len(self.findings)}")
        for f in self.findings:
            lines.append(f"  [{f.category}] seq {f.seq}: {f.detail}")
        lines.append("")
        lines.append(f"{profile}: {'PASS' if self.passes(profile) else 'FAIL'}")
        return "\n".join(lines) + "\n"


def summarize(records: list[dict[str, Any]]) -> dict[str, Any]:
    """Per-run numbers a campaign folds together."""
    ix = TraceIndex(records)
    outcomes: dict[str, Counter] = defaultdict(Counter)
    first_send: dict[str, dict] = {}
    sends_per_corr: Counter = Counter()
    for r in ix.body:
        if r["kind"] == "Send" and r["env"] not in ix.tainted:
            corr = r["payload"].get("corr") or ""
            first_send.setdefault(corr, r)
            sends_per_corr[corr] += 1
    aa_msgs = aa_ms = None
    max_retries = 0
    for r in ix.notes("workflow_outcome"):
        p = r["payload"]
        outcomes[p["workflow"]][p["outcome"]] += 1
        max_retries = max(max_retries, int(p.get("retries", 0)))
        corr = r.get("corr") or ""
        if p["workflow"] == "UasAa" and p["outcome"] == "Success" and aa_msgs is None and corr in first_send:
            aa_msgs = sends_per_corr[corr]
            aa_ms = r["time_ms"] - first_send[corr]["time_ms"]
    anomalies = Counter(r["reason"] for r in ix.body if r["kind"] == "Anomaly" and r["src"] not in ix.attackers)
    errors = []
    for rd in location_rounds(ix):
        if rd["truth"]:
            truth = [math.fsum(t[i] for t in rd["truth"]) / len(rd["truth"]) for i in range(3)]
            errors.append([rd["estimate"][i] - truth[i] for i in range(3)])
    return {
        "trace_hash": ix.summary.get("trace_hash"),
        "outcomes": {wf: dict(c) for wf, c in sorted(outcomes.items())},
        "anomalies": dict(sorted(anomalies.items())),
        "aa_messages_to_success": aa_msgs,
        "aa_ms_to_success": aa_ms,
        "max_retries": max_retries,
        "location_errors": errors,
        "location_mismatch": anomalies.get("LocationMismatch", 0),
        "intercepted": sum(1 for r in ix.body if r["kind"] == "Anomaly" and r["reason"] == "Intercepted"),
        "c2_modes": [r["payload"]["to"] for r in ix.notes("c2_mode")],
    }
