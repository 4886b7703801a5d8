"""Security invariants evaluated offline over a parsed trace.

Every check returns an ``InvariantResult`` carrying the seq of the first
record that witnesses a failure. Checks read only the trace: the RunStart
header supplies the static context (entity kinds, aerial subscriptions,
valid USS list, noise and threshold).
"""

from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .messages import USER_PLANE
from .model import EntityKind, gate_from_snapshot, policy_sequence_legal
from .trace import dumps

SESSION_CARRIED = frozenset({"U1", "U3", "U4", "U9"})
OPEN_POLICIES = frozenset({"OpenToUss", "C2Authorized"})
C2_DETECTIONS = frozenset({"TagMismatch", "UnauthenticatedC2", "C2Replay"})
# estimate error bound, in per-axis standard deviations of the mean
SPOOF_MARGIN_SIGMAS = 6.0


@dataclass(frozen=True)
class InvariantResult:
    name: str
    passed: bool
    witness: Optional[int] = None
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "passed": self.passed}
        if not self.passed:
            d.update(witness=self.witness, detail=self.detail)
        return d


def _ok(name: str) -> InvariantResult:
    return InvariantResult(name, True)


def _fail(name: str, seq: Optional[int], detail: str) -> InvariantResult:
    return InvariantResult(name, False, seq, detail)


class TraceIndex:
    """Lookup tables shared by the invariant checks."""

    def __init__(self, records: list[dict[str, Any]]) -> None:
        self.records = records
        self.header = records[0]
        self.summary = records[-1]
        self.body = records[1:-1]
        self.kinds: dict[str, str] = dict(self.header.get("entities", {}))
        self.context: dict[str, Any] = self.header.get("context", {})
        self.attackers = {a["id"] for a in self.context.get("attackers", [])}
        self.sends: dict[int, dict] = {}  # env -> Send or Injected record
        self.delivered: dict[int, list[dict]] = defaultdict(list)
        self.dropped: dict[int, dict] = {}
        self.modified: set[int] = set()
        self.children: dict[int, list[dict]] = defaultdict(list)  # env -> records caused by it
        for r in self.body:
            k = r["kind"]
            if k in ("Send", "Injected"):
                self.sends[r["env"]] = r
            elif k == "Delivered":
                self.delivered[r["env"]].append(r)
            elif k == "Dropped":
                self.dropped[r["env"]] = r
            elif k == "Modified":
                self.modified.add(r["env"])
            if r.get("cause") is not None:
                self.children[r["cause"]].append(r)
        self.tainted = self._taint()
        self.untrusted = self.forged | self.tainted  # deliveries whose effects are the attacker's

    def kind(self, eid: Optional[str]) -> str:
        return self.kinds.get(eid or "", "")

    def _taint(self) -> set[int]:
        """Envelopes whose send an attacker originated: injections and everything caused by a forged delivery.

        A modified envelope's own send stays genuine; only what its altered
        delivery caused is tainted (see ``forged``).
        """
        self.forged = {e for e, r in self.sends.items() if r["kind"] == "Injected"} | self.modified
        tainted = {e for e, r in self.sends.items() if r["kind"] == "Injected"}
        for r in self.body:
            if r["kind"] == "Send" and (r.get("cause") in tainted or r.get("cause") in self.forged):
                tainted.add(r["env"])
        return tainted

    def descendants(self, env: int) -> list[dict]:
        out, stack, seen = [], [env], {env}
        while stack:
            for r in self.children.get(stack.pop(), ()):
                out.append(r)
                e = r.get("env")
                if r["kind"] in ("Send", "Injected") and e not in seen:
                    seen.add(e)
                    stack.append(e)
        return sorted(out, key=lambda r: r["seq"])

    def notes(self, what: str) -> list[dict]:
        return [r for r in self.body if r["kind"] == "StateChange" and r.get("what") == what]


# -- individual invariants -----------------------------------------------------------


def session_confinement(ix: TraceIndex) -> InvariantResult:
    """Before a node holds an open session, its user-plane traffic reaches only the UAAF."""
    name = "session_confinement"
    open_for: dict[str, set[int]] = defaultdict(set)
    for r in ix.body:
        if r["kind"] == "StateChange" and r.get("what") == "session" and ix.kind(r["src"]) == "smf":
            p = r["payload"]
            sid = p["session_id"]
            for n in (p["owner"], p.get("peer")):
                if n:
                    open_for[n].discard(sid)
            if p["state"] == "Active" and p["policy"] in OPEN_POLICIES:
                for n in (p["owner"], p.get("peer")):
                    if n:
                        open_for[n].add(sid)
        elif (
            r["kind"] == "Send"
            and r["message_type"] in USER_PLANE
            and r["interface"] in SESSION_CARRIED
            and ix.kind(r["src"]) in ("uav", "uavc")
            and not open_for[r["src"]]
            and ix.kind(r["dst"]) != "uaaf"
            and ix.delivered.get(r["env"])
        ):
            return _fail(name, ix.delivered[r["env"]][0]["seq"], f"{r['message_type']} from {r['src']} reached {r['dst']} before A&A")
    return _ok(name)


def gate_soundness(ix: TraceIndex) -> InvariantResult:
    name = "gate_soundness"
    for r in ix.body:
        if r["kind"] == "Send" and r.get("session"):
            verdict = gate_from_snapshot(r["session"], r["src"], r["dst"], EntityKind(ix.kind(r["dst"])))
            if not verdict.deliver:
                return _fail(name, r["seq"], f"session {r['session']['session_id']} should have blocked: {verdict.reason}")
    return _ok(name)


def policy_monotonic(ix: TraceIndex) -> InvariantResult:
    name = "policy_monotonic"
    seen: dict[int, list[str]] = defaultdict(list)
    for r in ix.notes("session"):
        p = r["payload"]
        seen[p["session_id"]].append("Terminated" if p["state"] == "Terminated" else p["policy"])
        if not policy_sequence_legal(seen[p["session_id"]]):
            return _fail(name, r["seq"], f"session {p['session_id']} policy went {' -> '.join(seen[p['session_id']])}")
    return _ok(name)


def identity_unique(ix: TraceIndex) -> InvariantResult:
    name = "identity_unique"
    owner: dict[str, str] = {}
    for r in ix.body:
        if r["kind"] == "Send" and r["message_type"] == "IdentityBinding" and r["env"] not in ix.tainted:
            p = r["payload"]
            prev = owner.setdefault(p["caa_id"], p["ue_id"])
            if prev != p["ue_id"]:
                return _fail(name, r["seq"], f"{p['caa_id']} bound to {prev} and {p['ue_id']}")
    issued: set[str] = set()
    for r in ix.notes("credentials_issued"):
        new = r["payload"]["new_caa_id"]
        if new in issued:
            return _fail(name, r["seq"], f"{new} issued twice")
        issued.add(new)
    return _ok(name)


def aa_gate(ix: TraceIndex) -> InvariantResult:
    """A node is authenticated only if registered and subscribed for aerial use."""
    name = "aa_gate"
    aerial = ix.context.get("aerial_allowed", {})
    registered: set[str] = set()
    for r in ix.body:
        if r["kind"] != "StateChange":
            continue
        if r.get("what") == "registered":
            registered.add(r["payload"]["node"])
        elif r.get("what") == "authenticated" and ix.kind(r["src"]) == "uaaf":
            node = r["payload"]["node"]
            if not aerial.get(node, False):
                return _fail(name, r["seq"], f"{node} authenticated without an aerial subscription")
            if node not in registered:
                return _fail(name, r["seq"], f"{node} authenticated before primary registration")
    return _ok(name)


def c2_gate(ix: TraceIndex) -> InvariantResult:
    """Genuine C2 is delivered only after pairing authorization and the secure-session ack."""
    name = "c2_gate"
    paired: set[tuple[str, str]] = set()
    secured: set[str] = set()
    for r in ix.body:
        k = r["kind"]
        if k == "StateChange" and r.get("what") == "pairing" and r["payload"].get("authorized"):
            paired.add((r["payload"]["uav"], r["payload"]["uavc"]))
        elif k == "Delivered" and r["message_type"] == "SecureSessionAck" and r["payload"].get("ok") and r["env"] not in ix.untrusted:
            secured.add(r["dst"])
        elif k == "Delivered" and r["message_type"] == "C2Payload" and r["env"] not in ix.untrusted and not r.get("duplicate"):
            p = r["payload"]
            ends = (p["origin"], p["target"])
            if {ix.kind(e) for e in ends} != {"uav", "uavc"}:
                continue
            uav = ends[0] if ix.kind(ends[0]) == "uav" else ends[1]
            uavc = ends[1] if uav == ends[0] else ends[0]
            if (uav, uavc) not in paired or uav not in secured:
                return _fail(name, r["seq"], f"C2 between {uav} and {uavc} delivered before pairing and secure session")
    return _ok(name)


def _vec(v) -> tuple[float, float, float]:
    if isinstance(v, dict):
        return (v["x"], v["y"], v["z"])
    return tuple(v)  # type: ignore[return-value]


def _mean(points: list) -> tuple[float, float, float]:
    n = len(points)
    return tuple(math.fsum(p[i] for p in points) / n for i in range(3))  # type: ignore[return-value]


def _close(a, b, tol: float = 1e-6) -> bool:
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def location_rounds(ix: TraceIndex) -> list[dict[str, Any]]:
    """One entry per LMF estimate: the measurements it drew on and the ground truth."""
    pending: dict[str, list[dict]] = defaultdict(list)
    rounds = []
    for r in ix.body:
        if r["kind"] != "StateChange":
            continue
        if r.get("what") == "measurement":
            pending[r.get("corr") or ""].append(r["payload"])
        elif r.get("what") == "estimate" and ix.kind(r["src"]) == "lmf":
            ms = pending.pop(r.get("corr") or "", [])
            if r["payload"].get("estimate") is None:
                continue  # no coverage: nothing was estimated
            rounds.append(
                {
                    "seq": r["seq"],
                    "corr": r.get("corr"),
                    "estimate": _vec(r["payload"]["estimate"]),
                    "observed": [_vec(m["observed"]) for m in ms if m.get("observed") is not None],
                    "truth": [_vec(m["truth"]) for m in ms if m.get("observed") is not None],
                }
            )
    return rounds


def location_provenance(ix: TraceIndex) -> InvariantResult:
    """Reported estimates are the LMF's, and the LMF's are the mean of the NG-BS measurements."""
    name = "location_provenance"
    estimates: dict[str, list] = defaultdict(list)
    for rd in location_rounds(ix):
        if not rd["observed"] or not _close(rd["estimate"], _mean(rd["observed"])):
            return _fail(name, rd["seq"], "LMF estimate is not the mean of the measurements it received")
        estimates[rd["corr"]].append(rd["estimate"])
    for r in ix.body:
        if (
            r["kind"] == "Send"
            and r["message_type"] == "LocationReport"
            and ix.kind(r["dst"]) == "uss"
            and r["env"] not in ix.tainted
            and r["payload"].get("estimate") is not None
        ):
            est = _vec(r["payload"]["estimate"])
            if not any(_close(est, e) for e in estimates.get(r["payload"]["corr"], [])):
                return _fail(name, r["seq"], "location report does not carry an LMF estimate")
    return _ok(name)


def spoof_flagged(ix: TraceIndex) -> InvariantResult:
    """Verdicts follow the threshold rule, and a reported position far from the truth is flagged."""
    name = "spoof_flagged"
    sigma = float(ix.context.get("noise_sigma", 0.0))
    truth_by_corr = {rd["corr"]: rd for rd in location_rounds(ix)}
    flagged = {r.get("corr") for r in ix.body if r["kind"] == "Anomaly" and r.get("reason") == "LocationMismatch"}
    for r in ix.notes("location_verdict"):
        p = r["payload"]
        if "x" not in (p.get("reported") or {}) or "x" not in (p.get("estimate") or {}):
            continue
        rep, est = _vec(p["reported"]), _vec(p["estimate"])
        d = math.dist(rep, est)
        label = "Consistent" if d <= p["threshold"] else "Mismatch"
        if label != p["verdict"] or abs(d - p["distance"]) > 1e-6:
            return _fail(name, r["seq"], f"verdict {p['verdict']} but distance {d:.3f} against {p['threshold']}")
        if label == "Mismatch" and r.get("corr") not in flagged:
            return _fail(name, r["seq"], "mismatch without a LocationMismatch anomaly")
        rd = truth_by_corr.get(r.get("corr"))
        if rd and rd["truth"]:
            n = len(rd["truth"])
            margin = SPOOF_MARGIN_SIGMAS * sigma * math.sqrt(3.0 / n)
            off = math.dist(rep, _mean(rd["truth"]))
            if off > p["threshold"] + margin and label != "Mismatch":
                return _fail(name, r["seq"], f"reported position {off:.1f} m from truth accepted")
    return _ok(name)


def replay_rejected(ix: TraceIndex) -> InvariantResult:
    """A replayed A&A request is answered with a ReplayDetected denial."""
    name = "replay_rejected"
    seen: set[int] = set()
    for r in ix.body:
        if r.get("message_type") != "AaRequest" or r.get("nonce") is None:
            continue
        if r["kind"] == "Send":
            seen.add(r["nonce"])
        elif r["kind"] == "Injected" and r["nonce"] in seen and ix.delivered.get(r["env"]):
            ok = any(
                d["kind"] == "Send"
                and d["message_type"] == "AaResult"
                and d["payload"].get("reason") == "ReplayDetected"
                for d in ix.children.get(r["env"], ())
            )
            if not ok:
                return _fail(name, r["seq"], f"replayed AaRequest env {r['env']} was not rejected")
    return _ok(name)


def fake_uss_rejected(ix: TraceIndex) -> InvariantResult:
    """Messages forged in the name of an unlisted USS change no state and reach no UAS or SMF."""
    name = "fake_uss_rejected"
    valid = set(ix.context.get("valid_uss", []))
    for r in ix.body:
        if r["kind"] != "Injected" or ix.kind(r["src"]) != "uss" or r["src"] in valid:
            continue
        for d in ix.descendants(r["env"]):
            if d["kind"] == "StateChange":
                return _fail(name, d["seq"], f"forged {r['message_type']} from {r['src']} changed {d['src']} state")
            if d["kind"] == "Send" and ix.kind(d["dst"]) in ("uav", "uavc", "smf"):
                return _fail(name, d["seq"], f"forged {r['message_type']} from {r['src']} propagated to {d['dst']}")
    return _ok(name)


def id_reissue(ix: TraceIndex) -> InvariantResult:
    """After re-issue a node stops presenting its superseded CAA-level id."""
    name = "id_reissue"
    retired: dict[str, set[str]] = defaultdict(set)
    for r in ix.body:
        if r["kind"] == "StateChange" and r.get("what") == "caa_reissued":
            retired[r["src"]].add(r["payload"]["old"])
        elif r["kind"] == "Send" and r["env"] not in ix.tainted and r["payload"].get("caa_id") in retired.get(r["src"], ()):
            return _fail(name, r["seq"], f"{r['src']} still presents {r['payload']['caa_id']}")
    return _ok(name)


def no_silent_tampering(ix: TraceIndex) -> InvariantResult:
    """A modified C2 payload that reaches an endpoint is detected there."""
    name = "no_silent_tampering"
    for r in ix.body:
        if r["kind"] == "Modified" and r["message_type"] == "C2Payload" and ix.delivered.get(r["env"]):
            if not any(d["kind"] == "Anomaly" and d["reason"] in C2_DETECTIONS for d in ix.children.get(r["env"], ())):
                return _fail(name, r["seq"], f"tampered C2 env {r['env']} accepted silently")
    return _ok(name)


def attribution(ix: TraceIndex) -> InvariantResult:
    name = "attribution"
    for r in ix.body:
        if r["kind"] in ("Dropped", "Modified", "Injected") and not r.get("attacker_id"):
            return _fail(name, r["seq"], f"{r['kind']} record without an attacker")
        if r["kind"] == "StateChange" and r.get("what") == "c2_mode" and r["payload"].get("jam") and not r.get("attacker_id"):
            return _fail(name, r["seq"], "jam-induced mode change without an attacker")
    return _ok(name)


def conservation(ix: TraceIndex) -> InvariantResult:
    """Every envelope is delivered once, dropped, or still in flight at the horizon."""
    name = "conservation"
    in_flight = set(ix.summary.get("in_flight", []))
    for env, r in ix.sends.items():
        fates = sum(1 for d in ix.delivered.get(env, ()) if not d.get("duplicate")) + (env in ix.dropped) + (env in in_flight)
        if fates != 1:
            return _fail(name, r["seq"], f"envelope {env} has {fates} fates")
    return _ok(name)


def clock_monotonic(ix: TraceIndex) -> InvariantResult:
    name = "clock_monotonic"
    last = 0
    for r in ix.records:
        if r["time_ms"] < last:
            return _fail(name, r["seq"], f"time went back from {last} to {r['time_ms']}")
        last = r["time_ms"]
    return _ok(name)


def trace_hash(ix: TraceIndex) -> InvariantResult:
    name = "trace_hash"
    h = hashlib.sha256()
    for r in ix.records[:-1]:
        h.update(dumps(r).encode() + b"\n")
    if h.hexdigest() != ix.summary.get("trace_hash"):
        return _fail(name, ix.summary["seq"], "RunSummary hash does not match the records")
    return _ok(name)


INVARIANTS: dict[str, Callable[[TraceIndex], InvariantResult]] = {
    f.__name__: f
    for f in (
        session_confinement,
        gate_soundness,
        policy_monotonic,
        identity_unique,
        aa_gate,
        c2_gate,
        location_provenance,
        spoof_flagged,
        replay_rejected,
        fake_uss_rejected,
        id_reissue,
        no_silent_tampering,
        attribution,
        conservation,
        clock_monotonic,
        trace_hash,
    )
}


# -- findings --------------------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    category: str
    seq: int
    detail: str

    def to_dict(self) -> dict[str, Any]:
        return {"category": self.category, "seq": self.seq, "detail": self.detail}


def findings(ix: TraceIndex) -> list[Finding]:
    """Security-relevant observations that are not protocol violations."""
    out: list[Finding] = []
    for r in ix.body:
        k = r["kind"]
        if k == "Anomaly" and r["src"] not in ix.attackers:
            where = f" on {r['corr']}" if r.get("corr") else ""
            out.append(Finding(r["reason"], r["seq"], f"{r['src']} detected {r['reason']}{where}"))
        elif k == "Anomaly" and r["reason"] == "Intercepted":
            out.append(Finding("Eavesdropped", r["seq"], f"{r['src']} read {r.get('payload', {}).get('message_type', 'traffic')} on {r.get('interface')}"))
        elif k == "StateChange" and r.get("what") == "workflow_outcome" and r["payload"]["outcome"] == "TimedOut":
            p = r["payload"]
            out.append(Finding("DoS", r["seq"], f"{r.get('corr')} timed out after {p.get('retries', 0)} retries ({p['reason']})"))
        elif k == "StateChange" and r.get("what") == "c2_mode" and r.get("attacker_id"):
            p = r["payload"]
            out.append(Finding("C2Downgrade", r["seq"], f"{r['src']} forced from {p['from']} to {p['to']} by {r['attacker_id']}"))
        elif k == "Delivered" and r.get("injected") and r["message_type"] == "C2Payload":
            if not any(d["kind"] == "Anomaly" for d in ix.children.get(r["env"], ())):
                out.append(Finding("InjectedAccepted", r["seq"], f"forged C2 from {r['src']} accepted by {r['dst']}"))
    by_caa: dict[str, set[str]] = defaultdict(set)
    heard: set[tuple] = set()
    for r in ix.notes("rid_observed"):
        src = r["payload"].get("from")
        caa = r["payload"].get("caa_id")
        key = (r["src"], caa, r["payload"].get("counter"))  # many receivers hear one broadcast
        if key in heard:
            # RID carries no nonce, so a repeated counter is the only replay signal
            out.append(Finding("RidDuplicate", r["seq"], f"{r['src']} heard {caa} counter {key[2]} again"))
        heard.add(key)
        by_caa[caa].add(src)
        if len(by_caa[caa]) == 2:
            out.append(Finding("RidDuplicate", r["seq"], f"{caa} broadcast by {sorted(by_caa[caa])}"))
    return sorted(out, key=lambda f: f.seq)
