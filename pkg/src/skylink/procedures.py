"""Legal-transition tables for the three UAS workflows and per-instance conformance checking.

A workflow is a list of numbered steps; each step is an ordered list of hops
(message type plus sender and receiver kinds). A workflow instance is the set
of untainted sends sharing one correlation id. The checker tracks every
position the instance could be in, so repeats of already-passed hops
(retransmissions, challenge rounds, cached replies) are absorbed without
losing progress.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Optional, Union

WORKFLOWS = ("UasAa", "LocationVerify", "C2Establish")

UAS = frozenset({"uav", "uavc"})
UAV = frozenset({"uav"})
C2_PARTIES = frozenset({"uav", "uavc", "uss"})
ANYONE = frozenset(
    {"uav", "uavc", "amf", "smf", "pcf", "bsf", "udm", "gmlc", "lmf", "ngbs", "ufes", "uaaf", "ucf", "uss", "tpae"}
)

Predicate = Callable[[dict], bool]


def _k(*kinds: str) -> frozenset[str]:
    return frozenset(kinds)


def _eq(key: str, value: Any) -> Predicate:
    return lambda p: p.get(key) == value


def _missing(key: str) -> Predicate:
    return lambda p: p.get(key) is None


def _present(key: str) -> Predicate:
    return lambda p: p.get(key) is not None


@dataclass(frozen=True)
class Hop:
    message: str
    src: frozenset[str]
    dst: frozenset[str] = frozenset()
    where: Optional[Predicate] = None
    note: bool = False  # a StateChange of this name rather than a message

    def matches(self, obs: "Observed") -> bool:
        if obs.note != self.note or obs.type != self.message or obs.src_kind not in self.src:
            return False
        if not self.note and obs.dst_kind not in self.dst:
            return False
        return self.where is None or bool(self.where(obs.payload))


@dataclass(frozen=True)
class Step:
    number: int
    label: str
    hops: tuple[Hop, ...]
    optional: bool = False


@dataclass(frozen=True)
class WorkflowSpec:
    workflow: str
    steps: tuple[Step, ...]
    entries: tuple[int, ...] = (0,)  # step indices an instance may open with
    escapes: tuple[tuple[int, Hop], ...] = ()  # (earliest step index, hop) denial exits
    side: tuple[tuple[int, Hop], ...] = ()  # (earliest step index, hop) legal without moving the instance
    prerequisite: Optional[str] = None  # workflow that must have succeeded for the initiator

    def index_of(self, number: int) -> int:
        for i, s in enumerate(self.steps):
            if s.number == number:
                return i
        raise KeyError(number)

    @property
    def notes(self) -> frozenset[str]:
        hops = [h for s in self.steps for h in s.hops] + [h for _, h in self.escapes + self.side]
        return frozenset(h.message for h in hops if h.note)

    @property
    def accept(self) -> tuple[int, int]:
        """Position (step index, hop index) a successful instance must reach."""
        last = max(i for i, s in enumerate(self.steps) if not s.optional)
        return last, len(self.steps[last].hops) - 1


class Observed(NamedTuple):
    seq: int
    type: str
    src_kind: str
    dst_kind: str
    payload: dict
    note: bool = False


class Cursor(NamedTuple):
    step: int  # index into spec.steps; -1 before the first event
    hop: int  # index of the last hop matched in that step
    denied: bool = False


START = frozenset({Cursor(-1, -1)})


@dataclass(frozen=True)
class Violation:
    step: str
    reason: str
    seq: Optional[int]


# -- tables --------------------------------------------------------------------

_DENIED = _eq("verdict", "Denied")
_SUCCESS = _eq("verdict", "Success")

UAS_AA = WorkflowSpec(
    "UasAa",
    steps=(
        Step(1, "primary registration", (Hop("Registration", UAS, _k("amf")), Hop("RegistrationResult", _k("amf"), UAS, _eq("ok", True)))),
        Step(
            2,
            "restricted PDU session",
            (
                Hop("SessionRequest", UAS, _k("amf")),
                Hop("SessionRequest", _k("amf"), _k("smf")),
                Hop("SessionAccept", _k("smf"), UAS, _eq("policy", "RestrictedToUaaf")),
            ),
        ),
        Step(3, "A&A request to UAAF", (Hop("AaRequest", UAS, _k("uaaf")),)),
        Step(4, "subscription lookup", (Hop("SubscriptionQuery", _k("uaaf"), _k("bsf")), Hop("SubscriptionQuery", _k("bsf"), _k("pcf")))),
        Step(
            5,
            "forward to USS",
            (
                Hop("SubscriptionReply", _k("pcf"), _k("uaaf")),
                Hop("AaForward", _k("uaaf"), _k("ufes")),
                Hop("AaForward", _k("ufes"), _k("uss")),
            ),
        ),
        Step(
            6,
            "USS challenge rounds",
            (
                Hop("AaChallenge", _k("uss"), _k("ufes")),
                Hop("AaChallenge", _k("ufes"), _k("uaaf")),
                Hop("AaChallenge", _k("uaaf"), UAS),
                Hop("AaChallengeResponse", UAS, _k("uaaf")),
                Hop("AaChallengeResponse", _k("uaaf"), _k("ufes")),
                Hop("AaChallengeResponse", _k("ufes"), _k("uss")),
            ),
            optional=True,
        ),
        Step(7, "USS result", (Hop("AaResult", _k("uss"), _k("ufes"), _SUCCESS), Hop("AaResult", _k("ufes"), _k("uaaf"), _SUCCESS))),
        Step(8, "result relayed to UAS", (Hop("AaResult", _k("uaaf"), UAS, _SUCCESS),)),
        Step(
            9,
            "session opened, identity bound",
            (
                Hop("SessionModify", _k("uaaf"), _k("smf"), _eq("policy", "OpenToUss")),
                Hop("IdentityBinding", _k("uaaf"), _k("ucf")),
            ),
        ),
    ),
    escapes=(
        (0, Hop("RegistrationResult", _k("amf"), UAS, _eq("ok", False))),
        (0, Hop("Reject", ANYONE, ANYONE)),
        (2, Hop("AaResult", _k("uaaf"), UAS, _DENIED)),
        (2, Hop("SessionTerminate", _k("uaaf"), _k("smf"))),
        (3, Hop("SubscriptionReply", _k("bsf"), _k("uaaf"), _missing("record"))),
        (4, Hop("AaResult", _k("uss"), _k("ufes"), _DENIED)),
        (4, Hop("AaResult", _k("ufes"), _k("uaaf"), _DENIED)),
    ),
)

_LOCATION_STEPS = (
    Step(
        2,
        "location PDU session",
        (
            Hop("SessionRequest", UAV, _k("amf"), _eq("dnn", "uas-loc")),
            Hop("SessionRequest", _k("amf"), _k("smf")),
            Hop("SessionAccept", _k("smf"), UAV),
        ),
    ),
    Step(3, "flight permission with reported location", (Hop("FlightPermissionRequest", UAV, _k("uss")),)),
    Step(4, "location request into the core", (Hop("LocationRequest", _k("uss"), _k("ufes")), Hop("LocationRequest", _k("ufes"), _k("ucf")))),
    Step(5, "UCF invokes GMLC", (Hop("LocateInvoke", _k("ucf"), _k("gmlc")),)),
    Step(6, "privacy check", (Hop("PrivacyQuery", _k("gmlc"), _k("udm")), Hop("PrivacyReply", _k("udm"), _k("gmlc"), _eq("allowed", True)))),
    Step(
        7,
        "network positioning",
        (
            Hop("PositioningRequest", _k("gmlc"), _k("lmf")),
            Hop("PositioningRequest", _k("lmf"), _k("amf")),
            Hop("PositioningRequest", _k("amf"), _k("ngbs")),
            Hop("PositioningMeasurement", _k("ngbs"), _k("amf")),
            Hop("PositioningMeasurement", _k("amf"), _k("lmf")),
            Hop("LocationEstimateMsg", _k("lmf"), _k("gmlc"), _present("estimate")),
        ),
    ),
    Step(8, "estimate to UCF", (Hop("LocationEstimateMsg", _k("gmlc"), _k("ucf"), _present("estimate")),)),
    Step(9, "report to USS", (Hop("LocationReport", _k("ucf"), _k("ufes"), _present("estimate")), Hop("LocationReport", _k("ufes"), _k("uss"), _present("estimate")))),
)

LOCATION_VERIFY = WorkflowSpec(
    "LocationVerify",
    steps=_LOCATION_STEPS,
    entries=(0, 2),  # node-initiated opens at step 2; USS-initiated tracking at step 4
    escapes=(
        (0, Hop("Reject", ANYONE, ANYONE)),
        (2, Hop("LocationReport", _k("ucf"), _k("ufes"), _missing("estimate"))),
        (2, Hop("LocationReport", _k("ufes"), _k("uss"), _missing("estimate"))),
        (4, Hop("PrivacyReply", _k("udm"), _k("gmlc"), _eq("allowed", False))),
        (4, Hop("LocationEstimateMsg", _k("gmlc"), _k("ucf"), _missing("estimate"))),
        (5, Hop("LocationEstimateMsg", _k("lmf"), _k("gmlc"), _missing("estimate"))),
    ),
    prerequisite="UasAa",
)

C2_ESTABLISH = WorkflowSpec(
    "C2Establish",
    steps=(
        Step(1, "registration of UAV and controller", (Hop("Registration", UAS, _k("amf")), Hop("RegistrationResult", _k("amf"), UAS, _eq("ok", True)))),
        Step(2, "C2 PDU session request", (Hop("C2SessionRequest", UAV, _k("amf")), Hop("C2SessionRequest", _k("amf"), _k("smf")))),
        Step(3, "secondary authentication applicability", (Hop("secondary_auth_check", _k("smf"), where=_eq("applicable", True), note=True),)),
        Step(
            4,
            "USS secondary authentication",
            (
                Hop("SecondaryAuthInvoke", _k("smf"), _k("uaaf")),
                Hop("SecondaryAuthInvoke", _k("uaaf"), _k("ufes")),
                Hop("SecondaryAuthInvoke", _k("ufes"), _k("uss")),
                Hop("SecondaryAuthResult", _k("uss"), _k("ufes"), _SUCCESS),
                Hop("SecondaryAuthResult", _k("ufes"), _k("uaaf"), _SUCCESS),
                Hop("SecondaryAuthResult", _k("uaaf"), _k("smf"), _SUCCESS),
                Hop("IdentityBinding", _k("uaaf"), _k("ucf")),
            ),
        ),
        Step(5, "C2 credentials to UAV", (Hop("C2SessionAccept", _k("smf"), UAV, _present("credentials")),)),
        Step(
            6,
            "pairing authorization",
            (
                Hop("PairingRequest", UAV, _k("smf")),
                Hop("PairingRequest", _k("smf"), _k("ufes")),
                Hop("PairingRequest", _k("ufes"), _k("uss")),
                Hop("PairingAuthorization", _k("uss"), _k("ufes"), _eq("authorized", True)),
                Hop("PairingAuthorization", _k("uss"), _k("uavc"), _eq("authorized", True)),
                Hop("PairingAuthorization", _k("ufes"), _k("smf"), _eq("authorized", True)),
            ),
        ),
        Step(7, "C2-authorized session", (Hop("C2SessionAccept", _k("smf"), UAV, _eq("policy", "C2Authorized")),)),
        Step(8, "secure session with USS", (Hop("SecureSessionInit", UAV, _k("uss")), Hop("SecureSessionAck", _k("uss"), UAV, _eq("ok", True)))),
        Step(9, "first C2 from the UAV", (Hop("C2Payload", UAV, _k("uavc", "uss")),)),
        Step(10, "C2 exchange", (Hop("C2Payload", C2_PARTIES, C2_PARTIES),), optional=True),
    ),
    escapes=(
        (0, Hop("RegistrationResult", _k("amf"), UAV, _eq("ok", False))),
        (0, Hop("Reject", ANYONE, ANYONE)),
        (1, Hop("secondary_auth_check", _k("smf"), where=_eq("applicable", False), note=True)),
        (1, Hop("C2SessionAccept", _k("smf"), UAV, _missing("credentials"))),
        (3, Hop("SecondaryAuthResult", _k("uss", "ufes", "uaaf"), _k("ufes", "uaaf", "smf"), _DENIED)),
        (5, Hop("PairingAuthorization", _k("uss", "ufes"), _k("ufes", "smf"), _eq("authorized", False))),
        (7, Hop("SecureSessionAck", _k("uss"), UAV, _eq("ok", False))),
    ),
    # the controller registers alongside; its refusal does not stop the UAV's half
    side=((0, Hop("RegistrationResult", _k("amf"), _k("uavc"))),),
)

SPECS: dict[str, WorkflowSpec] = {s.workflow: s for s in (UAS_AA, LOCATION_VERIFY, C2_ESTABLISH)}


# -- transition function ----------------------------------------------------------


def at_step(spec: WorkflowSpec, number: int) -> frozenset[Cursor]:
    """Cursor set for an instance that has just completed step ``number``."""
    i = spec.index_of(number)
    return frozenset({Cursor(i, len(spec.steps[i].hops) - 1)})


def step_label(spec: WorkflowSpec, cursors: Iterable[Cursor]) -> str:
    """Furthest step reached, as ``stepN`` (or ``start``)."""
    live = [c for c in cursors if c.step >= 0]
    if not live:
        return "start"
    return f"step{spec.steps[max(c.step for c in live)].number}"


def _passed(spec: WorkflowSpec, c: Cursor) -> Iterable[Hop]:
    for i in range(c.step + 1):
        hops = spec.steps[i].hops
        yield from hops if i < c.step else hops[: c.hop + 1]


def _openers(spec: WorkflowSpec, c: Cursor) -> Iterable[tuple[int, Hop]]:
    """First hops of the steps that may follow cursor ``c``."""
    if c.step == -1:
        starts = list(spec.entries)
    elif c.hop == len(spec.steps[c.step].hops) - 1:
        starts = [c.step + 1]
    else:
        return
    for i in starts:
        while i < len(spec.steps):
            yield i, spec.steps[i].hops[0]
            if not spec.steps[i].optional:
                break
            i += 1


def legal_next(
    spec: WorkflowSpec, current: frozenset[Cursor], obs: Observed
) -> Union[frozenset[Cursor], Violation]:
    """Advance every live cursor by one observation; a Violation if none can absorb it."""
    nxt: set[Cursor] = set()
    for c in current:
        if any(h.matches(obs) for h in _passed(spec, c)):
            nxt.add(c)
        if any(c.step >= m and h.matches(obs) for m, h in spec.side):
            nxt.add(c)
        for min_step, h in spec.escapes:
            if c.step >= min_step and h.matches(obs):
                nxt.add(Cursor(max(c.step, 0), c.hop, True))
        hops = spec.steps[c.step].hops if c.step >= 0 else ()
        if c.step >= 0 and c.hop + 1 < len(hops) and hops[c.hop + 1].matches(obs):
            # a denied instance still drains the hops of the step already underway
            nxt.add(Cursor(c.step, c.hop + 1, c.denied))
        if c.denied:
            continue
        for i, h in _openers(spec, c):
            if h.matches(obs):
                nxt.add(Cursor(i, 0))
    if not nxt:
        where = step_label(spec, current)
        edge = f"{obs.type} {obs.src_kind}->{obs.dst_kind}" if not obs.note else f"note {obs.type}"
        return Violation(where, f"OutOfOrder: {edge} is not a legal next hop after {where}", obs.seq)
    return frozenset(nxt)


def accepted(spec: WorkflowSpec, cursors: Iterable[Cursor]) -> bool:
    goal = spec.accept
    return any(not c.denied and (c.step, c.hop) >= goal for c in cursors)


# -- instances and verdicts -------------------------------------------------------


@dataclass
class Verdict:
    instance: str
    workflow: str
    outcome: str  # Conformant | Violation | AnomalyObserved
    step: Optional[str] = None
    reason: str = ""
    seq: Optional[int] = None
    observed: list[str] = field(default_factory=list)
    result: Optional[str] = None  # the instance's own outcome record: Success, Denied, TimedOut

    def to_dict(self) -> dict[str, Any]:
        d = {"instance": self.instance, "workflow": self.workflow, "outcome": self.outcome, "result": self.result}
        if self.outcome == "Violation":
            d.update(step=self.step, reason=self.reason, seq=self.seq)
        if self.observed:
            d["observed"] = list(self.observed)
        return d


def workflow_of(corr: str) -> Optional[str]:
    parts = corr.split("/")
    if len(parts) == 3 and parts[1] in SPECS:
        return parts[1]
    return None


def check_instance(
    spec: WorkflowSpec,
    corr: str,
    events: list[Observed],
    outcome: Optional[dict],
    prior_success: Optional[int],
) -> Verdict:
    """Run one instance through its table.

    ``outcome`` is the payload of the instance's workflow_outcome record (with
    ``seq``); ``prior_success`` is the seq of the initiator's successful
    prerequisite workflow, if any.
    """
    v = Verdict(corr, spec.workflow, "Conformant", result=outcome and outcome["outcome"])
    initiator_kind = events[0].src_kind if events else None
    if spec.prerequisite and initiator_kind in UAS:
        first = events[0].seq
        if prior_success is None or prior_success > first:
            v.outcome, v.step, v.seq = "Violation", "step1", first
            v.reason = f"started before a successful {spec.prerequisite} of the initiator"
            return v
    cursors = START
    for obs in events:
        out = legal_next(spec, cursors, obs)
        if isinstance(out, Violation):
            v.outcome, v.step, v.reason, v.seq = "Violation", out.step, out.reason, out.seq
            return v
        cursors = out
    if outcome is None:
        v.outcome = "AnomalyObserved"
        v.observed.append(f"Unfinished at {step_label(spec, cursors)}")
        return v
    result = outcome["outcome"]
    if result == "Success" and not accepted(spec, cursors):
        v.outcome, v.step, v.seq = "Violation", step_label(spec, cursors), outcome.get("seq")
        v.reason = "Incomplete: success reported before the final step"
    elif result == "TimedOut":
        v.outcome = "AnomalyObserved"
        v.observed.append(f"DoS: timed out at {step_label(spec, cursors)} after {outcome.get('retries', 0)} retries")
    return v


# -- whole-trace verification -----------------------------------------------------------


def instances(records: list[dict[str, Any]], tainted: set[int], untrusted: set[int], kinds: dict[str, str]) -> dict[str, dict[str, Any]]:
    """Group genuine sends and table-relevant notes by correlation id.

    ``tainted`` holds envelopes an attacker originated; ``untrusted`` also
    holds envelopes whose delivery an attacker altered.
    """
    out: dict[str, dict[str, Any]] = {}

    def slot(corr: str) -> Optional[dict[str, Any]]:
        wf = workflow_of(corr)
        if wf is None:
            return None
        return out.setdefault(corr, {"workflow": wf, "events": [], "outcome": None})

    for r in records:
        kind = r["kind"]
        if kind == "Send" and r["env"] not in tainted:
            s = slot(r["payload"].get("corr", ""))
            if s is not None:
                s["events"].append(
                    Observed(r["seq"], r["message_type"], kinds.get(r["src"], ""), kinds.get(r["dst"], ""), r["payload"])
                )
        elif kind == "StateChange" and r.get("corr") and r.get("cause") not in untrusted:
            s = slot(r["corr"])
            if s is None:
                continue
            if r["what"] == "workflow_outcome":
                # the initiator's own outcome wins over a co-participant's
                own = r["src"] == r["corr"].split("/")[0]
                if s["outcome"] is None or (own and not s["outcome"]["own"]):
                    s["outcome"] = {**r["payload"], "seq": r["seq"], "own": own}
            elif r["what"] in SPECS[s["workflow"]].notes:
                s["events"].append(Observed(r["seq"], r["what"], kinds.get(r["src"], ""), "", r.get("payload") or {}, True))
    return out


def verify_trace(records: list[dict[str, Any]], specs: Optional[dict[str, WorkflowSpec]] = None, invariants=None):
    """Check every workflow instance and every invariant; returns a ``Report``."""
    from .invariants import INVARIANTS, TraceIndex, findings
    from .report import Report

    specs = specs or SPECS
    checks = INVARIANTS if invariants is None else {n: INVARIANTS[n] for n in invariants}
    ix = TraceIndex(records)
    successes: dict[tuple[str, str], int] = {}
    for r in ix.notes("workflow_outcome"):
        corr = r.get("corr") or ""
        if r["payload"]["outcome"] == "Success" and r.get("cause") not in ix.untrusted:
            successes.setdefault((corr.split("/")[0], r["payload"]["workflow"]), r["seq"])
    verdicts = []
    for corr, inst in sorted(instances(ix.body, ix.tainted, ix.untrusted, ix.kinds).items(), key=lambda kv: kv[1]["events"][0].seq if kv[1]["events"] else 0):
        spec = specs.get(inst["workflow"])
        if spec is None:
            continue
        prior = successes.get((corr.split("/")[0], spec.prerequisite)) if spec.prerequisite else None
        verdicts.append(check_instance(spec, corr, inst["events"], inst["outcome"], prior))
    results = [check(ix) for check in checks.values()]
    return Report(
        scenario=ix.header.get("scenario", ""),
        seed=ix.header.get("seed"),
        trace_hash=ix.summary.get("trace_hash", ""),
        verdicts=verdicts,
        invariants=results,
        findings=findings(ix),
    )
