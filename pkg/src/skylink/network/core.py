"""Generic 5GC functions: access/mobility, sessions, policy, binding, data, location."""

from __future__ import annotations

from typing import Optional

from ..messages import (
    C2SessionAccept,
    C2SessionRequest,
    Envelope,
    LocationEstimateMsg,
    PairingAuthorization,
    PairingRequest,
    PositioningMeasurement,
    PositioningRequest,
    PrivacyQuery,
    PrivacyReply,
    Registration,
    RegistrationResult,
    Reject,
    SecondaryAuthInvoke,
    SecondaryAuthResult,
    SessionAccept,
    SessionModify,
    SessionRequest,
    SessionTerminate,
    SubscriptionQuery,
    SubscriptionReply,
)
from ..model import (
    GateVerdict,
    EntityKind,
    Interface,
    PduSession,
    Policy,
    PolicyTransitionError,
    SessionState,
    SubscriptionRecord,
    session_gate,
)
from ..world import NoCoverage, mean_position
from .base import Directory, NetworkFunction

U1 = Interface.U1
SBI = Interface.SBI

AA_DNN = "uas-aa"


class Amf(NetworkFunction):
    kind = EntityKind.AMF

    def __init__(
        self,
        entity_id: str,
        sim,
        net: Directory,
        *,
        credentials: dict[str, str],
        subscriptions: dict[str, SubscriptionRecord],
        gpp3_ids: dict[str, str],
        smf_for: dict[str, str],
    ) -> None:
        super().__init__(entity_id, sim, net)
        self.credentials = credentials
        self.subscriptions = subscriptions
        self.gpp3_ids = gpp3_ids
        self.smf_for = smf_for
        self.registered: dict[str, str] = {}  # node id -> ue id
        self.positioning: dict[str, str] = {}  # corr -> requesting LMF

    def primary_authenticate(self, node: str, ue_id: str, creds: str) -> bool:
        if self.credentials.get(ue_id) != creds:
            return False
        if node not in self.registered:
            self.registered[node] = ue_id
            self.note("registered", node=node, ue_id=ue_id)
        return True

    def on_Registration(self, env: Envelope) -> None:
        msg: Registration = env.body
        ok = self.primary_authenticate(env.src, msg.ue_id, msg.creds)
        if not ok:
            self.anomaly("RegistrationDenied", msg.corr, node=env.src, ue_id=msg.ue_id)
        self.send(env.src, U1, RegistrationResult(corr=msg.corr, ok=ok, reason="" if ok else "BadCredentials"))

    def on_SessionRequest(self, env: Envelope) -> None:
        msg: SessionRequest = env.body
        if env.src not in self.registered:
            self.send(env.src, U1, Reject(corr=msg.corr, request="SessionRequest", reason="NotRegistered"))
            return
        smf = self.smf_for.get(msg.dnn)
        if smf is None:
            self.send(env.src, U1, Reject(corr=msg.corr, request="SessionRequest", reason="UnknownDnn"))
            return
        self.send(smf, SBI, msg.replace(node=env.src, ue_id=self.registered[env.src]))

    def on_C2SessionRequest(self, env: Envelope) -> None:
        msg: C2SessionRequest = env.body
        if env.src not in self.registered:
            self.send(env.src, U1, Reject(corr=msg.corr, request="C2SessionRequest", reason="NotRegistered"))
            return
        smf = self.smf_for.get(msg.dnn_snssai)
        if smf is None:
            self.send(env.src, U1, Reject(corr=msg.corr, request="C2SessionRequest", reason="UnknownDnn"))
            return
        ue = self.registered[env.src]
        sub = self.subscriptions.get(ue)
        self.send(
            smf,
            SBI,
            msg.replace(
                node=env.src,
                ue_id=ue,
                gpp3_id=self.gpp3_ids.get(ue, ""),
                aerial_allowed=bool(sub and sub.aerial_allowed),
            ),
        )

    # relays between the LMF and the radio nodes
    def on_PositioningRequest(self, env: Envelope) -> None:
        msg: PositioningRequest = env.body
        self.positioning[msg.corr] = env.src
        for bs in self.net.base_stations:
            self.send(bs, SBI, msg)

    def on_PositioningMeasurement(self, env: Envelope) -> None:
        msg: PositioningMeasurement = env.body
        lmf = self.positioning.get(msg.corr)
        if lmf is None:
            self.anomaly("NoPendingPositioning", msg.corr)
            return
        self.send(lmf, SBI, msg)


class Smf(NetworkFunction):
    kind = EntityKind.SMF

    def __init__(self, entity_id: str, sim, net: Directory, *, secondary_auth: dict[str, str]) -> None:
        super().__init__(entity_id, sim, net)
        self.secondary_auth = secondary_auth  # dnn_snssai -> "required" | "waived"
        self.sessions: list[PduSession] = []
        self.authenticated: set[str] = set()
        self._by_request: dict[tuple[str, str, str], PduSession] = {}
        self._c2: dict[str, dict] = {}
        self._pairing: dict[str, PduSession] = {}
        self._next_id = 1

    # -- session bookkeeping ------------------------------------------------

    def _create(self, owner: str, dnn: str, policy: Policy, corr: str, state=SessionState.ACTIVE) -> PduSession:
        s = PduSession(self._next_id, owner, dnn, policy=policy, state=state)
        self._next_id += 1
        self.sessions.append(s)
        self._record(s, corr)
        return s

    def _record(self, s: PduSession, corr: Optional[str]) -> None:
        self.note("session", corr, **s.snapshot(), dnn=s.dnn_snssai)

    def sessions_of(self, owner: str) -> list[PduSession]:
        return [s for s in self.sessions if s.owner == owner]

    def smf_establish_session(self, owner: str, dnn: str, corr: str) -> PduSession:
        key = (owner, corr, dnn)
        if key in self._by_request:
            return self._by_request[key]
        policy = Policy.OPEN_TO_USS if owner in self.authenticated and dnn != AA_DNN else Policy.RESTRICTED_TO_UAAF
        s = self._create(owner, dnn, policy, corr)
        self._by_request[key] = s
        return s

    def gate(self, env, dst_kind: EntityKind) -> tuple[GateVerdict, Optional[dict]]:
        """Session gate for a user-plane envelope: any active session of the sender may carry it."""
        mine = [s for s in self.sessions if s.owner == env.src and s.state is SessionState.ACTIVE]
        for s in mine:
            v = session_gate(s, env, dst_kind)
            if v.deliver:
                return v, s.snapshot()
        for s in self.sessions:
            if s.owner == env.dst and s.peer == env.src and s.state is SessionState.ACTIVE:
                v = session_gate(s, env, dst_kind)
                if v.deliver:
                    return v, s.snapshot()
        if not mine:
            terminated = [s for s in self.sessions if s.owner == env.src]
            if terminated:
                return session_gate(terminated[-1], env, dst_kind), terminated[-1].snapshot()
            return GateVerdict(False, "NoSession"), None
        return session_gate(mine[-1], env, dst_kind), mine[-1].snapshot()

    # -- A&A session (sessions opened via the AMF) -----------------------------

    def on_SessionRequest(self, env: Envelope) -> None:
        msg: SessionRequest = env.body
        s = self.smf_establish_session(msg.node, msg.dnn, msg.corr)
        self.send(msg.node, U1, SessionAccept(corr=msg.corr, session_id=s.session_id, policy=s.policy.value))

    def _aa_sessions(self, owner: str, session_id: Optional[int]) -> list[PduSession]:
        return [
            s
            for s in self.sessions
            if s.owner == owner
            and s.state is not SessionState.TERMINATED
            and (s.session_id == session_id if session_id is not None else s.dnn_snssai == AA_DNN)
        ]

    def on_SessionModify(self, env: Envelope) -> None:
        msg: SessionModify = env.body
        if msg.policy != Policy.OPEN_TO_USS.value:
            self.anomaly("UnsupportedModify", msg.corr, policy=msg.policy)
            return
        self.authenticated.add(msg.owner)
        for s in self._aa_sessions(msg.owner, msg.session_id):
            if s.policy is Policy.RESTRICTED_TO_UAAF:
                s.open_to_uss()
                self._record(s, msg.corr)

    def on_SessionTerminate(self, env: Envelope) -> None:
        msg: SessionTerminate = env.body
        for s in self._aa_sessions(msg.owner, msg.session_id):
            s.terminate()
            self._record(s, msg.corr)

    # -- C2 establishment ------------------------------------------------------

    def on_C2SessionRequest(self, env: Envelope) -> None:
        msg: C2SessionRequest = env.body
        known = self._c2.get(msg.corr)
        if known is not None:
            if known.get("reply") is not None:
                self.send(msg.node, U1, known["reply"])
            return
        policy = self.secondary_auth.get(msg.dnn_snssai)
        applicable = bool(msg.aerial_allowed) and policy == "required"
        reason = "" if applicable else ("NotAerial" if not msg.aerial_allowed else "PolicyWaived")
        self.note("secondary_auth_check", msg.corr, node=msg.node, applicable=applicable, reason=reason)
        entry = {"node": msg.node, "dnn": msg.dnn_snssai, "reply": None}
        self._c2[msg.corr] = entry
        if not applicable:
            # plain session without C2 rights; it reaches the USS only if A&A already opened the way
            policy = Policy.OPEN_TO_USS if msg.node in self.authenticated else Policy.RESTRICTED_TO_UAAF
            s = self._create(msg.node, msg.dnn_snssai, policy, msg.corr)
            entry["reply"] = C2SessionAccept(corr=msg.corr, session_id=s.session_id, policy=s.policy.value)
            self.send(msg.node, U1, entry["reply"])
            return
        self.send(
            self.net.uaaf,
            SBI,
            SecondaryAuthInvoke(
                corr=msg.corr, gpp3_id=msg.gpp3_id, caa_id=msg.caa_id, node=msg.node, ue_id=msg.ue_id
            ),
        )

    def on_SecondaryAuthResult(self, env: Envelope) -> None:
        msg: SecondaryAuthResult = env.body
        entry = self._c2.get(msg.corr)
        if entry is None or entry["reply"] is not None:
            self.anomaly("NoPendingSecondaryAuth", msg.corr)
            return
        node = entry["node"]
        if msg.verdict != "Success":
            entry["reply"] = Reject(corr=msg.corr, request="C2SessionRequest", reason=msg.reason or "Denied")
            self.send(node, U1, entry["reply"])
            return
        s = self._create(node, entry["dnn"], Policy.OPEN_TO_USS, msg.corr)
        creds = {"new_caa_id": msg.new_caa_id, "token": msg.token, "key_material": msg.key_material}
        entry["reply"] = C2SessionAccept(
            corr=msg.corr, session_id=s.session_id, policy=s.policy.value, credentials=creds
        )
        self.send(node, U1, entry["reply"])

    def on_PairingRequest(self, env: Envelope) -> None:
        msg: PairingRequest = env.body
        s = self._pairing.get(msg.corr)
        if s is None:
            entry = self._c2.get(msg.corr)
            dnn = entry["dnn"] if entry else "uas-c2"
            s = self._create(env.src, dnn, Policy.OPEN_TO_USS, msg.corr, state=SessionState.ESTABLISHING)
            self._pairing[msg.corr] = s
        elif s.state is not SessionState.ESTABLISHING:
            # already answered; repeat the final word
            if s.policy is Policy.C2_AUTHORIZED:
                self.send(env.src, U1, C2SessionAccept(corr=msg.corr, session_id=s.session_id, policy=s.policy.value))
            else:
                self.send(env.src, U1, Reject(corr=msg.corr, request="PairingRequest", reason="Denied"))
            return
        self.send(self.net.ufes, SBI, msg.replace(node=env.src, session_id=s.session_id))

    def on_PairingAuthorization(self, env: Envelope) -> None:
        msg: PairingAuthorization = env.body
        s = self._pairing.get(msg.corr)
        if s is None or s.owner != msg.uav:
            self.anomaly("NoPendingPairing", msg.corr, uss=msg.uss)
            return
        if s.state is not SessionState.ESTABLISHING:
            return  # answer to a retransmitted request
        if not msg.authorized:
            s.terminate()
            self._record(s, msg.corr)
            self.send(s.owner, U1, Reject(corr=msg.corr, request="PairingRequest", reason=msg.reason or "Denied"))
            return
        try:
            s.authorize_c2(msg.uavc_id, msg.uavc_address or "")
        except PolicyTransitionError as exc:
            self.anomaly("PolicyTransition", msg.corr, error=str(exc))
            return
        s.state = SessionState.ACTIVE
        self._record(s, msg.corr)
        self.send(s.owner, U1, C2SessionAccept(corr=msg.corr, session_id=s.session_id, policy=s.policy.value))


class Pcf(NetworkFunction):
    kind = EntityKind.PCF

    def __init__(self, entity_id: str, sim, net: Directory, *, subscriptions: dict[str, SubscriptionRecord]) -> None:
        super().__init__(entity_id, sim, net)
        self.subscriptions = subscriptions

    def on_SubscriptionQuery(self, env: Envelope) -> None:
        msg: SubscriptionQuery = env.body
        rec = self.subscriptions.get(msg.ue_id or "")
        self.send(self.net.uaaf, SBI, SubscriptionReply(corr=msg.corr, node=msg.node, gpp3_id=msg.gpp3_id, record=rec))


class Bsf(NetworkFunction):
    """Binds an AF request about a node to the UE and the PCF that serves it."""

    kind = EntityKind.BSF

    def __init__(self, entity_id: str, sim, net: Directory, *, bindings: dict[str, tuple[str, str]]) -> None:
        super().__init__(entity_id, sim, net)
        self.bindings = bindings  # node id -> (ue id, gpp3 id)

    def on_SubscriptionQuery(self, env: Envelope) -> None:
        msg: SubscriptionQuery = env.body
        bound = self.bindings.get(msg.node)
        if bound is None:
            self.send(env.src, SBI, SubscriptionReply(corr=msg.corr, node=msg.node, gpp3_id=None, record=None))
            return
        ue, gpp3 = bound
        self.send(self.net.pcf, SBI, msg.replace(ue_id=ue, gpp3_id=gpp3))


class Udm(NetworkFunction):
    kind = EntityKind.UDM

    def __init__(self, entity_id: str, sim, net: Directory, *, known_ues: set[str], privacy: dict[str, str]) -> None:
        super().__init__(entity_id, sim, net)
        self.known_ues = known_ues
        self.privacy = privacy

    def on_PrivacyQuery(self, env: Envelope) -> None:
        msg: PrivacyQuery = env.body
        if msg.ue_id not in self.known_ues:
            reply = PrivacyReply(corr=msg.corr, ue_id=msg.ue_id, amf_addr=None, allowed=False)
        else:
            allowed = self.privacy.get(msg.ue_id, "allow") == "allow"
            reply = PrivacyReply(corr=msg.corr, ue_id=msg.ue_id, amf_addr=self.net.amf, allowed=allowed)
        self.send(env.src, SBI, reply)


class Gmlc(NetworkFunction):
    kind = EntityKind.GMLC

    def __init__(self, entity_id: str, sim, net: Directory) -> None:
        super().__init__(entity_id, sim, net)
        self.pending: dict[str, str] = {}  # corr -> requesting UCF

    def on_LocateInvoke(self, env: Envelope) -> None:
        self.gmlc_locate(env.body.ue_id, env.body.corr, env.src)

    def gmlc_locate(self, ue_id: str, corr: str, requester: str) -> None:
        self.pending[corr] = requester
        self.send(self.net.udm, SBI, PrivacyQuery(corr=corr, ue_id=ue_id))

    def on_PrivacyReply(self, env: Envelope) -> None:
        msg: PrivacyReply = env.body
        requester = self.pending.get(msg.corr)
        if requester is None:
            self.anomaly("NoPendingLocate", msg.corr)
            return
        if msg.amf_addr is None or not msg.allowed:
            del self.pending[msg.corr]
            error = "UeUnknown" if msg.amf_addr is None else "PrivacyDenied"
            self.send(requester, SBI, LocationEstimateMsg(corr=msg.corr, ue_id=msg.ue_id, estimate=None, error=error))
            return
        self.send(self.net.lmf, SBI, PositioningRequest(corr=msg.corr, ue_id=msg.ue_id))

    def on_LocationEstimateMsg(self, env: Envelope) -> None:
        msg: LocationEstimateMsg = env.body
        requester = self.pending.pop(msg.corr, None)
        if requester is None:
            self.anomaly("NoPendingLocate", msg.corr)
            return
        self.send(requester, SBI, msg)


class Lmf(NetworkFunction):
    kind = EntityKind.LMF

    def __init__(self, entity_id: str, sim, net: Directory) -> None:
        super().__init__(entity_id, sim, net)
        self.pending: dict[str, dict] = {}

    def on_PositioningRequest(self, env: Envelope) -> None:
        msg: PositioningRequest = env.body
        if msg.corr in self.pending:
            return
        self.pending[msg.corr] = {"ue": msg.ue_id, "gmlc": env.src, "got": {}}
        if not self.net.base_stations:
            self._finish(msg.corr)
            return
        self.send(self.net.amf, SBI, msg)

    def on_PositioningMeasurement(self, env: Envelope) -> None:
        msg: PositioningMeasurement = env.body
        p = self.pending.get(msg.corr)
        if p is None:
            self.anomaly("NoPendingPositioning", msg.corr)
            return
        p["got"].setdefault(msg.bs_id, msg.observed)
        if len(p["got"]) == len(self.net.base_stations):
            self._finish(msg.corr)

    def _finish(self, corr: str) -> None:
        p = self.pending.pop(corr)
        observed = [p["got"][bs] for bs in sorted(p["got"]) if p["got"][bs] is not None]
        try:
            estimate = lmf_position(observed)
        except NoCoverage:
            self.note("estimate", corr, ue_id=p["ue"], estimate=None, n=0)
            reply = LocationEstimateMsg(corr=corr, ue_id=p["ue"], estimate=None, error="NoCoverage")
        else:
            self.note(
                "estimate",
                corr,
                ue_id=p["ue"],
                estimate=[estimate.x, estimate.y, estimate.z],
                n=len(observed),
            )
            reply = LocationEstimateMsg(corr=corr, ue_id=p["ue"], estimate=estimate)
        self.send(p["gmlc"], SBI, reply)


def lmf_position(measurements):
    """Component-wise mean of in-coverage NG-BS observations; ``NoCoverage`` when empty."""
    return mean_position(measurements)


class NgBs(NetworkFunction):
    kind = EntityKind.NGBS

    def __init__(self, entity_id: str, sim, net: Directory, *, world) -> None:
        super().__init__(entity_id, sim, net)
        self.world = world

    def on_PositioningRequest(self, env: Envelope) -> None:
        msg: PositioningRequest = env.body
        node = self.net.ue_nodes.get(msg.ue_id)
        observed = None
        if node is not None:
            observed = self.world.measure(self.id, node, self.sim.rng)
            truth = self.world.truth(node)
            self.note(
                "measurement",
                msg.corr,
                node=node,
                truth=[truth.x, truth.y, truth.z],
                observed=None if observed is None else [observed.x, observed.y, observed.z],
            )
        self.send(env.src, SBI, PositioningMeasurement(corr=msg.corr, bs_id=self.id, ue_id=msg.ue_id, observed=observed))
