"""UAS-specific 5GC functions: flight enablement (UFES), A&A (UAAF) and control (UCF)."""

from __future__ import annotations

from typing import Optional

from ..messages import (
    AaChallenge,
    AaChallengeResponse,
    AaForward,
    AaRequest,
    AaResult,
    Envelope,
    IdentityBinding,
    LocateInvoke,
    LocationEstimateMsg,
    LocationReport,
    LocationRequest,
    Message,
    Reject,
    SecondaryAuthInvoke,
    SecondaryAuthResult,
    SessionModify,
    SessionTerminate,
    SubscriptionQuery,
    SubscriptionReply,
)
from ..model import AmbiguousId, EntityKind, IdentityBundle, Interface, NotFound, Policy, match_ids
from .base import Directory, NetworkFunction

U1 = Interface.U1
U2 = Interface.U2
U6 = Interface.U6
SBI = Interface.SBI

# messages a USS may originate toward the core
_FROM_USS_TO_UAAF = ("AaChallenge", "AaResult", "SecondaryAuthResult")


class Ufes(NetworkFunction):
    """Single point of contact between the core and the external USS/UTM entities."""

    kind = EntityKind.UFES

    def __init__(self, entity_id: str, sim, net: Directory, *, directory: dict[str, str], known_uss: list[str]) -> None:
        super().__init__(entity_id, sim, net)
        self.directory = dict(directory)  # caa id -> uss
        self.known_uss = set(known_uss)
        self.routes: dict[str, str] = {}  # corr -> uss

    def ufes_select_and_forward(self, caa_id: Optional[str], msg: Message, explicit: Optional[str] = None) -> Optional[str]:
        uss = explicit or (self.directory.get(caa_id) if caa_id else None)
        if uss is None or uss not in self.known_uss:
            return None
        if caa_id:
            self.directory.setdefault(caa_id, uss)
        self.routes[msg.corr] = uss
        self.send(uss, U6, msg)
        return uss

    def _unresolved(self, env: Envelope, request: str) -> None:
        self.send(env.src, SBI, Reject(corr=env.body.corr, request=request, reason="NoUssResolved"))

    # core -> USS

    def on_AaForward(self, env: Envelope) -> None:
        msg: AaForward = env.body
        if self.ufes_select_and_forward(msg.caa_id, msg, msg.uss or None) is None:
            self._unresolved(env, "AaForward")

    def on_AaChallengeResponse(self, env: Envelope) -> None:
        msg: AaChallengeResponse = env.body
        uss = msg.uss or self.routes.get(msg.corr)
        if uss is None:
            self._unresolved(env, "AaChallengeResponse")
            return
        self.send(uss, U6, msg)

    def on_SecondaryAuthInvoke(self, env: Envelope) -> None:
        msg: SecondaryAuthInvoke = env.body
        uss = self.directory.get(msg.caa_id)
        if uss is None or uss not in self.known_uss:
            self._unresolved(env, "SecondaryAuthInvoke")
            return
        self.routes[msg.corr] = uss
        self.send(uss, U6, msg.replace(uss=uss))

    def on_PairingRequest(self, env: Envelope) -> None:
        msg = env.body
        uss = self.directory.get(msg.new_caa_id) or self.routes.get(msg.corr)
        if uss is None:
            self._unresolved(env, "PairingRequest")
            return
        self.routes[msg.corr] = uss
        self.send(uss, U6, msg)

    def on_LocationReport(self, env: Envelope) -> None:
        msg: LocationReport = env.body
        uss = self.routes.get(msg.corr)
        if uss is None:
            self.anomaly("NoRoute", msg.corr)
            return
        self.send(uss, U6, msg)

    # USS -> core

    def handle(self, env: Envelope) -> None:
        if env.interface is Interface.U6:
            self._from_uss(env)
            return
        if env.body.type == "Reject":
            return  # nothing to relay
        super().handle(env)

    def _from_uss(self, env: Envelope) -> None:
        msg = env.body
        if env.src not in self.known_uss:
            self.anomaly("ForgedOrigin", msg.corr, uss=env.src, message_type=msg.type)
            return
        t = msg.type
        if t in _FROM_USS_TO_UAAF:
            if t == "SecondaryAuthResult" and msg.verdict == "Success" and self.routes.get(msg.corr) == env.src:
                self.directory[msg.new_caa_id] = env.src
            self.send(self.net.uaaf, SBI, msg.replace(uss=env.src))
        elif t == "PairingAuthorization":
            if self.routes.get(msg.corr) != env.src:
                self.anomaly("ForgedOrigin", msg.corr, uss=env.src, message_type=t)
                return
            self.send(self.net.smf, SBI, msg.replace(uss=env.src))
        elif t == "LocationRequest":
            self.routes[msg.corr] = env.src
            self.send(self.net.ucf, SBI, msg)
        else:
            self.anomaly("UnexpectedMessage", msg.corr, message_type=t, peer=env.src)


class Uaaf(NetworkFunction):
    kind = EntityKind.UAAF

    def __init__(self, entity_id: str, sim, net: Directory, *, valid_uss: list[str]) -> None:
        super().__init__(entity_id, sim, net)
        self.valid_uss = list(valid_uss)
        self.nonce_cache: dict[int, str] = {}
        self.pending_aa: dict[str, dict] = {}
        self.results: dict[str, AaResult] = {}
        self.pending_secondary: dict[str, dict] = {}
        self.secondary_done: set[str] = set()

    # -- primary UAS A&A ------------------------------------------------------

    def on_AaRequest(self, env: Envelope) -> None:
        self.uaaf_handle_aa(env.body, env.src, env.nonce)

    def uaaf_handle_aa(self, req: AaRequest, node: str, nonce: Optional[int]) -> None:
        corr = req.corr
        if nonce is None:
            self.send(node, U1, AaResult(corr=corr, verdict="Denied", reason="MissingNonce"))
            return
        if nonce in self.nonce_cache:
            self.anomaly("ReplayDetected", corr, node=node, nonce=nonce, first=self.nonce_cache[nonce])
            self.send(node, U1, AaResult(corr=corr, verdict="Denied", reason="ReplayDetected"))
            return
        self.nonce_cache[nonce] = corr
        if corr in self.results:
            self.send(node, U1, self.results[corr])
            return
        if corr in self.pending_aa:
            return  # retransmission while the exchange is in flight
        self.pending_aa[corr] = {"node": node, "caa": req.caa_id, "app": req.app_info, "uss": None, "ue": None, "gpp3": None}
        if req.uss_hint and req.uss_hint not in self.valid_uss:
            self._deny(corr, "UnknownUss")
            return
        self.pending_aa[corr]["hint"] = req.uss_hint
        self.send(self.net.bsf, SBI, SubscriptionQuery(corr=corr, node=node))

    def on_SubscriptionReply(self, env: Envelope) -> None:
        msg: SubscriptionReply = env.body
        p = self.pending_aa.get(msg.corr)
        if p is None or p["uss"] is not None:
            return
        rec = msg.record
        if rec is None:
            self._deny(msg.corr, "NoSubscription")
            return
        if not rec.aerial_allowed:
            self._deny(msg.corr, "NotAerial")
            return
        uss = p.get("hint") or rec.served_uss
        if uss not in self.valid_uss:
            self._deny(msg.corr, "UnknownUss")
            return
        p.update(uss=uss, ue=rec.plmn_ue_id, gpp3=msg.gpp3_id)
        self.send(
            self.net.ufes,
            SBI,
            AaForward(corr=msg.corr, gpp3_id=msg.gpp3_id or "", caa_id=p["caa"], app_info=p["app"], uss=uss),
        )

    def _deny(self, corr: str, reason: str, advice: str = "terminate") -> None:
        p = self.pending_aa.pop(corr)
        result = AaResult(corr=corr, verdict="Denied", reason=reason, advice=advice)
        self.results[corr] = result
        self.send(p["node"], U1, result)
        if advice == "terminate":
            self.send(self.net.smf, SBI, SessionTerminate(corr=corr, owner=p["node"], reason=reason))

    def _origin_ok(self, corr: str, uss: str, table: dict) -> Optional[dict]:
        p = table.get(corr)
        if uss not in self.valid_uss:
            self.anomaly("ForgedOrigin", corr, uss=uss)
            return None
        if p is None:
            if corr not in self.results and corr not in self.secondary_done:
                self.anomaly("NoPendingAa", corr, uss=uss)
            return None
        if p.get("uss") not in (None, uss):
            self.anomaly("ForgedOrigin", corr, uss=uss, expected=p.get("uss"))
            return None
        return p

    def on_AaChallenge(self, env: Envelope) -> None:
        msg: AaChallenge = env.body
        p = self._origin_ok(msg.corr, msg.uss, self.pending_aa)
        if p is None:
            return
        self.send(p["node"], U1, AaChallenge(corr=msg.corr, round=msg.round))

    def on_AaChallengeResponse(self, env: Envelope) -> None:
        msg: AaChallengeResponse = env.body
        p = self.pending_aa.get(msg.corr)
        if p is None or p["node"] != env.src or p["uss"] is None:
            self.anomaly("NoPendingAa", msg.corr, node=env.src)
            return
        self.send(self.net.ufes, SBI, msg.replace(uss=p["uss"]))

    def on_AaResult(self, env: Envelope) -> None:
        self.uaaf_apply_result(env.body)

    def uaaf_apply_result(self, result: AaResult) -> None:
        corr = result.corr
        p = self._origin_ok(corr, result.uss, self.pending_aa)
        if p is None:
            return
        del self.pending_aa[corr]
        relay = AaResult(corr=corr, verdict=result.verdict, reason=result.reason, app_params=result.app_params)
        self.results[corr] = relay
        node = p["node"]
        self.send(node, U1, relay)
        if result.verdict == "Success":
            self.note("authenticated", corr, node=node, uss=result.uss, caa_id=p["caa"])
            self.send(self.net.smf, SBI, SessionModify(corr=corr, owner=node, policy=Policy.OPEN_TO_USS.value))
            self.send(
                self.net.ucf,
                SBI,
                IdentityBinding(corr=corr, ue_id=p["ue"], gpp3_id=p["gpp3"] or "", caa_id=p["caa"] or ""),
            )
        elif result.advice == "terminate":
            self.send(self.net.smf, SBI, SessionTerminate(corr=corr, owner=node, reason=result.reason or "Denied"))

    # -- proxy for secondary authentication ------------------------------------

    def on_SecondaryAuthInvoke(self, env: Envelope) -> None:
        msg: SecondaryAuthInvoke = env.body
        if msg.corr in self.pending_secondary:
            return
        self.pending_secondary[msg.corr] = {"node": msg.node, "ue": msg.ue_id, "gpp3": msg.gpp3_id, "caa": msg.caa_id}
        self.send(self.net.ufes, SBI, msg)

    def on_SecondaryAuthResult(self, env: Envelope) -> None:
        msg: SecondaryAuthResult = env.body
        p = self._origin_ok(msg.corr, msg.uss, self.pending_secondary)
        if p is None:
            return
        del self.pending_secondary[msg.corr]
        self.secondary_done.add(msg.corr)
        self.send(self.net.smf, SBI, msg)
        if msg.verdict == "Success":
            self.send(
                self.net.ucf,
                SBI,
                IdentityBinding(
                    corr=msg.corr, ue_id=p["ue"], gpp3_id=p["gpp3"], caa_id=msg.new_caa_id, previous=msg.old_caa_id
                ),
            )

    def on_Reject(self, env: Envelope) -> None:
        msg: Reject = env.body
        if msg.corr in self.pending_aa:
            self._deny(msg.corr, msg.reason)
        elif msg.corr in self.pending_secondary:
            p = self.pending_secondary.pop(msg.corr)
            self.secondary_done.add(msg.corr)
            self.send(
                self.net.smf,
                SBI,
                SecondaryAuthResult(
                    corr=msg.corr, verdict="Denied", gpp3_id=p["gpp3"], old_caa_id=p["caa"], reason=msg.reason
                ),
            )


class Ucf(NetworkFunction):
    kind = EntityKind.UCF

    def __init__(self, entity_id: str, sim, net: Directory, *, trackers: tuple[str, ...] = ()) -> None:
        super().__init__(entity_id, sim, net)
        self.registry: dict[str, IdentityBundle] = {}  # ue id -> bundle
        self.pending: dict[str, str] = {}  # corr -> caa id
        self.answered: dict[str, LocationReport] = {}
        self.trackers = trackers

    def on_IdentityBinding(self, env: Envelope) -> None:
        msg: IdentityBinding = env.body
        b = self.registry.get(msg.ue_id)
        if b is None:
            b = self.registry[msg.ue_id] = IdentityBundle(msg.ue_id, msg.gpp3_id, msg.caa_id)
        elif msg.previous is not None and b.caa_level_uav_id != msg.caa_id:
            b.reissue(msg.caa_id)
        elif b.caa_level_uav_id != msg.caa_id:
            # a fresh A&A under a different id: keep the old one resolvable
            b.reissue(msg.caa_id)
        self.note("identity_bound", msg.corr, ue_id=msg.ue_id, caa_id=msg.caa_id, previous=msg.previous)

    def on_LocationRequest(self, env: Envelope) -> None:
        self.ucf_handle_location_request(env.body)

    def ucf_handle_location_request(self, req: LocationRequest) -> None:
        corr = req.corr
        if corr in self.answered:
            self.send(self.net.ufes, SBI, self.answered[corr])
            return
        if corr in self.pending:
            return
        try:
            ue = match_ids(req.caa_id, self.registry.values())
        except NotFound:
            self._answer(LocationReport(corr=corr, caa_id=req.caa_id, estimate=None, error="NotFound"))
            return
        except AmbiguousId as exc:
            self.anomaly("AmbiguousId", corr, caa_id=req.caa_id, detail=str(exc))
            self._answer(LocationReport(corr=corr, caa_id=req.caa_id, estimate=None, error="AmbiguousId"))
            return
        self.pending[corr] = req.caa_id
        self.send(self.net.gmlc, SBI, LocateInvoke(corr=corr, ue_id=ue))

    def on_LocationEstimateMsg(self, env: Envelope) -> None:
        msg: LocationEstimateMsg = env.body
        caa = self.pending.pop(msg.corr, None)
        if caa is None:
            self.anomaly("NoPendingLocate", msg.corr)
            return
        report = LocationReport(corr=msg.corr, caa_id=caa, estimate=msg.estimate, error=msg.error)
        self._answer(report)
        if msg.estimate is not None:
            for tpae in self.trackers:
                self.send(tpae, U2, report.replace(corr=""))

    def _answer(self, report: LocationReport) -> None:
        self.answered[report.corr] = report
        self.send(self.net.ufes, SBI, report)
