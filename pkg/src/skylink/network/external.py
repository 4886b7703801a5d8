"""Entities outside the operator network: USS/UTM and third-party authorized entities."""

from __future__ import annotations

from typing import Optional

from ..messages import (
    AaChallenge,
    AaChallengeResponse,
    AaForward,
    AaResult,
    C2Payload,
    Envelope,
    FlightPermissionRequest,
    LocationReport,
    LocationRequest,
    PairingAuthorization,
    PairingRequest,
    RidBroadcast,
    SecondaryAuthInvoke,
    SecondaryAuthResult,
    SecureSessionAck,
    SecureSessionInit,
    c2_tag,
)
from ..model import EntityKind, IncomparableKinds, Interface, location_to_dict
from ..world import verify_location
from .base import Directory, NetworkFunction

U4 = Interface.U4
U6 = Interface.U6
U9 = Interface.U9


class Uss(NetworkFunction):
    kind = EntityKind.USS

    def __init__(
        self,
        entity_id: str,
        sim,
        net: Directory,
        *,
        records: list[tuple[str, str]],
        controllers: dict[str, str],
        ufes: str,
        extra_rounds: int = 0,
        threshold_m: float = 50.0,
    ) -> None:
        super().__init__(entity_id, sim, net)
        if extra_rounds < 0:
            raise ValueError("extra_rounds must be >= 0")
        self.records = set(records)  # (gpp3 id, caa id) pairs this USS vouches for
        self.controllers = dict(controllers)
        self.ufes = ufes
        self.extra_rounds = extra_rounds
        self.threshold_m = threshold_m
        self.authenticated: dict[str, str] = {}  # gpp3 id -> current caa id
        self.issued: dict[str, dict] = {}  # caa id -> credentials
        self.superseded: set[str] = set()
        self.pairings: dict[str, dict] = {}  # uav caa id -> pairing
        self.secure: dict[str, str] = {}  # uav node -> uavc
        self._rounds: dict[str, int] = {}
        self._aa: dict[str, dict] = {}
        self._done: dict[str, object] = {}
        self._reported: dict[str, dict] = {}
        self._lv = 0

    # -- A&A ----------------------------------------------------------------

    def on_AaForward(self, env: Envelope) -> None:
        self.uss_authenticate(env.body)

    def uss_authenticate(self, fwd: AaForward) -> None:
        corr = fwd.corr
        if corr in self._done:
            self.send(self.ufes, U6, self._done[corr])
            return
        if corr in self._aa:
            return
        self._aa[corr] = {"gpp3": fwd.gpp3_id, "caa": fwd.caa_id}
        if self.extra_rounds and (fwd.gpp3_id, fwd.caa_id) in self.records:
            self._rounds[corr] = 1
            self.send(self.ufes, U6, AaChallenge(corr=corr, round=1))
            return
        self._finish_aa(corr)

    def on_AaChallengeResponse(self, env: Envelope) -> None:
        msg: AaChallengeResponse = env.body
        if msg.corr in self._done:
            self.send(self.ufes, U6, self._done[msg.corr])
            return
        current = self._rounds.get(msg.corr)
        if current is None or msg.round != current or msg.answer != answer_for(msg.round):
            return  # stale duplicate
        if current < self.extra_rounds:
            self._rounds[msg.corr] = current + 1
            self.send(self.ufes, U6, AaChallenge(corr=msg.corr, round=current + 1))
            return
        self._finish_aa(msg.corr)

    def _finish_aa(self, corr: str) -> None:
        a = self._aa.pop(corr)
        self._rounds.pop(corr, None)
        if (a["gpp3"], a["caa"]) in self.records and a["caa"] not in self.superseded:
            self.authenticated[a["gpp3"]] = a["caa"]
            result = AaResult(corr=corr, verdict="Success", app_params=f"{self.id}:{a['caa']}")
            self.note("uss_authenticated", corr, gpp3_id=a["gpp3"], caa_id=a["caa"])
        else:
            result = AaResult(corr=corr, verdict="Denied", reason="UnknownBundle", advice="terminate")
        self._done[corr] = result
        self.send(self.ufes, U6, result)

    # -- C2: secondary authentication, pairing, secure session -----------------

    def on_SecondaryAuthInvoke(self, env: Envelope) -> None:
        msg: SecondaryAuthInvoke = env.body
        self.send(self.ufes, U6, self.uss_secondary_authenticate(msg))

    def uss_secondary_authenticate(self, msg: SecondaryAuthInvoke) -> SecondaryAuthResult:
        corr = msg.corr
        if corr in self._done:
            return self._done[corr]
        if self.authenticated.get(msg.gpp3_id) != msg.caa_id:
            result = SecondaryAuthResult(
                corr=corr,
                verdict="Denied",
                gpp3_id=msg.gpp3_id,
                old_caa_id=msg.caa_id,
                reason="NotPreviouslyAuthenticated",
            )
        else:
            new_caa = self._fresh_caa()
            token = self.sim.rng.getrandbits(64)
            key = self.sim.rng.getrandbits(64)
            self.issued[new_caa] = {"token": token, "key": key, "gpp3": msg.gpp3_id, "node": msg.node}
            self.superseded.add(msg.caa_id)
            self.authenticated[msg.gpp3_id] = new_caa
            self.note("credentials_issued", corr, gpp3_id=msg.gpp3_id, old_caa_id=msg.caa_id, new_caa_id=new_caa)
            result = SecondaryAuthResult(
                corr=corr,
                verdict="Success",
                gpp3_id=msg.gpp3_id,
                old_caa_id=msg.caa_id,
                new_caa_id=new_caa,
                token=token,
                key_material=key,
            )
        self._done[corr] = result
        return result

    def _fresh_caa(self) -> str:
        while True:
            caa = f"CAA-{self.sim.rng.getrandbits(32):08x}"
            if caa not in self.issued and caa not in self.superseded and all(c != caa for _, c in self.records):
                return caa

    def on_PairingRequest(self, env: Envelope) -> None:
        self.uss_authorize_pairing(env.body)

    def uss_authorize_pairing(self, req: PairingRequest) -> None:
        creds = self.issued.get(req.new_caa_id)
        uav = req.node
        if creds is None:
            auth = PairingAuthorization(corr=req.corr, uav=uav, uavc_id=req.uavc_id, authorized=False, reason="StaleId")
        elif req.uavc_id not in self.controllers:
            auth = PairingAuthorization(
                corr=req.corr, uav=uav, uavc_id=req.uavc_id, authorized=False, reason="UnknownController"
            )
        else:
            address = self.controllers[req.uavc_id]
            auth = PairingAuthorization(
                corr=req.corr,
                uav=uav,
                uavc_id=req.uavc_id,
                authorized=True,
                uavc_address=address,
                key_material=creds["key"],
                session_id=req.session_id,
            )
            self.pairings[req.new_caa_id] = {"uav": uav, "uavc": req.uavc_id, "address": address}
            self.note("pairing", req.corr, uav=uav, uavc=req.uavc_id, authorized=True, address=address)
        self.send(self.ufes, U6, auth)
        if auth.authorized:
            # the controller learns the pair key over its own USS session
            self.send(req.uavc_id, U9, auth)

    def on_SecureSessionInit(self, env: Envelope) -> None:
        msg: SecureSessionInit = env.body
        creds = self.issued.get(msg.caa_id)
        pairing = self.pairings.get(msg.caa_id)
        if creds is None or creds["token"] != msg.token or pairing is None:
            self.anomaly("TokenMismatch", msg.corr, node=env.src, caa_id=msg.caa_id)
            self.send(env.src, U9, SecureSessionAck(corr=msg.corr, ok=False, reason="TokenMismatch"))
            return
        self.secure[env.src] = pairing["uavc"]
        self.note("secure_session", msg.corr, uav=env.src, uavc=pairing["uavc"])
        self.send(env.src, U9, SecureSessionAck(corr=msg.corr, ok=True))

    def on_C2Payload(self, env: Envelope) -> None:
        """Relay for the UTM-navigated mode."""
        msg: C2Payload = env.body
        uav = msg.origin if msg.origin in self.secure else msg.target
        if self.secure.get(uav) is None or {msg.origin, msg.target} != {uav, self.secure[uav]}:
            self.anomaly("UnauthenticatedC2", msg.corr, origin=msg.origin, target=msg.target, peer=env.src)
            return
        key = self._key_for(uav)
        if msg.tag is None or msg.tag != c2_tag(key, msg.origin, msg.target, msg.counter, msg.command):
            self.anomaly("TagMismatch", msg.corr, origin=msg.origin, target=msg.target)
            return
        self.send(msg.target, U9, msg)

    def _key_for(self, uav: str) -> Optional[int]:
        keys = [c["key"] for c in self.issued.values() if c["node"] == uav]
        return keys[-1] if keys else None

    # -- location verification ---------------------------------------------------

    def on_FlightPermissionRequest(self, env: Envelope) -> None:
        msg: FlightPermissionRequest = env.body
        if msg.corr in self._reported or msg.corr in self._done:
            return
        self._reported[msg.corr] = {"node": env.src, "reported": msg.reported_location, "caa": msg.caa_id}
        self._request_location(msg.corr, msg.caa_id)

    def request_location(self, caa_id: str) -> str:
        self._lv += 1
        corr = f"{self.id}/LocationVerify/{self._lv}"
        self._request_location(corr, caa_id)
        return corr

    def _request_location(self, corr: str, caa_id: str) -> None:
        def timed_out(retries: int) -> None:
            self._reported.pop(corr, None)
            self.outcome(corr, "LocationVerify", "TimedOut", "NoLocationReport", retries=retries)

        self.request(
            corr,
            self.ufes,
            U6,
            lambda: (LocationRequest(corr=corr, caa_id=caa_id), None),
            timed_out,
        )

    def on_LocationReport(self, env: Envelope) -> None:
        msg: LocationReport = env.body
        if not self.settle(msg.corr):
            return  # duplicate
        self._done[msg.corr] = msg
        claim = self._reported.pop(msg.corr, None)
        if msg.estimate is None:
            self.outcome(msg.corr, "LocationVerify", "Denied", msg.error or "NoEstimate")
            return
        if claim is None:
            self.note("location_tracked", msg.corr, caa_id=msg.caa_id, estimate=location_to_dict(msg.estimate))
            self.outcome(msg.corr, "LocationVerify", "Success", "Tracked")
            return
        try:
            verdict = verify_location(claim["reported"], msg.estimate, self.threshold_m)
        except IncomparableKinds:
            self.anomaly("IncomparableKinds", msg.corr, node=claim["node"])
            self.outcome(msg.corr, "LocationVerify", "Denied", "IncomparableKinds")
            return
        self.note(
            "location_verdict",
            msg.corr,
            node=claim["node"],
            caa_id=msg.caa_id,
            reported=location_to_dict(claim["reported"]),
            estimate=location_to_dict(msg.estimate),
            distance=verdict.distance,
            threshold=self.threshold_m,
            verdict=verdict.label,
        )
        if verdict.consistent:
            self.outcome(msg.corr, "LocationVerify", "Success", "Consistent")
        else:
            self.anomaly("LocationMismatch", msg.corr, node=claim["node"], distance=verdict.distance)
            self.outcome(msg.corr, "LocationVerify", "Denied", "LocationMismatch")


def answer_for(round_no: int) -> str:
    return f"resp-{round_no}"


class Tpae(NetworkFunction):
    """Passive RID and tracking observer with an optional scripted C2 override."""

    kind = EntityKind.TPAE

    def __init__(self, entity_id: str, sim, net: Directory, *, override_key: Optional[int] = None) -> None:
        super().__init__(entity_id, sim, net)
        self.override_key = override_key
        self.log: list[dict] = []
        self._counter = 0

    def on_RidBroadcast(self, env: Envelope) -> None:
        msg: RidBroadcast = env.body
        entry = {"from": env.src, "caa_id": msg.caa_id, "counter": msg.counter, "location": location_to_dict(msg.location)}
        self.log.append(entry)
        self.note("rid_observed", None, **entry)

    def on_LocationReport(self, env: Envelope) -> None:
        msg: LocationReport = env.body
        self.note("tracked", None, caa_id=msg.caa_id, estimate=location_to_dict(msg.estimate))

    def on_C2Payload(self, env: Envelope) -> None:
        pass  # acknowledgements of an override

    def override(self, uav: str, command: str) -> None:
        self._counter += 1
        tag = c2_tag(self.override_key, self.id, uav, self._counter, command)
        self.send(uav, U4, C2Payload(origin=self.id, target=uav, counter=self._counter, command=command, tag=tag))

