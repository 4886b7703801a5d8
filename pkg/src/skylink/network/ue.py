"""UAS nodes: the UAV and its controller, both ordinary UEs to the operator network."""

from __future__ import annotations

from typing import Callable, Optional

from ..messages import (
    AaChallenge,
    AaChallengeResponse,
    AaRequest,
    AaResult,
    C2Payload,
    C2SessionAccept,
    C2SessionRequest,
    Envelope,
    FlightPermissionRequest,
    PairingAuthorization,
    PairingRequest,
    Registration,
    RegistrationResult,
    Reject,
    RidBroadcast,
    SecureSessionAck,
    SecureSessionInit,
    SessionAccept,
    SessionRequest,
    c2_tag,
)
from ..model import EntityKind, IdentityBundle, Interface, Policy
from ..world import C2Mode
from .base import Directory, NetworkFunction
from .core import AA_DNN
from .external import answer_for

U1, U2U, U3, U7, U8, U9 = (Interface.U1, Interface.U2U, Interface.U3, Interface.U7, Interface.U8, Interface.U9)

LOCATION_DNN = "uas-loc"

# outgoing C2 path per mode: (via the USS?, interface)
_C2_PATH = {
    C2Mode.DIRECT: (False, U8),
    C2Mode.NETWORK_ASSISTED: (False, U3),
    C2Mode.UTM_NAVIGATED: (True, U9),
}


class UasNode(NetworkFunction):
    """Behaviour shared by UAV and UAV-C: registration, sessions and the UAS A&A."""

    def __init__(
        self,
        entity_id: str,
        sim,
        net: Directory,
        *,
        bundle: IdentityBundle,
        creds: str,
        world=None,
        uss_hint: Optional[str] = None,
    ) -> None:
        super().__init__(entity_id, sim, net)
        self.bundle = bundle
        self.creds = creds
        self.world = world
        self.uss_hint = uss_hint
        self.flows: dict[str, dict] = {}
        self.authenticated = False
        self.key: Optional[int] = None
        self.peer: Optional[str] = None
        self._instances: dict[str, int] = {}
        self._last_counter: dict[str, int] = {}

    @property
    def caa_id(self) -> str:
        return self.bundle.caa_level_uav_id

    def new_corr(self, workflow: str) -> str:
        n = self._instances.get(workflow, 0) + 1
        self._instances[workflow] = n
        return f"{self.id}/{workflow}/{n}"

    def _fail(self, corr: str, reason: str) -> Callable[[int], None]:
        def timed_out(retries: int) -> None:
            flow = self.flows.pop(corr, None)
            if flow is None:
                return
            self.settle_prefix(corr + ":")
            self.outcome(corr, flow["workflow"], "TimedOut", reason, retries=retries)

        return timed_out

    def _finish(self, corr: str, outcome: str, reason: str = "", **extra) -> None:
        flow = self.flows.pop(corr, None)
        if flow is None:
            return
        self.settle_prefix(corr + ":")
        self.outcome(corr, flow["workflow"], outcome, reason, **extra)

    # -- step: primary registration ---------------------------------------------

    def register(self, corr: str, then: Optional[Callable[[], None]] = None) -> None:
        self.flows.setdefault(corr, {"workflow": corr.split("/")[1]})["after_reg"] = then
        self.request(
            corr + ":reg",
            self.net.amf,
            U1,
            lambda: (Registration(corr=corr, ue_id=self.bundle.plmn_ue_id, creds=self.creds), None),
            self._fail(corr, "NoRegistrationResult"),
        )

    def on_RegistrationResult(self, env: Envelope) -> None:
        msg: RegistrationResult = env.body
        if not self.settle(msg.corr + ":reg"):
            return
        flow = self.flows.get(msg.corr)
        if not msg.ok:
            self._finish(msg.corr, "Denied", msg.reason or "BadCredentials")
            return
        then = flow.pop("after_reg", None) if flow else None
        if then is not None:
            then()
        elif flow is not None and flow["workflow"] == "C2Establish":
            self.flows.pop(msg.corr, None)  # controller side of a C2 establishment

    # -- step: PDU session -------------------------------------------------------

    def open_session(self, corr: str, dnn: str, then: Callable[[], None]) -> None:
        self.flows[corr]["after_session"] = then
        self.request(
            corr + ":sess",
            self.net.amf,
            U1,
            lambda: (SessionRequest(corr=corr, ue_id=self.bundle.plmn_ue_id, dnn=dnn), None),
            self._fail(corr, "NoSessionAccept"),
        )

    def on_SessionAccept(self, env: Envelope) -> None:
        msg: SessionAccept = env.body
        if not self.settle(msg.corr + ":sess"):
            return
        then = self.flows.get(msg.corr, {}).pop("after_session", None)
        if then is not None:
            then()

    # -- UAS A&A ---------------------------------------------------------------

    def start_aa(self) -> str:
        corr = self.new_corr("UasAa")
        self.flows[corr] = {"workflow": "UasAa"}
        self.register(corr, lambda: self.open_session(corr, AA_DNN, lambda: self._aa_request(corr)))
        return corr

    def _aa_request(self, corr: str) -> None:
        def build():
            msg = AaRequest(corr=corr, caa_id=self.caa_id, uss_hint=self.uss_hint, app_info=self.bundle.app_id)
            return msg, self.sim.rng.getrandbits(64)

        self.request(corr + ":aa", self.net.uaaf, U1, build, self._fail(corr, "NoAaResult"))

    def on_AaChallenge(self, env: Envelope) -> None:
        msg: AaChallenge = env.body
        if msg.corr not in self.flows:
            self.anomaly("UnsolicitedResult", msg.corr, message_type="AaChallenge")
            return
        self.settle(msg.corr + ":aa")
        self.settle(f"{msg.corr}:cr{msg.round - 1}")
        self.request(
            f"{msg.corr}:cr{msg.round}",
            self.net.uaaf,
            U1,
            lambda: (AaChallengeResponse(corr=msg.corr, round=msg.round, answer=answer_for(msg.round)), None),
            self._fail(msg.corr, "NoAaResult"),
        )

    def on_AaResult(self, env: Envelope) -> None:
        msg: AaResult = env.body
        flow = self.flows.get(msg.corr)
        if flow is None or flow["workflow"] != "UasAa":
            self.anomaly("UnsolicitedResult", msg.corr, verdict=msg.verdict, result_reason=msg.reason)
            return
        if msg.verdict == "Success":
            self.authenticated = True
            self.bundle.served_uss = (msg.app_params or "").split(":")[0] or self.bundle.served_uss
        self._finish(msg.corr, msg.verdict, msg.reason)

    def on_Reject(self, env: Envelope) -> None:
        msg: Reject = env.body
        self._finish(msg.corr, "Denied", msg.reason)

    # -- C2 payload handling common to both ends ------------------------------------

    def _accept_c2(self, env: Envelope) -> bool:
        msg: C2Payload = env.body
        if self.key is None:
            self.anomaly("UnauthenticatedC2", msg.corr, origin=msg.origin, peer=env.src)
            return False
        if msg.target != self.id or msg.tag != c2_tag(self.key, msg.origin, msg.target, msg.counter, msg.command):
            self.anomaly("TagMismatch", msg.corr, origin=msg.origin, peer=env.src)
            return False
        if msg.counter <= self._last_counter.get(msg.origin, 0):
            self.anomaly("C2Replay", msg.corr, origin=msg.origin, counter=msg.counter)
            return False
        self._last_counter[msg.origin] = msg.counter
        return True

    def probe(self, dst: str, interface: Interface, message_type: str) -> None:
        """Emit a one-off user-plane message outside any workflow (fuzzing hook)."""
        corr = self.new_corr("Probe")
        if message_type == "AaRequest":
            msg = AaRequest(corr=corr, caa_id=self.caa_id, app_info=self.bundle.app_id)
            self.send(dst, interface, msg, self.sim.rng.getrandbits(64))
        elif message_type == "FlightPermissionRequest":
            here = self.world.self_report(self.id) if self.world else None
            self.send(dst, interface, FlightPermissionRequest(corr=corr, caa_id=self.caa_id, reported_location=here))
        elif message_type == "C2Payload":
            self.send_c2(f"probe-{corr}", dst_override=(dst, interface), corr=corr)
        else:
            raise ValueError(f"cannot probe with {message_type}")

    def send_c2(self, command: str, dst_override=None, corr: Optional[str] = None) -> bool:
        raise NotImplementedError


class Uav(UasNode):
    kind = EntityKind.UAV

    def __init__(
        self,
        entity_id: str,
        sim,
        net: Directory,
        *,
        dnn_c2: str = "uas-c2",
        rid_period_ms: int = 0,
        rid_range_m: float = 1000.0,
        c2_period_ms: int = 500,
        **kw,
    ) -> None:
        super().__init__(entity_id, sim, net, **kw)
        self.dnn_c2 = dnn_c2
        self.rid_period_ms = rid_period_ms
        self.rid_range_m = rid_range_m
        self.c2_period_ms = c2_period_ms
        self.rid_receivers: tuple[tuple[str, Interface], ...] = ()
        self.token: Optional[int] = None
        self.secure = False
        self._c2_corr: Optional[str] = None
        self._c2_counter = 0
        self._rid_counter = 0

    def arm(self) -> None:
        if self.rid_period_ms > 0:
            self.sim.set_timer(self.id, "rid", self.rid_period_ms)

    # -- RID -------------------------------------------------------------------

    def uav_broadcast_rid(self) -> int:
        if self.world is None or not self.world.airborne(self.id):
            return 0
        here = self.world.self_report(self.id)
        truth = self.world.truth(self.id)
        self._rid_counter += 1
        msg = RidBroadcast(caa_id=self.caa_id, location=here, counter=self._rid_counter)
        sent = 0
        for rx, iface in self.rid_receivers:
            if self.world.truth(rx).distance(truth) <= self.rid_range_m:
                self.send(rx, iface, msg)
                sent += 1
        return sent

    def on_periodic(self, timer_id: str) -> None:
        if timer_id == "rid":
            self.uav_broadcast_rid()
            self.sim.set_timer(self.id, "rid", self.rid_period_ms)
        elif timer_id == "c2" and self.secure:
            self.send_c2(f"cmd-{self._c2_counter + 1}")
            self.sim.set_timer(self.id, "c2", self.c2_period_ms)

    def on_RidBroadcast(self, env: Envelope) -> None:
        self.note("rid_observed", None, **{"from": env.src, "caa_id": env.body.caa_id, "counter": env.body.counter})

    # -- location reporting ---------------------------------------------------------

    def flight_permission(self, trajectory: tuple = ()) -> str:
        corr = self.new_corr("LocationVerify")
        self.flows[corr] = {"workflow": "LocationVerify"}
        uss = self.bundle.served_uss

        def submit() -> None:
            self.flows.pop(corr, None)
            here = self.world.self_report(self.id)
            msg = FlightPermissionRequest(corr=corr, caa_id=self.caa_id, reported_location=here, trajectory=trajectory)
            self.send(uss, U9, msg)

        self.open_session(corr, LOCATION_DNN, submit)
        return corr

    # -- C2 establishment -------------------------------------------------------------

    def start_c2(self, uavc: str) -> str:
        corr = self.new_corr("C2Establish")
        self.flows[corr] = {"workflow": "C2Establish", "phase": "register", "uavc": uavc}
        self._c2_corr = corr
        self.register(corr, lambda: self._c2_request(corr))
        return corr

    def _c2_request(self, corr: str) -> None:
        self.flows[corr]["phase"] = "requested"
        self.request(
            corr + ":c2",
            self.net.amf,
            U1,
            lambda: (C2SessionRequest(corr=corr, caa_id=self.caa_id, dnn_snssai=self.dnn_c2), None),
            self._fail(corr, "NoC2SessionAccept"),
        )

    def on_C2SessionAccept(self, env: Envelope) -> None:
        msg: C2SessionAccept = env.body
        flow = self.flows.get(msg.corr)
        if flow is None:
            return
        if flow["phase"] == "requested" and self.settle(msg.corr + ":c2"):
            if not msg.credentials:
                self._finish(msg.corr, "Denied", "NoC2Rights")
                return
            old = self.caa_id
            self.bundle.reissue(msg.credentials["new_caa_id"])
            self.token = msg.credentials["token"]
            self.key = msg.credentials["key_material"]
            self.note("caa_reissued", msg.corr, old=old, new=self.caa_id)
            flow["phase"] = "pairing"
            self.request(
                msg.corr + ":pair",
                self.net.smf,
                U1,
                lambda: (PairingRequest(corr=msg.corr, new_caa_id=self.caa_id, uavc_id=flow["uavc"]), None),
                self._fail(msg.corr, "NoPairingAnswer"),
            )
        elif flow["phase"] == "pairing" and msg.policy == Policy.C2_AUTHORIZED.value and self.settle(msg.corr + ":pair"):
            flow["phase"] = "securing"
            self.peer = flow["uavc"]
            uss = self.bundle.served_uss
            self.request(
                msg.corr + ":sec",
                uss,
                U9,
                lambda: (SecureSessionInit(corr=msg.corr, token=self.token, caa_id=self.caa_id), None),
                self._fail(msg.corr, "NoSecureSessionAck"),
            )

    def on_SecureSessionAck(self, env: Envelope) -> None:
        msg: SecureSessionAck = env.body
        flow = self.flows.get(msg.corr)
        if flow is None or flow.get("phase") != "securing" or not self.settle(msg.corr + ":sec"):
            return
        if not msg.ok:
            self._finish(msg.corr, "Denied", msg.reason or "TokenMismatch")
            return
        self.secure = True
        state = self.world.open_link(self.id, self.peer)
        self.note("c2_link", msg.corr, peer=self.peer, mode=state.mode.value, quality=round(state.quality, 9))
        self.send_c2("cmd-1")
        self._finish(msg.corr, "Success", "")
        self.sim.set_timer(self.id, "c2", self.c2_period_ms)

    def send_c2(self, command: str, dst_override=None, corr: Optional[str] = None) -> bool:
        if not self.secure or self.peer is None:
            self.anomaly("C2NotEstablished", None, command=command)
            return False
        self._c2_counter += 1
        n = self._c2_counter
        msg = C2Payload(
            corr=corr if corr is not None else self._c2_corr or "",
            origin=self.id,
            target=self.peer,
            counter=n,
            command=command,
            tag=c2_tag(self.key, self.id, self.peer, n, command),
        )
        if dst_override is not None:
            dst, iface = dst_override
        else:
            via_uss, iface = _C2_PATH[self.world.mode_of(self.id) or C2Mode.DIRECT]
            dst = self.bundle.served_uss if via_uss else self.peer
        return self.send(dst, iface, msg) is not None

    def on_C2Payload(self, env: Envelope) -> None:
        self._accept_c2(env)


class UavController(UasNode):
    kind = EntityKind.UAVC

    def __init__(self, entity_id: str, sim, net: Directory, **kw) -> None:
        super().__init__(entity_id, sim, net, **kw)
        self._counter = 0
        self.live = False  # set once the UAV has opened the C2 exchange

    def join_c2(self, corr: str) -> None:
        """Controller half of the first C2 step: its own primary registration."""
        self.flows[corr] = {"workflow": "C2Establish"}
        self.register(corr)

    def on_PairingAuthorization(self, env: Envelope) -> None:
        msg: PairingAuthorization = env.body
        if env.src != self.bundle.served_uss or not msg.authorized or msg.uavc_id != self.id:
            self.anomaly("UnexpectedPairing", msg.corr, peer=env.src)
            return
        self.key = msg.key_material
        self.peer = msg.uav
        self.live = False
        self._last_counter.pop(msg.uav, None)
        self.note("pairing_learned", msg.corr, uav=msg.uav)

    def on_C2Payload(self, env: Envelope) -> None:
        msg: C2Payload = env.body
        if not self._accept_c2(env):
            return
        self.live = True
        self._counter += 1
        command = f"ack-{msg.counter}"
        ack = C2Payload(
            corr=msg.corr,
            origin=self.id,
            target=msg.origin,
            counter=self._counter,
            command=command,
            tag=c2_tag(self.key, self.id, msg.origin, self._counter, command),
        )
        # answer along the path the command arrived on
        dst = env.src if env.interface is U9 else msg.origin
        self.send(dst, env.interface, ack)

    def send_c2(self, command: str, dst_override=None, corr: Optional[str] = None) -> bool:
        if not self.live:
            self.anomaly("C2NotEstablished", None, command=command)
            return False
        self._counter += 1
        dst, iface = dst_override if dst_override else (self.peer, U3)
        msg = C2Payload(
            corr=corr or "",
            origin=self.id,
            target=self.peer,
            counter=self._counter,
            command=command,
            tag=c2_tag(self.key, self.id, self.peer, self._counter, command),
        )
        return self.send(dst, iface, msg) is not None
