from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..messages import Envelope, Message
from ..model import EntityKind, Interface

RTX_PREFIX = "rtx:"


@dataclass(frozen=True)
class Directory:
    """Static addressing of the core network, shared read-only by every function."""

    amf: str = "amf"
    smf: str = "smf"
    pcf: str = "pcf"
    bsf: str = "bsf"
    udm: str = "udm"
    gmlc: str = "gmlc"
    lmf: str = "lmf"
    ufes: str = "ufes"
    uaaf: str = "uaaf"
    ucf: str = "ucf"
    base_stations: tuple[str, ...] = ()
    ue_nodes: dict[str, str] = field(default_factory=dict)  # plmn ue id -> node id

    def as_dict(self) -> dict[str, Any]:
        return {
            "amf": self.amf,
            "smf": self.smf,
            "pcf": self.pcf,
            "bsf": self.bsf,
            "udm": self.udm,
            "gmlc": self.gmlc,
            "lmf": self.lmf,
            "ufes": self.ufes,
            "uaaf": self.uaaf,
            "ucf": self.ucf,
        }


@dataclass
class _Pending:
    dst: str
    interface: Interface
    build: Callable[[], tuple[Message, Optional[int]]]
    on_timeout: Callable[[int], None]
    retries: int = 0


class NetworkFunction:
    """A state machine driven by envelopes and timers from the simulator.

    Subclasses implement ``on_<MessageType>(env)`` handlers. Anything without
    a handler is recorded as an ``UnexpectedMessage`` anomaly and ignored.
    """

    kind: EntityKind

    def __init__(self, entity_id: str, sim, net: Directory) -> None:
        self.id = entity_id
        self.sim = sim
        self.net = net
        self.scripted: dict[str, Callable[[], None]] = {}
        self._pending: dict[str, _Pending] = {}

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.id}>"

    # -- plumbing -----------------------------------------------------------

    def handle(self, env: Envelope) -> None:
        handler = getattr(self, "on_" + env.body.type, None)
        if handler is None:
            self.anomaly("UnexpectedMessage", env=env.seq, message_type=env.body.type, peer=env.src)
            return
        handler(env)

    def send(self, dst: str, interface: Interface, msg: Message, nonce: Optional[int] = None) -> Optional[int]:
        return self.sim.send(self.id, dst, interface, msg, nonce=nonce)

    def note(self, what: str, corr: Optional[str] = None, **payload: Any) -> None:
        self.sim.trace.append(
            "StateChange", self.sim.now, src=self.id, what=what, corr=corr, payload=payload or None, cause=self.sim._cause
        )

    def anomaly(self, reason: str, corr: Optional[str] = None, attacker_id: Optional[str] = None, **payload: Any) -> None:
        self.sim.trace.append(
            "Anomaly",
            self.sim.now,
            src=self.id,
            reason=reason,
            corr=corr,
            attacker_id=attacker_id,
            payload=payload or None,
            cause=self.sim._cause,
        )

    def outcome(self, corr: str, workflow: str, outcome: str, reason: str = "", **extra: Any) -> None:
        self.note("workflow_outcome", corr, workflow=workflow, outcome=outcome, reason=reason, **extra)

    # -- timers and retransmission -------------------------------------------

    def on_timer(self, timer_id: str) -> None:
        if timer_id.startswith(RTX_PREFIX):
            self._retransmit(timer_id[len(RTX_PREFIX):])
            return
        action = self.scripted.pop(timer_id, None)
        if action is not None:
            action()
            return
        self.on_periodic(timer_id)

    def on_periodic(self, timer_id: str) -> None:
        pass

    def request(
        self,
        key: str,
        dst: str,
        interface: Interface,
        build: Callable[[], tuple[Message, Optional[int]]],
        on_timeout: Callable[[int], None],
    ) -> None:
        """Send a request and retransmit it until ``settle(key)`` or retries run out.

        ``build`` is called for every transmission so a fresh nonce can be drawn.
        """
        self.settle(key)
        p = _Pending(dst, interface, build, on_timeout)
        self._pending[key] = p
        msg, nonce = build()
        self.send(dst, interface, msg, nonce)
        self.sim.set_timer(self.id, RTX_PREFIX + key, self.sim.retransmit_ms)

    def settle(self, key: str) -> bool:
        p = self._pending.pop(key, None)
        if p is None:
            return False
        self.sim.cancel_timer(self.id, RTX_PREFIX + key)
        return True

    def settle_prefix(self, prefix: str) -> None:
        for key in [k for k in self._pending if k.startswith(prefix)]:
            self.settle(key)

    def pending(self, key: str) -> bool:
        return key in self._pending

    def _retransmit(self, key: str) -> None:
        p = self._pending.get(key)
        if p is None:
            return
        if p.retries >= self.sim.max_retries:
            del self._pending[key]
            p.on_timeout(p.retries)
            return
        p.retries += 1
        msg, nonce = p.build()
        self.send(p.dst, p.interface, msg, nonce)
        self.sim.set_timer(self.id, RTX_PREFIX + key, self.sim.retransmit_ms)
