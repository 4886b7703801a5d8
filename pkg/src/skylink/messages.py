"""Closed set of workflow messages plus the ``Envelope`` that carries them.

Every message is a frozen keyword-only dataclass registered by class name.
``corr`` is the workflow-instance correlation key that every hop propagates.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from typing import Any, Optional

from .model import (
    Interface,
    Location,
    Position,
    SkylinkError,
    SubscriptionRecord,
    location_from_dict,
    location_to_dict,
)


class UnknownMessage(SkylinkError):
    pass


MESSAGE_TYPES: dict[str, type["Message"]] = {}

# message types a UAS node sends over its PDU session (subject to the session gate)
USER_PLANE = frozenset(
    {"AaRequest", "AaChallengeResponse", "FlightPermissionRequest", "SecureSessionInit", "C2Payload"}
)


def _register(cls):
    MESSAGE_TYPES[cls.__name__] = cls
    return cls


@dataclass(frozen=True, kw_only=True)
class Message:
    corr: str = ""

    @property
    def type(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"type": self.type}
        for f in dataclasses.fields(self):
            out[f.name] = _encode(getattr(self, f.name))
        return out

    def replace(self, **changes) -> "Message":
        return dataclasses.replace(self, **changes)


def _encode(value):
    if isinstance(value, Position):
        return location_to_dict(value)
    if dataclasses.is_dataclass(value):
        return {k: _encode(v) for k, v in dataclasses.asdict(value).items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if hasattr(value, "value") and not isinstance(value, (int, float, str, bool)):
        return value.value
    return value


_LOCATION_FIELDS = frozenset({"reported_location", "observed", "estimate", "location"})


def message_from_dict(d: dict[str, Any]) -> Message:
    """Rebuild a message; unknown variants or fields are rejected."""
    try:
        cls = MESSAGE_TYPES[d["type"]]
    except KeyError:
        raise UnknownMessage(f"unknown message type {d.get('type')!r}") from None
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in d.items():
        if k == "type":
            continue
        if k not in names:
            raise UnknownMessage(f"{cls.__name__} has no field {k!r}")
        if k in _LOCATION_FIELDS:
            v = location_from_dict(v)
        elif k == "trajectory":
            v = tuple(location_from_dict(p) for p in v)
        elif k == "record" and v is not None:
            v = SubscriptionRecord(**v)
        kwargs[k] = v
    return cls(**kwargs)


@_register
@dataclass(frozen=True, kw_only=True)
class Registration(Message):
    ue_id: str
    creds: str


@_register
@dataclass(frozen=True, kw_only=True)
class RegistrationResult(Message):
    ok: bool
    reason: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class SessionRequest(Message):
    ue_id: str
    dnn: str
    node: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class SessionAccept(Message):
    session_id: int
    policy: str


@_register
@dataclass(frozen=True, kw_only=True)
class AaRequest(Message):
    caa_id: Optional[str] = None
    uss_hint: Optional[str] = None
    app_info: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class SubscriptionQuery(Message):
    node: str
    ue_id: Optional[str] = None
    gpp3_id: Optional[str] = None


@_register
@dataclass(frozen=True, kw_only=True)
class SubscriptionReply(Message):
    node: str
    gpp3_id: Optional[str]
    record: Optional[SubscriptionRecord]


@_register
@dataclass(frozen=True, kw_only=True)
class AaForward(Message):
    gpp3_id: str
    caa_id: Optional[str]
    app_info: str
    uss: str


@_register
@dataclass(frozen=True, kw_only=True)
class AaChallenge(Message):
    round: int
    node: str = ""
    uss: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class AaChallengeResponse(Message):
    round: int
    answer: str = ""
    uss: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class AaResult(Message):
    verdict: str
    reason: str = ""
    app_params: Optional[str] = None
    advice: str = ""
    gpp3_id: str = ""
    node: str = ""
    uss: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class SessionModify(Message):
    owner: str
    policy: str
    session_id: Optional[int] = None


@_register
@dataclass(frozen=True, kw_only=True)
class SessionTerminate(Message):
    owner: str
    reason: str = ""
    session_id: Optional[int] = None


@_register
@dataclass(frozen=True, kw_only=True)
class FlightPermissionRequest(Message):
    caa_id: str
    reported_location: Location
    trajectory: tuple = ()


@_register
@dataclass(frozen=True, kw_only=True)
class LocationRequest(Message):
    caa_id: str


@_register
@dataclass(frozen=True, kw_only=True)
class LocateInvoke(Message):
    ue_id: str


@_register
@dataclass(frozen=True, kw_only=True)
class PrivacyQuery(Message):
    ue_id: str


@_register
@dataclass(frozen=True, kw_only=True)
class PrivacyReply(Message):
    ue_id: str
    amf_addr: Optional[str]
    allowed: bool


@_register
@dataclass(frozen=True, kw_only=True)
class PositioningRequest(Message):
    ue_id: str


@_register
@dataclass(frozen=True, kw_only=True)
class PositioningMeasurement(Message):
    bs_id: str
    ue_id: str
    observed: Optional[Position]


@_register
@dataclass(frozen=True, kw_only=True)
class LocationEstimateMsg(Message):
    ue_id: str
    estimate: Optional[Position]
    error: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class LocationReport(Message):
    caa_id: str
    estimate: Optional[Position]
    error: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class C2SessionRequest(Message):
    caa_id: str
    dnn_snssai: str
    ue_id: str = ""
    gpp3_id: str = ""
    node: str = ""
    aerial_allowed: Optional[bool] = None


@_register
@dataclass(frozen=True, kw_only=True)
class SecondaryAuthInvoke(Message):
    gpp3_id: str
    caa_id: str
    node: str
    ue_id: str = ""
    uss: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class SecondaryAuthResult(Message):
    verdict: str
    gpp3_id: str
    old_caa_id: str
    new_caa_id: Optional[str] = None
    token: Optional[int] = None
    key_material: Optional[int] = None
    reason: str = ""
    node: str = ""
    uss: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class C2SessionAccept(Message):
    session_id: int
    policy: str
    credentials: Optional[dict] = None


@_register
@dataclass(frozen=True, kw_only=True)
class PairingRequest(Message):
    new_caa_id: str
    uavc_id: str
    node: str = ""
    session_id: Optional[int] = None


@_register
@dataclass(frozen=True, kw_only=True)
class PairingAuthorization(Message):
    uav: str
    uavc_id: str
    authorized: bool
    uavc_address: Optional[str] = None
    key_material: Optional[int] = None
    reason: str = ""
    session_id: Optional[int] = None
    uss: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class SecureSessionInit(Message):
    token: int
    caa_id: str


@_register
@dataclass(frozen=True, kw_only=True)
class SecureSessionAck(Message):
    ok: bool
    reason: str = ""


@_register
@dataclass(frozen=True, kw_only=True)
class C2Payload(Message):
    origin: str
    target: str
    counter: int
    command: str
    tag: Optional[str] = None


@_register
@dataclass(frozen=True, kw_only=True)
class RidBroadcast(Message):
    caa_id: str
    location: Position
    counter: int = 0


@_register
@dataclass(frozen=True, kw_only=True)
class Reject(Message):
    request: str
    reason: str


@_register
@dataclass(frozen=True, kw_only=True)
class IdentityBinding(Message):
    ue_id: str
    gpp3_id: str
    caa_id: str
    previous: Optional[str] = None


def c2_tag(key: Optional[int], origin: str, target: str, counter: int, command: str) -> Optional[str]:
    """Keyed integrity tag over a C2 command; stands in for a real MAC."""
    if key is None:
        return None
    h = hashlib.blake2b(key=key.to_bytes(8, "big"), digest_size=8)
    h.update(f"{origin}|{target}|{counter}|{command}".encode())
    return h.hexdigest()


@dataclass(frozen=True)
class Envelope:
    seq: int
    send_time: int
    src: str
    dst: str
    interface: Interface
    body: Message
    nonce: Optional[int] = None
    injected: bool = False
    attacker_id: Optional[str] = None

    def summary(self) -> dict[str, Any]:
        return {
            "env": self.seq,
            "src": self.src,
            "dst": self.dst,
            "interface": self.interface.value,
            "message_type": self.body.type,
            "payload": self.body.to_dict(),
            "nonce": self.nonce,
        }


__all__ = ["Envelope", "Message", "MESSAGE_TYPES", "USER_PLANE", "c2_tag", "message_from_dict", "UnknownMessage"] + [
    name for name in MESSAGE_TYPES
]
