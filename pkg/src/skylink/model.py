"""Identity, session, location and interface vocabulary shared by the simulator.

Everything here is plain data plus a few pure functions (``match_ids``,
``session_gate``, ``interface_legal``). Mutation happens only inside the
event loop that owns these objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Optional, Union


class SkylinkError(Exception):
    """Base class for every error raised by the package."""


class NotFound(SkylinkError):
    pass


class AmbiguousId(SkylinkError):
    pass


class IllegalInterface(SkylinkError):
    pass


class IncomparableKinds(SkylinkError):
    pass


class Interface(str, Enum):
    U1 = "U1"
    U2 = "U2"
    U3 = "U3"
    U4 = "U4"
    U5 = "U5"
    U6 = "U6"
    U7 = "U7"
    U8 = "U8"
    U9 = "U9"
    U2U = "U2U"
    # service-based links between 5GC functions (not one of the UAS reference points)
    SBI = "SBI"


class EntityKind(str, Enum):
    UAV = "uav"
    UAVC = "uavc"
    AMF = "amf"
    SMF = "smf"
    PCF = "pcf"
    BSF = "bsf"
    UDM = "udm"
    GMLC = "gmlc"
    LMF = "lmf"
    NGBS = "ngbs"
    UFES = "ufes"
    UAAF = "uaaf"
    UCF = "ucf"
    USS = "uss"
    TPAE = "tpae"


UAS_KINDS = frozenset({EntityKind.UAV, EntityKind.UAVC})
CORE_KINDS = frozenset(
    {
        EntityKind.AMF,
        EntityKind.SMF,
        EntityKind.PCF,
        EntityKind.BSF,
        EntityKind.UDM,
        EntityKind.GMLC,
        EntityKind.LMF,
        EntityKind.NGBS,
        EntityKind.UFES,
        EntityKind.UAAF,
        EntityKind.UCF,
    }
)

K = EntityKind
_ANY_UAS = UAS_KINDS
_ANY_CORE = CORE_KINDS

# interface -> (allowed source kinds, allowed destination kinds, bidirectional)
_ARCHITECTURE: dict[Interface, tuple[frozenset, frozenset, bool]] = {
    Interface.U1: (_ANY_UAS, _ANY_CORE, True),
    Interface.U2: (_ANY_CORE, frozenset({K.TPAE}), True),
    Interface.U3: (frozenset({K.UAV}), frozenset({K.UAVC}), True),
    Interface.U4: (frozenset({K.UAV}), frozenset({K.TPAE}), True),
    Interface.U5: (frozenset({K.UAV}), frozenset({K.UAVC}), True),
    Interface.U6: (frozenset({K.UFES}), frozenset({K.USS}), True),
    Interface.U7: (frozenset({K.UAV}), frozenset({K.TPAE}), False),
    Interface.U8: (frozenset({K.UAV}), frozenset({K.UAVC}), True),
    Interface.U9: (_ANY_UAS, frozenset({K.USS}), True),
    Interface.U2U: (frozenset({K.UAV}), frozenset({K.UAV}), True),
    Interface.SBI: (_ANY_CORE, _ANY_CORE, True),
}


def interface_legal(src: EntityKind, dst: EntityKind, interface: Interface) -> bool:
    a, b, both_ways = _ARCHITECTURE[interface]
    if src in a and dst in b:
        return True
    return both_ways and src in b and dst in a


@dataclass(frozen=True)
class Position:
    """Absolute location in the planar world frame, meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite position {self}")

    def __add__(self, other: "Position") -> "Position":
        return Position(self.x + other.x, self.y + other.y, self.z + other.z)

    def distance(self, other: "Position") -> float:
        return math.dist(self.as_tuple(), other.as_tuple())

    def norm(self) -> float:
        return math.hypot(self.x, self.y, self.z)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @classmethod
    def of(cls, seq: Iterable[float]) -> "Position":
        x, y, z = (float(v) for v in seq)
        return cls(x, y, z)


@dataclass(frozen=True)
class CellLocation:
    """Relative location: serving cell and tracking area."""

    cell_id: str
    tracking_area: str = ""


Location = Union[Position, CellLocation]


def location_to_dict(loc: Optional[Location]) -> Optional[dict]:
    if loc is None:
        return None
    if isinstance(loc, Position):
        return {"x": loc.x, "y": loc.y, "z": loc.z}
    return {"cell_id": loc.cell_id, "tracking_area": loc.tracking_area}


def location_from_dict(d: Optional[dict]) -> Optional[Location]:
    if d is None:
        return None
    if "cell_id" in d:
        return CellLocation(d["cell_id"], d.get("tracking_area", ""))
    return Position(float(d["x"]), float(d["y"]), float(d["z"]))


@dataclass
class IdentityBundle:
    plmn_ue_id: str
    gpp3_uav_id: str
    caa_level_uav_id: str
    served_uss: Optional[str] = None
    app_id: str = ""
    history: list[str] = field(default_factory=list)

    def __setattr__(self, name, value):
        if name == "plmn_ue_id" and "plmn_ue_id" in self.__dict__:
            raise AttributeError("plmn_ue_id is immutable")
        super().__setattr__(name, value)

    def reissue(self, new_caa_id: str) -> None:
        """Adopt a newly assigned CAA-level id, keeping the old one in history."""
        if new_caa_id == self.caa_level_uav_id:
            raise ValueError("re-issued CAA-level id must differ from the current one")
        self.history.append(self.caa_level_uav_id)
        self.caa_level_uav_id = new_caa_id

    def claims(self, caa_id: str) -> bool:
        return caa_id == self.caa_level_uav_id or caa_id in self.history


@dataclass(frozen=True)
class SubscriptionRecord:
    plmn_ue_id: str
    aerial_allowed: bool
    served_uss: str
    policy_blob: str = ""


class Policy(str, Enum):
    RESTRICTED_TO_UAAF = "RestrictedToUaaf"
    OPEN_TO_USS = "OpenToUss"
    C2_AUTHORIZED = "C2Authorized"


_POLICY_RANK = {
    Policy.RESTRICTED_TO_UAAF: 0,
    Policy.OPEN_TO_USS: 1,
    Policy.C2_AUTHORIZED: 2,
}


class SessionState(str, Enum):
    ESTABLISHING = "Establishing"
    ACTIVE = "Active"
    TERMINATED = "Terminated"


class PolicyTransitionError(SkylinkError):
    pass


@dataclass
class PduSession:
    session_id: int
    owner: str
    dnn_snssai: str
    policy: Policy = Policy.RESTRICTED_TO_UAAF
    state: SessionState = SessionState.ESTABLISHING
    peer: Optional[str] = None
    peer_address: Optional[str] = None

    def open_to_uss(self) -> None:
        self._advance(Policy.OPEN_TO_USS)

    def authorize_c2(self, peer: str, address: str) -> None:
        self._advance(Policy.C2_AUTHORIZED)
        self.peer = peer
        self.peer_address = address

    def terminate(self) -> None:
        self.state = SessionState.TERMINATED

    def _advance(self, target: Policy) -> None:
        if self.state is SessionState.TERMINATED:
            raise PolicyTransitionError(f"session {self.session_id} is terminated")
        if _POLICY_RANK[target] != _POLICY_RANK[self.policy] + 1:
            raise PolicyTransitionError(
                f"illegal policy transition {self.policy.value} -> {target.value}"
            )
        self.policy = target

    def snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "owner": self.owner,
            "policy": self.policy.value,
            "state": self.state.value,
            "peer": self.peer,
        }


def policy_sequence_legal(policies: list[str]) -> bool:
    """True when an observed policy/state sequence respects R -> O -> C -> Terminated."""
    rank = {p.value: r for p, r in _POLICY_RANK.items()}
    rank[SessionState.TERMINATED.value] = 3
    last = -1
    for p in policies:
        r = rank[p]
        if r < last:
            return False
        last = r
    return True


@dataclass(frozen=True)
class PairingRecord:
    uav: str
    uavc: str
    authorized: bool
    uavc_address: str


class GateVerdict(NamedTuple):
    deliver: bool
    reason: Optional[str] = None


DELIVER = GateVerdict(True)
POLICY_VIOLATION = "PolicyViolation"
SESSION_TERMINATED = "SessionTerminated"

_USS_SIDE = frozenset({EntityKind.UAAF, EntityKind.UFES, EntityKind.USS})


def session_gate(session: PduSession, env, dst_kind: EntityKind) -> GateVerdict:
    """Decide whether a user-plane envelope may cross ``session``.

    ``env`` needs ``src`` and ``dst``. Owner-originated traffic follows the
    policy ladder; a C2-authorized session also carries the paired peer's
    traffic back to the owner.
    """
    if session.state is SessionState.TERMINATED:
        return GateVerdict(False, SESSION_TERMINATED)
    policy = session.policy
    if env.src != session.owner:
        inbound = policy is Policy.C2_AUTHORIZED and env.src == session.peer
        return DELIVER if inbound and env.dst == session.owner else GateVerdict(False, POLICY_VIOLATION)
    if policy is Policy.RESTRICTED_TO_UAAF:
        ok = dst_kind is EntityKind.UAAF
    elif policy is Policy.OPEN_TO_USS:
        ok = dst_kind in _USS_SIDE
    else:
        ok = dst_kind in _USS_SIDE or env.dst == session.peer
    return DELIVER if ok else GateVerdict(False, POLICY_VIOLATION)


class _Hop(NamedTuple):
    src: str
    dst: str


def gate_from_snapshot(snapshot: dict, src: str, dst: str, dst_kind: EntityKind) -> GateVerdict:
    """Re-evaluate the gate from a serialized session snapshot (used offline)."""
    s = PduSession(
        session_id=snapshot["session_id"],
        owner=snapshot["owner"],
        dnn_snssai="",
        policy=Policy(snapshot["policy"]),
        state=SessionState(snapshot["state"]),
        peer=snapshot.get("peer"),
    )
    return session_gate(s, _Hop(src, dst), dst_kind)


def match_ids(caa_id: str, registry: Iterable[IdentityBundle]) -> str:
    """Resolve a CAA-level id (current or superseded) to the owning PLMN UE id.

    Raises ``NotFound`` when no bundle claims the id and ``AmbiguousId`` when
    more than one does.
    """
    owners = [b.plmn_ue_id for b in registry if b.claims(caa_id)]
    if not owners:
        raise NotFound(caa_id)
    if len(set(owners)) > 1:
        raise AmbiguousId(f"{caa_id} claimed by {sorted(set(owners))}")
    return owners[0]
