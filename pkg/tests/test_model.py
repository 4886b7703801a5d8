import pytest
from hypothesis import given
from hypothesis import strategies as st

from skylink.model import (
    AmbiguousId,
    CellLocation,
    EntityKind,
    IdentityBundle,
    Interface,
    NotFound,
    PduSession,
    Policy,
    PolicyTransitionError,
    Position,
    SessionState,
    interface_legal,
    location_from_dict,
    location_to_dict,
    match_ids,
    policy_sequence_legal,
    session_gate,
)
from skylink.engine import _Probe


def bundle(ue, caa, gpp3="g"):
    return IdentityBundle(ue, gpp3, caa)


class TestMatchIds:
    def test_unique_lookup(self):
        reg = [bundle("ue-1", "CAA-7"), bundle("ue-2", "CAA-8")]
        assert match_ids("CAA-7", reg) == "ue-1"

    def test_absent(self):
        with pytest.raises(NotFound):
            match_ids("CAA-9", [bundle("ue-1", "CAA-7")])

    def test_superseded_id_resolves_via_history(self):
        b = bundle("ue-1", "CAA-old")
        b.reissue("CAA-new")
        assert match_ids("CAA-old", [b]) == "ue-1"
        assert match_ids("CAA-new", [b]) == "ue-1"

    def test_ambiguous(self):
        with pytest.raises(AmbiguousId):
            match_ids("CAA-7", [bundle("ue-1", "CAA-7"), bundle("ue-2", "CAA-7")])


class TestIdentityBundle:
    def test_plmn_id_immutable(self):
        b = bundle("ue-1", "CAA-1")
        with pytest.raises(AttributeError):
            b.plmn_ue_id = "ue-2"

    def test_reissue_keeps_history(self):
        b = bundle("ue-1", "CAA-1")
        b.reissue("CAA-2")
        assert b.caa_level_uav_id == "CAA-2"
        assert b.history == ["CAA-1"]

    def test_reissue_to_same_id_rejected(self):
        with pytest.raises(ValueError):
            bundle("ue-1", "CAA-1").reissue("CAA-1")


def session(policy=Policy.RESTRICTED_TO_UAAF, peer=None):
    s = PduSession(1, "uav-1", "uas-aa", state=SessionState.ACTIVE)
    if policy is not Policy.RESTRICTED_TO_UAAF:
        s.open_to_uss()
    if policy is Policy.C2_AUTHORIZED:
        s.authorize_c2(peer, "addr")
    return s


class TestSessionGate:
    def test_restricted_to_uaaf_delivers(self):
        assert session_gate(session(), _Probe("uav-1", "uaaf"), EntityKind.UAAF).deliver

    def test_restricted_blocks_controller(self):
        v = session_gate(session(), _Probe("uav-1", "uavc-1"), EntityKind.UAVC)
        assert not v.deliver and v.reason == "PolicyViolation"

    def test_c2_authorized_peer_delivers(self):
        s = session(Policy.C2_AUTHORIZED, peer="uavc-1")
        assert session_gate(s, _Probe("uav-1", "uavc-1"), EntityKind.UAVC).deliver

    def test_c2_authorized_other_controller_blocked(self):
        s = session(Policy.C2_AUTHORIZED, peer="uavc-1")
        assert not session_gate(s, _Probe("uav-1", "uavc-2"), EntityKind.UAVC).deliver

    def test_open_to_uss(self):
        s = session(Policy.OPEN_TO_USS)
        for dst, kind in (("uaaf", EntityKind.UAAF), ("ufes", EntityKind.UFES), ("uss-1", EntityKind.USS)):
            assert session_gate(s, _Probe("uav-1", dst), kind).deliver
        assert not session_gate(s, _Probe("uav-1", "uavc-1"), EntityKind.UAVC).deliver

    def test_terminated_always_blocks(self):
        s = session()
        s.terminate()
        v = session_gate(s, _Probe("uav-1", "uaaf"), EntityKind.UAAF)
        assert not v.deliver and v.reason == "SessionTerminated"


class TestPolicyLadder:
    def test_skip_rejected(self):
        s = session()
        with pytest.raises(PolicyTransitionError):
            s.authorize_c2("uavc-1", "a")

    def test_terminated_cannot_advance(self):
        s = session()
        s.terminate()
        with pytest.raises(PolicyTransitionError):
            s.open_to_uss()

    @given(st.lists(st.sampled_from(["open", "c2", "terminate"]), max_size=8))
    def test_any_operation_sequence_yields_legal_observed_policies(self, ops):
        s = session()
        seen = [s.policy.value]
        for op in ops:
            try:
                {"open": s.open_to_uss, "c2": lambda: s.authorize_c2("uavc-1", "a"), "terminate": s.terminate}[op]()
            except PolicyTransitionError:
                pass
            seen.append(SessionState.TERMINATED.value if s.state is SessionState.TERMINATED else s.policy.value)
        assert policy_sequence_legal(seen)

    def test_backwards_sequence_illegal(self):
        assert not policy_sequence_legal(["OpenToUss", "RestrictedToUaaf"])


@given(
    st.sampled_from(list(Policy)),
    st.sampled_from([EntityKind.UAAF, EntityKind.UFES, EntityKind.USS, EntityKind.UAVC, EntityKind.AMF, EntityKind.TPAE]),
)
def test_gate_permissions_grow_along_the_ladder(policy, dst_kind):
    """Anything a lower policy delivers, every higher policy delivers too."""
    ladder = [Policy.RESTRICTED_TO_UAAF, Policy.OPEN_TO_USS, Policy.C2_AUTHORIZED]
    dst = "uavc-1" if dst_kind is EntityKind.UAVC else "x"
    if session_gate(session(policy, peer="uavc-1"), _Probe("uav-1", dst), dst_kind).deliver:
        for higher in ladder[ladder.index(policy):]:
            assert session_gate(session(higher, peer="uavc-1"), _Probe("uav-1", dst), dst_kind).deliver


class TestInterfaces:
    def test_uav_to_amf_on_u1(self):
        assert interface_legal(EntityKind.UAV, EntityKind.AMF, Interface.U1)

    def test_uav_to_uavc_on_u6_illegal(self):
        assert not interface_legal(EntityKind.UAV, EntityKind.UAVC, Interface.U6)

    def test_u2u_between_uavs(self):
        assert interface_legal(EntityKind.UAV, EntityKind.UAV, Interface.U2U)

    def test_u7_is_one_way(self):
        assert interface_legal(EntityKind.UAV, EntityKind.TPAE, Interface.U7)
        assert not interface_legal(EntityKind.TPAE, EntityKind.UAV, Interface.U7)


class TestLocation:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Position(float("nan"), 0, 0)

    @given(st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 3))
    def test_absolute_round_trip(self, xyz):
        p = Position.of(xyz)
        assert location_from_dict(location_to_dict(p)) == p

    def test_cell_round_trip(self):
        c = CellLocation("gnb-1", "ta-1")
        assert location_from_dict(location_to_dict(c)) == c
