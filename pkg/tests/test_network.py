import copy

import pytest

from skylink import harness
from skylink.messages import AaForward
from skylink.network.base import Envelope
from skylink.model import Interface

from conftest import kinds, notes, outcomes, records, scenario, variant

UAV, UAVC = "uav-1", "uavc-1"


def sends(recs, mtype, src=None, dst=None):
    return [
        r
        for r in kinds(recs, "Send")
        if r["message_type"] == mtype and (src is None or r["src"] == src) and (dst is None or r["dst"] == dst)
    ]


def anomalies(recs, what):
    return [r for r in kinds(recs, "Anomaly") if r["reason"] == what]


def nodes_with(base="nominal", **per_node):
    nodes = copy.deepcopy(scenario(base).data["nodes"])
    for n in nodes:
        n.update(per_node.get(n["id"].replace("-", "_"), {}))
    return nodes


def live(sc, seed=1):
    """A run advanced to its horizon but left open for direct handler calls."""
    r = harness.build(sc, seed)
    r.sim.run_until(sc.horizon_ms)
    return r


def run_recs(sc, seed=1):
    return harness.run(sc, seed).trace.all_records()


def with_uss(**fields):
    uss = copy.deepcopy(scenario("nominal").data["uss"])
    uss[0].update(fields)
    return uss


# registration and sessions


def test_registered_uav_gets_ok_and_rogue_is_refused():
    nominal = records("nominal")
    ok = [r for r in sends(nominal, "RegistrationResult", dst=UAV)]
    assert ok and ok[0]["payload"]["ok"] is True
    rogue = records("unauthorized")
    refused = [r for r in sends(rogue, "RegistrationResult") if r["payload"]["ok"] is False]
    assert refused
    assert not any(r["payload"]["node"] == refused[0]["dst"] for r in notes(rogue, "registered"))


def test_reregistration_is_idempotent(nominal):
    run = harness.run(nominal, 1)
    amf = run.entity("amf")
    ue = nominal.node(UAV)["ue_id"]
    before = dict(amf.registered)
    assert amf.primary_authenticate(UAV, ue, "k-uav-1")
    assert amf.primary_authenticate(UAV, ue, "k-uav-1")
    assert amf.registered == before
    assert not amf.primary_authenticate(UAV, ue, "wrong")


def test_first_session_is_restricted_to_uaaf():
    recs = records("nominal")
    first = [r for r in notes(recs, "session") if r["payload"]["owner"] == UAV][0]["payload"]
    assert first["policy"] == "RestrictedToUaaf"


def test_session_request_before_registration_is_rejected():
    sc = variant("nominal", script=[{"at": 0, "action": "flight_permission", "node": UAV}])
    recs = run_recs(sc)
    rej = sends(recs, "Reject", src="amf", dst=UAV)
    assert rej and rej[0]["payload"]["reason"] == "NotRegistered"


def test_c2_session_is_distinct_from_aa_session(nominal):
    run = harness.run(nominal, 1)
    mine = [s for s in run.entity("smf").sessions if s.owner == UAV]
    assert len(mine) >= 2
    assert len({s.session_id for s in mine}) == len(mine)


# UAS authentication and authorization


def test_uaaf_forwards_aa_to_ufes_and_ufes_to_uss():
    recs = records("nominal")
    fwd = sends(recs, "AaForward", src="uaaf", dst="ufes")
    assert fwd and fwd[0]["payload"]["caa_id"] == "CAA-uav-0001"
    assert sends(recs, "AaForward", src="ufes", dst="uss-1")


def test_non_aerial_subscription_is_terminated():
    recs = records("no_aerial")
    assert sends(recs, "SessionTerminate", src="uaaf", dst="smf")
    denied = [r for r in sends(recs, "AaResult", dst=UAV)]
    assert denied and denied[-1]["payload"]["verdict"] == "Denied"
    assert denied[-1]["payload"]["reason"] == "NotAerial"


def test_replayed_request_is_denied():
    recs = records("replay")
    reasons = [r["payload"].get("reason") for r in sends(recs, "AaResult", src="uaaf")]
    assert "ReplayDetected" in reasons
    assert anomalies(recs, "ReplayDetected")


def test_uss_not_in_valid_list_is_refused():
    uss = with_uss() + [{"id": "uss-2", "records": [], "controllers": {}, "extra_rounds": 0}]
    sc = variant("nominal", uss=uss, nodes=nodes_with(uav_1={"uss_hint": "uss-2"}))
    recs = run_recs(sc)
    res = [r["payload"] for r in sends(recs, "AaResult", src="uaaf", dst=UAV)]
    assert res and res[0]["verdict"] == "Denied" and res[0]["reason"] == "UnknownUss"


def test_ufes_resolves_directory_entries(nominal):
    run = harness.build(nominal, 0)
    ufes = run.entity("ufes")
    msg = AaForward(corr="x", gpp3_id="g", caa_id="CAA-uav-0001", app_info="", uss="")
    assert ufes.ufes_select_and_forward("CAA-uav-0001", msg) == "uss-1"
    assert ufes.ufes_select_and_forward("CAA-uavc-0001", msg) == "uss-1"


def test_ufes_unknown_caa_without_hint_is_unresolved(nominal):
    run = harness.build(nominal, 0)
    ufes = run.entity("ufes")
    msg = AaForward(corr="x", gpp3_id="g", caa_id="CAA-nobody", app_info="", uss="")
    assert ufes.ufes_select_and_forward("CAA-nobody", msg) is None
    env = Envelope(seq=999, send_time=0, src="uaaf", dst="ufes", interface=Interface.SBI, body=msg)
    ufes.on_AaForward(env)
    rej = sends(run.trace.all_records(), "Reject", src="ufes")
    assert rej and rej[0]["payload"]["reason"] == "NoUssResolved"


@pytest.mark.parametrize("rounds", [0, 2])
def test_extra_challenge_rounds(rounds):
    recs = run_recs(variant("nominal", uss=with_uss(extra_rounds=rounds)))
    challenges = [r for r in sends(recs, "AaChallenge", src="uss-1") if r["payload"]["corr"].startswith(UAV)]
    assert len(challenges) == rounds
    assert outcomes(recs, "UasAa", src=UAV)[0]["outcome"] == "Success"


def test_missing_uss_record_denies_and_terminates():
    recs = run_recs(variant("nominal", uss=with_uss(records=[["3gpp-uavc-1", "CAA-uavc-0001"]])))
    res = [r["payload"] for r in sends(recs, "AaResult", src="uss-1") if r["payload"]["corr"].startswith(UAV)]
    assert res and res[0]["verdict"] == "Denied" and res[0]["advice"] == "terminate"
    assert sends(recs, "SessionTerminate", src="uaaf")


def test_aa_success_opens_session_to_uss():
    recs = records("nominal")
    policies = [r["payload"]["policy"] for r in notes(recs, "session") if r["payload"]["owner"] == UAV]
    assert "OpenToUss" in policies


def test_forged_aa_result_is_not_applied():
    recs = records("fake_uss")
    assert anomalies(recs, "ForgedOrigin") or anomalies(recs, "NoPendingAa") or anomalies(recs, "UnsolicitedResult")
    forged = {r["seq"] for r in kinds(recs, "Injected")}
    assert not any(r.get("cause") in forged for r in notes(recs, "authenticated"))


# location verification


def _loc_script(*extra):
    return [{"at": 0, "action": "start_aa", "node": UAV}, *extra]


def test_location_request_reaches_positioning():
    recs = records("location_noise")
    assert sends(recs, "LocateInvoke", src="ucf")
    assert sends(recs, "PositioningRequest", src="gmlc", dst="lmf")


def test_two_concurrent_requests_get_two_reports():
    req = {"at": 1500, "action": "request_location", "uss": "uss-1", "node": UAV}
    recs = run_recs(variant("nominal", script=_loc_script(req, dict(req))))
    assert len(sends(recs, "LocationReport", dst="uss-1")) == 2


def test_unknown_caa_location_request_reports_error():
    req = {"at": 1500, "action": "request_location", "uss": "uss-1", "caa_id": "CAA-nobody"}
    recs = run_recs(variant("nominal", script=_loc_script(req)))
    rep = sends(recs, "LocationReport", dst="uss-1")
    assert rep and rep[0]["payload"]["estimate"] is None and rep[0]["payload"]["error"]


def test_privacy_deny_blocks_positioning():
    ue = scenario("nominal").node(UAV)["ue_id"]
    req = {"at": 1500, "action": "request_location", "uss": "uss-1", "node": UAV}
    sc = variant("nominal", provisioning={"privacy": {ue: "deny"}}, script=_loc_script(req))
    recs = run_recs(sc)
    assert not sends(recs, "PositioningRequest")
    rep = sends(recs, "LocationReport", dst="uss-1")
    assert rep and rep[0]["payload"]["error"] == "PrivacyDenied"


def test_unknown_ue_is_reported(nominal):
    run = harness.build(nominal, 0)
    run.entity("gmlc").gmlc_locate("imsi-nobody", "c-1", "ucf")
    run.sim.run_until(100)
    est = sends(run.trace.all_records(), "LocationEstimateMsg", src="gmlc")
    assert est and est[0]["payload"]["error"] == "UeUnknown"


def test_zero_noise_estimate_is_exact():
    req = {"at": 1500, "action": "request_location", "uss": "uss-1", "node": UAV}
    recs = run_recs(variant("nominal", world={"noise_sigma": 0.0}, script=_loc_script(req)))
    meas = [r["payload"] for r in notes(recs, "measurement")]
    est = notes(recs, "estimate")[0]["payload"]["estimate"]
    truth = meas[0]["truth"]
    assert est == pytest.approx(truth, abs=1e-9)


def test_no_coverage_is_reported():
    bss = copy.deepcopy(scenario("nominal").data["world"]["base_stations"])
    for b in bss:
        b["coverage_radius"] = 1
    req = {"at": 1500, "action": "request_location", "uss": "uss-1", "node": UAV}
    recs = run_recs(variant("nominal", world={"base_stations": bss}, script=_loc_script(req)))
    rep = sends(recs, "LocationReport", dst="uss-1")
    assert rep and rep[0]["payload"]["error"] == "NoCoverage"


# C2 session and pairing


def test_smf_invokes_secondary_auth():
    recs = records("nominal")
    inv = sends(recs, "SecondaryAuthInvoke", src="smf", dst="uaaf")
    assert inv and inv[0]["payload"]["caa_id"] == "CAA-uav-0001"


def test_unknown_dnn_is_rejected():
    sc = variant("nominal", nodes=nodes_with(uav_1={"dnn_c2": "bogus"}))
    recs = run_recs(sc)
    assert any(r["payload"]["reason"] == "UnknownDnn" for r in sends(recs, "Reject", dst=UAV))


def test_secondary_auth_issues_fresh_caa_and_token(nominal):
    run = harness.run(nominal, 1)
    recs = run.trace.all_records()
    issued = [r["payload"] for r in notes(recs, "credentials_issued") if r["payload"]["gpp3_id"] == "3gpp-uav-1"]
    assert issued and issued[0]["new_caa_id"] != "CAA-uav-0001"
    record = run.entity("uss-1").issued[issued[0]["new_caa_id"]]
    assert record["node"] == UAV and record["token"] is not None


def test_c2_without_prior_aa_is_denied():
    sc = variant("nominal", script=[{"at": 0, "action": "start_c2", "uav": UAV, "uavc": UAVC}])
    recs = run_recs(sc)
    res = [r["payload"] for r in sends(recs, "SecondaryAuthResult", src="uss-1")]
    assert res and res[0]["verdict"] == "Denied" and res[0]["reason"] == "NotPreviouslyAuthenticated"


def test_c2_request_after_failed_aa_stays_confined():
    ue = scenario("nominal").node(UAV)["ue_id"]
    script = [
        {"at": 0, "action": "start_aa", "node": UAV},
        {"at": 600, "action": "start_c2", "uav": UAV, "uavc": UAVC},
        {"at": 1500, "action": "probe", "node": UAV, "dst": "uss-1", "interface": "U9", "message_type": "AaRequest"},
    ]
    prov = {"subscriptions": {ue: {"aerial_allowed": False, "served_uss": "uss-1"}}}
    recs = run_recs(variant("nominal", provisioning=prov, script=script))
    c2 = [r["payload"] for r in notes(recs, "session") if r["payload"]["owner"] == UAV and r["payload"]["dnn"] == "uas-c2"]
    assert c2 and all(p["policy"] == "RestrictedToUaaf" for p in c2)
    assert not sends(recs, "AaRequest", src=UAV, dst="uss-1")
    assert [r for r in kinds(recs, "Anomaly") if r.get("message_type") == "AaRequest" and r["dst"] == "uss-1"]


def _two_uav_scenario():
    base = scenario("nominal").data
    nodes = copy.deepcopy(base["nodes"])
    uav2 = dict(nodes[0], id="uav-2", ue_id="imsi-uav-2", gpp3_id="3gpp-uav-2", caa_id="CAA-uav-0002", creds="k-uav-2")
    nodes.append(uav2)
    prov = {
        "credentials": {"imsi-uav-2": "k-uav-2"},
        "subscriptions": {"imsi-uav-2": {"aerial_allowed": True, "served_uss": "uss-1"}},
        "uss_directory": {"CAA-uav-0002": "uss-1"},
    }
    uss = with_uss(records=base["uss"][0]["records"] + [["3gpp-uav-2", "CAA-uav-0002"]])
    world = {"nodes": {"uav-2": {"position": [320, 210, 110]}}}
    script = [
        {"at": 0, "action": "start_aa", "node": UAV},
        {"at": 0, "action": "start_aa", "node": "uav-2"},
        {"at": 0, "action": "start_aa", "node": UAVC},
        {"at": 1500, "action": "start_c2", "uav": UAV, "uavc": UAVC},
        {"at": 2500, "action": "start_c2", "uav": "uav-2", "uavc": UAVC},
    ]
    return variant("nominal", nodes=nodes, provisioning=prov, uss=uss, world=world, script=script)


def test_two_uavs_get_distinct_tokens():
    run = harness.run(_two_uav_scenario(), 1)
    issued = {v["node"]: (caa, v["token"]) for caa, v in run.entity("uss-1").issued.items()}
    assert {UAV, "uav-2"} <= set(issued)
    assert issued[UAV][0] != issued["uav-2"][0]
    assert issued[UAV][1] != issued["uav-2"][1]


def test_pairing_with_unknown_controller_is_denied():
    recs = run_recs(variant("nominal", uss=with_uss(controllers={})))
    auth = [r["payload"] for r in sends(recs, "PairingAuthorization", src="uss-1")]
    assert auth and auth[0]["authorized"] is False


def test_pairing_with_stale_caa_is_denied(nominal):
    from skylink.messages import PairingRequest

    run = live(nominal)
    uss = run.entity("uss-1")
    n = len(run.trace.all_records())
    req = PairingRequest(corr="x", new_caa_id="CAA-uav-0001", uavc_id=UAVC, node=UAV)
    env = Envelope(seq=10**6, send_time=run.sim.now, src="ufes", dst="uss-1", interface=Interface.SBI, body=req)
    uss.on_PairingRequest(env)
    later = run.trace.all_records()[n:]
    auth = [r["payload"] for r in sends(later, "PairingAuthorization", src="uss-1")]
    assert auth and auth[0]["authorized"] is False


def test_nominal_pairing_authorizes_session():
    recs = records("nominal")
    auth = [r["payload"] for r in sends(recs, "PairingAuthorization", src="uss-1")]
    assert auth and auth[0]["authorized"] is True and auth[0]["uavc_id"] == UAVC
    policies = [r["payload"]["policy"] for r in notes(recs, "session") if r["payload"]["owner"] == UAV]
    assert "C2Authorized" in policies


def test_secure_session_token_checked(nominal):
    from skylink.messages import SecureSessionInit

    recs = records("nominal")
    acks = [r["payload"] for r in sends(recs, "SecureSessionAck", src="uss-1")]
    assert acks and acks[0]["ok"] is True
    run = live(nominal)
    caa = next(iter(run.entity("uss-1").issued))
    n = len(run.trace.all_records())
    env = Envelope(
        seq=10**6, send_time=run.sim.now, src=UAV, dst="uss-1", interface=Interface.U2,
        body=SecureSessionInit(corr="x", token=12345, caa_id=caa),
    )
    run.entity("uss-1").on_SecureSessionInit(env)
    later = run.trace.all_records()[n:]
    assert anomalies(later, "TokenMismatch")


def test_tampered_c2_is_discarded():
    recs = records("mitm")
    assert anomalies(recs, "TagMismatch")
    tampered = {r["env"] for r in kinds(recs, "Modified")}
    assert tampered
    arrivals = {r["seq"] for r in kinds(recs, "Delivered") if r["env"] in tampered}
    assert not [r for r in kinds(recs, "Send") if r.get("cause") in arrivals]


# remote identification


def _rid_scenario(z=120.0, horizon=3500):
    world = {"nodes": {UAV: {"position": [300, 200, z], "waypoints": [], "speed": 0.0}}}
    return variant("nominal", horizon_ms=horizon, world=world, script=[])


def test_rid_broadcasts_at_period():
    recs = run_recs(_rid_scenario())
    assert len(sends(recs, "RidBroadcast", src=UAV)) == 3


def test_grounded_uav_does_not_broadcast():
    assert not sends(run_recs(_rid_scenario(z=0.0)), "RidBroadcast")


def test_tpae_logs_every_broadcast():
    run = harness.run(_rid_scenario(), 1)
    recs = run.trace.all_records()
    assert len(run.entity("tpae-1").log) == len(sends(recs, "RidBroadcast", src=UAV))
