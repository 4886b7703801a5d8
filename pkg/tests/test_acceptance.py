"""One PASS/FAIL line per acceptance criterion, with the tolerance it was held to."""

import math
import random
import time

import pytest

from skylink import harness, verify_trace
from skylink.fuzz import random_scenario
from skylink.messages import USER_PLANE

from conftest import kinds, notes, outcomes, scenario

RESULTS: list[str] = []
FUZZ_RUNS = 1000
NETWORK_INTERFACES = ("U1", "U3", "U4", "U9")


def check(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def recs_of(name, seed):
    return harness.run(scenario(name), seed).trace.all_records()


@pytest.fixture(scope="module")
def fuzz_suite():
    out = []
    for i in range(FUZZ_RUNS):
        sc = random_scenario(random.Random(i), i)
        out.append(harness.run(sc, i).trace.all_records())
    return out


# independent oracles: they read raw Send/Delivered records, never the verifier's index


def _genuine_deliveries(recs):
    forged = {r["env"] for r in recs if r["kind"] in ("Injected", "Modified")}
    sends = {r["env"]: r for r in recs if r["kind"] == "Send"}
    return [(sends[r["env"]], r) for r in recs if r["kind"] == "Delivered" and r["env"] not in forged and r["env"] in sends]


def confinement_breaches(recs):
    """User-plane deliveries from a UAV, to anyone but the UAAF, before the UAAF granted its A&A."""
    kind = recs[0]["entities"]
    cleared: dict[str, int] = {}
    for r in recs:
        if r["kind"] == "Send" and r["message_type"] == "AaResult" and kind.get(r["src"]) == "uaaf" and r["payload"]["verdict"] == "Success":
            cleared.setdefault(r["dst"], r["seq"])

    def aimed_past_uaaf(send):
        return (
            kind.get(send["src"]) == "uav"
            and send["message_type"] in USER_PLANE
            and send["interface"] in NETWORK_INTERFACES
            and kind.get(send["dst"]) != "uaaf"
        )

    # a gated attempt leaves an Anomaly carrying the message type instead of a Send
    tried = [r for r in recs if r["kind"] == "Send" or (r["kind"] == "Anomaly" and "message_type" in r)]
    attempts = sum(1 for r in tried if aimed_past_uaaf(r) and r["seq"] < cleared.get(r["src"], math.inf))
    breaches = sum(1 for send, d in _genuine_deliveries(recs) if aimed_past_uaaf(send) and d["seq"] < cleared.get(send["src"], math.inf))
    return breaches, attempts


def c2_breaches(recs):
    """C2 deliveries between a pair before both the pairing grant and the secure-session ack reached them."""
    kind = recs[0]["entities"]
    granted: set[tuple[str, str]] = set()
    acked: set[str] = set()
    delivered = breaches = 0
    for send, d in sorted(_genuine_deliveries(recs), key=lambda sd: sd[1]["seq"]):
        p = send["payload"]
        if send["message_type"] == "PairingAuthorization" and p["authorized"] and kind.get(send["dst"]) == "uavc":
            granted.add((p["uav"], p["uavc_id"]))
        elif send["message_type"] == "SecureSessionAck" and p["ok"]:
            acked.add(send["dst"])
        elif send["message_type"] == "C2Payload":
            ends = (p["origin"], p["target"])
            if sorted(kind.get(e, "") for e in ends) != ["uav", "uavc"]:
                continue
            uav, uavc = ends if kind[ends[0]] == "uav" else ends[::-1]
            delivered += 1
            if (uav, uavc) not in granted or uav not in acked:
                breaches += 1
    return breaches, delivered


# criteria


def test_nominal_conformance():
    sc = scenario("nominal")
    walls = []
    for seed in range(5):
        t0 = time.perf_counter()
        run = harness.run(sc, seed)
        walls.append(time.perf_counter() - t0)
    rep = verify_trace(run.trace.all_records())
    wf = {v.workflow: v for v in rep.verdicts if v.instance.startswith("uav-1/")}
    ok = set(wf) == {"UasAa", "LocationVerify", "C2Establish"}
    ok = ok and all(v.outcome == "Conformant" and v.result == "Success" for v in wf.values())
    ok = ok and all(i.passed for i in rep.invariants) and max(walls) < 1.0
    check("nominal conformance", ok, f"3 workflows Conformant in table order, slowest run {max(walls) * 1000:.1f} ms (limit 1000 ms)")


def test_determinism():
    hashes = {recs_of("nominal", 42)[-1]["trace_hash"] for _ in range(10)}
    check("determinism", len(hashes) == 1, f"10 runs of nominal seed 42 -> {len(hashes)} unique hash (need 1)")


def test_session_confinement(fuzz_suite):
    total = attempts = inv_fail = 0
    for recs in fuzz_suite:
        b, a = confinement_breaches(recs)
        total += b
        attempts += a
        inv = {i.name: i.passed for i in verify_trace(recs).invariants}
        inv_fail += not inv["session_confinement"]
    ok = total == 0 and inv_fail == 0 and attempts > 0
    check(
        "session confinement",
        ok,
        f"{FUZZ_RUNS} fuzz runs, {attempts} pre-A&A user-plane sends aimed past the UAAF, {total} delivered (need 0), invariant failed in {inv_fail}",
    )


def test_aerial_gate():
    bad = 0
    for seed in range(100):
        recs = recs_of("no_aerial", seed)
        terminated = any(r["message_type"] == "SessionTerminate" for r in kinds(recs, "Send"))
        reached = any(r["payload"].get("node") == "uav-1" for r in notes(recs, "uss_authenticated"))
        reached = reached or any(r["payload"]["node"] == "uav-1" for r in notes(recs, "authenticated"))
        bad += (not terminated) or reached
    check("aerial-subscription gate", bad == 0, f"100 seeds, {bad} without SessionTerminate or with USS authentication (need 0)")


def test_c2_gating(fuzz_suite):
    total = delivered = 0
    for recs in fuzz_suite:
        b, d = c2_breaches(recs)
        total += b
        delivered += d
    nb, nd = c2_breaches(recs_of("nominal", 42))
    ok = total == 0 and nb == 0 and nd > 0
    check("C2 gating", ok, f"{FUZZ_RUNS} fuzz runs + nominal: {delivered + nd} C2 deliveries, {total + nb} before pairing+ack (need 0)")


def _verdicts(recs):
    return [r["payload"]["verdict"] for r in notes(recs, "location_verdict")]


def _xyz(v):
    return (v["x"], v["y"], v["z"]) if isinstance(v, dict) else tuple(v)


def _oracle_rms(sigma: float, n: int, draws: int = 200_000) -> float:
    rng = random.Random(0)
    sq = 0.0
    for _ in range(draws):
        m = math.fsum(rng.gauss(0.0, sigma) for _ in range(n)) / n
        sq += m * m
    return math.sqrt(sq / draws)


def test_location_verification():
    spoof_hits = sum("Mismatch" in _verdicts(recs_of("spoof", s)) for s in range(100))
    alarms = rounds = 0
    errs = []
    n_used = set()
    for seed in range(1000):
        recs = recs_of("location_noise", seed)
        v = _verdicts(recs)
        rounds += len(v)
        alarms += v.count("Mismatch")
        meas = notes(recs, "measurement")
        for est in notes(recs, "estimate"):
            e = est["payload"]["estimate"]
            if e is None:
                continue
            mine = [m["payload"] for m in meas if m.get("corr") == est.get("corr")]
            n_used.add(len(mine))
            errs.extend(a - b for a, b in zip(_xyz(e), _xyz(mine[0]["truth"])))
    rms = math.sqrt(math.fsum(x * x for x in errs) / len(errs))
    (n,) = n_used
    sigma = scenario("location_noise").data["world"]["noise_sigma"]
    oracle = _oracle_rms(sigma, n)
    far = alarms / rounds
    ok = spoof_hits == 100 and far < 0.01 and abs(rms - oracle) <= 0.15 * oracle
    check(
        "location verification",
        ok,
        f"spoof flagged {spoof_hits}/100; false alarms {alarms}/{rounds} = {far:.2%} (<1%); "
        f"RMS {rms:.3f} m vs Monte-Carlo {oracle:.3f} m (sigma/sqrt({n}) = {sigma / math.sqrt(n):.3f}), tolerance 15%",
    )


def test_replay_rejection():
    good = 0
    for seed in range(100):
        recs = recs_of("replay", seed)
        results = [(r["payload"]["verdict"], r["payload"].get("reason", "")) for r in kinds(recs, "Send") if r["message_type"] == "AaResult" and r["src"] == "uaaf" and r["dst"] == "uav-1"]
        own = outcomes(recs, "UasAa", src="uav-1")
        good += ("Denied", "ReplayDetected") in results and bool(own) and own[0]["outcome"] == "Success"
    check("replay rejection", good == 100, f"Denied(ReplayDetected) with original Success in {good}/100 seeds")


def _forged_effects(recs):
    """State changes transitively caused by an attacker's injected envelope."""
    tainted = {r["env"] for r in recs if r["kind"] == "Injected"}
    arrivals: set[int] = set()
    effects = 0
    for r in recs:
        if r["kind"] == "Delivered" and r["env"] in tainted:
            arrivals.add(r["seq"])
        elif r["kind"] == "Send" and r.get("cause") in arrivals:
            tainted.add(r["env"])
        elif r["kind"] == "StateChange" and r.get("cause") in arrivals:
            effects += 1
    return effects


def test_fake_uss_rejection():
    effects = min_anoms = None
    for seed in range(100):
        recs = recs_of("fake_uss", seed)
        attackers = {a["id"] for a in recs[0]["context"]["attackers"]}
        e = _forged_effects(recs)
        a = sum(1 for r in kinds(recs, "Anomaly") if r["src"] not in attackers)
        effects = e if effects is None else effects + e
        min_anoms = a if min_anoms is None else min(min_anoms, a)
    ok = effects == 0 and min_anoms >= 1
    check("fake-USS rejection", ok, f"100 seeds: {effects} state changes from forged results (need 0), fewest anomalies in a run {min_anoms} (need >=1)")


def test_jamming():
    full = set()
    for seed in range(20):
        out = outcomes(recs_of("jam_dos", seed), "UasAa", src="uav-1")
        full.add((out[0]["outcome"], out[0].get("retries")) if out else None)
    done = sum(
        any(o["outcome"] == "Success" for o in outcomes(recs_of("jam_p03", s), "UasAa", src="uav-1")) for s in range(100)
    )
    uplinks = 4  # Registration, SessionRequest, AaRequest, one challenge response
    bound = (1 - 0.3**6) ** uplinks
    ok = full == {("TimedOut", 5)} and done >= 99
    check(
        "jamming/DoS",
        ok,
        f"p=1.0 -> {sorted(full, key=str)} over 20 seeds (need TimedOut, 5); p=0.3 completed {done}/100 (need >=99, analytic floor {bound:.4f})",
    )


def test_downgrade():
    good = 0
    for seed in range(20):
        run = harness.run(scenario("downgrade"), seed)
        recs = run.trace.all_records()
        first = [r["payload"]["mode"] for r in notes(recs, "c2_link") if r["src"] == "uav-1"]
        moves = [r["payload"] for r in notes(recs, "c2_mode") if r["src"] == "uav-1"]
        heard = [r for r in kinds(recs, "Anomaly") if r["reason"] == "Intercepted"]
        strict = verify_trace(recs).exit_code("strict")
        good += (
            bool(first) and first[0] == "Direct" and bool(moves) and moves[0]["from"] == "Direct"
            and moves[0]["to"] in ("NetworkAssisted", "UtmNavigated") and bool(heard) and strict != 0
        )
    check("downgrade attack", good == 20, f"Direct->fallback, nonempty eavesdrop log and strict exit != 0 in {good}/20 seeds")
