import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skylink import harness
from skylink.engine import Deliver, Drop, Duplicate, Inject, Simulator, TapConflict
from skylink.messages import AaResult, Registration, RidBroadcast
from skylink.model import EntityKind, IllegalInterface, Interface, Position
from skylink.trace import Trace

from conftest import kinds, scenario, variant


class Sink:
    def __init__(self, eid, kind):
        self.id, self.kind = eid, kind
        self.got, self.timers = [], []

    def handle(self, env):
        self.got.append(env)

    def on_timer(self, timer_id):
        self.timers.append(timer_id)


class Tap:
    def __init__(self, action, attacker_id="atk-1"):
        self.action, self.attacker_id, self.seen = action, attacker_id, []

    def intercept(self, env, sim):
        self.seen.append(env)
        return self.action


def make_sim(**kw):
    sim = Simulator(7, **kw)
    ents = {
        "uav-1": Sink("uav-1", EntityKind.UAV),
        "uav-2": Sink("uav-2", EntityKind.UAV),
        "uavc-1": Sink("uavc-1", EntityKind.UAVC),
        "amf": Sink("amf", EntityKind.AMF),
    }
    for e in ents.values():
        sim.register(e)
    sim.start()
    return sim, ents


def reg():
    return Registration(ue_id="ue-1", creds="k")


class TestSend:
    def test_u1_scheduled_at_latency(self):
        sim, ents = make_sim()
        seq = sim.send("uav-1", "amf", Interface.U1, reg())
        assert sim.peek_time() == 10
        assert kinds(sim.trace.records, "Send")[0]["env"] == seq
        sim.step()
        assert sim.now == 10 and ents["amf"].got[0].seq == seq

    def test_u6_between_uas_nodes_illegal(self):
        sim, _ = make_sim()
        with pytest.raises(IllegalInterface):
            sim.send("uav-1", "uavc-1", Interface.U6, reg())

    def test_u2u_accepted(self):
        sim, ents = make_sim()
        sim.send("uav-1", "uav-2", Interface.U2U, RidBroadcast(caa_id="c", location=Position(0, 0, 1)))
        sim.run_until(100)
        assert len(ents["uav-2"].got) == 1

    def test_per_channel_latency(self):
        sim, _ = make_sim(latency_ms={"U1": 35})
        sim.send("uav-1", "amf", "U1", reg())
        assert sim.peek_time() == 35


class TestStep:
    def test_tiebreak_by_sequence(self):
        sim, ents = make_sim()
        sim.set_timer("uav-1", "a", 10)
        sim.set_timer("uav-2", "b", 10)
        first = sim.step()
        second = sim.step()
        assert first.fire_time == second.fire_time == 10 and first.seq < second.seq
        assert ents["uav-1"].timers == ["a"] and ents["uav-2"].timers == ["b"]

    def test_empty_queue(self):
        sim, _ = make_sim()
        assert sim.step() is None

    def test_cancelled_timer_does_not_fire(self):
        sim, ents = make_sim()
        sim.set_timer("uav-1", "a", 5)
        sim.cancel_timer("uav-1", "a")
        sim.run_until(100)
        assert ents["uav-1"].timers == []

    @given(st.lists(st.tuples(st.integers(0, 50), st.sampled_from(["uav-1", "uav-2", "amf"])), max_size=30))
    def test_events_processed_in_time_then_sequence_order(self, timers):
        sim, _ = make_sim()
        for i, (t, owner) in enumerate(timers):
            sim.set_timer(owner, f"t{i}", t)
        keys = []
        while (ev := sim.step()) is not None:
            keys.append(ev.key())
        assert keys == sorted(keys)
        times = [r["time_ms"] for r in sim.trace.records]
        assert times == sorted(times)


class TestTaps:
    def test_drop_records_and_skips_destination(self):
        sim, ents = make_sim()
        sim.attach_tap("U1", Tap(Drop()))
        sim.send("uav-1", "amf", "U1", reg())
        sim.run_until(100)
        assert ents["amf"].got == []
        (d,) = kinds(sim.trace.records, "Dropped")
        assert d["attacker_id"] == "atk-1"

    def test_second_tap_conflicts(self):
        sim, _ = make_sim()
        sim.attach_tap("U1", Tap(Deliver()))
        with pytest.raises(TapConflict):
            sim.attach_tap("U1", Tap(Deliver(), "atk-2"))

    def test_injected_envelope_flagged(self):
        sim, ents = make_sim()
        forged = AaResult(verdict="Success")
        sim.attach_tap("U1", Tap(Inject("amf", "uav-1", Interface.U1, forged)))
        sim.send("uav-1", "amf", "U1", reg())
        sim.run_until(100)
        (inj,) = kinds(sim.trace.records, "Injected")
        assert inj["injected"] is True and inj["attacker_id"] == "atk-1"
        assert any(e.injected and e.body == forged for e in ents["uav-1"].got)

    def test_duplicate_delivers_twice(self):
        sim, ents = make_sim()
        sim.attach_tap("U1", Tap(Duplicate()))
        sim.send("uav-1", "amf", "U1", reg())
        sim.run_until(100)
        assert len(ents["amf"].got) == 2
        assert sum(1 for r in kinds(sim.trace.records, "Delivered") if r.get("duplicate")) == 1


class TestRun:
    def test_zero_horizon(self, nominal):
        r = harness.build(nominal, 1)
        r.sim.run_until(0)
        body = r.trace.records
        assert body[0]["kind"] == "RunStart"
        assert all(rec["time_ms"] == 0 for rec in body)
        assert not kinds(body, "Delivered")

    def test_same_seed_identical_traces(self, nominal, tmp_path):
        a, b = harness.run(nominal, 5), harness.run(nominal, 5)
        a.trace.write(tmp_path / "a.jsonl")
        b.trace.write(tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_different_seeds_differ(self, nominal):
        assert harness.run(nominal, 1).trace.summary["trace_hash"] != harness.run(nominal, 2).trace.summary["trace_hash"]

    def test_aa_only_run_ends_with_result_delivery(self):
        sc = variant("nominal", script=[{"at": 0, "action": "start_aa", "node": "uav-1"}])
        recs = harness.run(sc, 3).trace.all_records()
        to_uav = [r for r in kinds(recs, "Delivered") if r["dst"] == "uav-1"]
        assert to_uav[-1]["message_type"] == "AaResult"
        assert to_uav[-1]["payload"]["verdict"] == "Success"

    def test_jammer_at_zero_probability_is_neutral(self):
        base = variant("jam_p03", attackers=[])
        p0 = variant("jam_p03", attackers=[{"id": "jam-1", "kind": "Jammer", "interface": "U1", "drop_prob": 0.0}])
        strip = lambda recs: [r for r in recs if r["kind"] not in ("RunStart", "RunSummary")]
        for seed in range(5):
            assert strip(harness.run(base, seed).trace.all_records()) == strip(harness.run(p0, seed).trace.all_records())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_every_send_is_accounted_for(seed):
    recs = harness.run(scenario("jam_p03"), seed).trace.all_records()
    summary = recs[-1]
    sent = {r["env"] for r in recs if r["kind"] in ("Send", "Injected")}
    settled = {r["env"] for r in recs if r["kind"] in ("Delivered", "Dropped") and not r.get("duplicate")}
    assert sent == settled | set(summary["in_flight"])
    assert not settled & set(summary["in_flight"])


def test_trace_requires_finalize_before_write(tmp_path):
    with pytest.raises(RuntimeError):
        Trace().write(tmp_path / "x.jsonl")
