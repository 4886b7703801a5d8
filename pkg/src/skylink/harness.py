"""Build a simulator from a scenario, run it, and aggregate runs across seeds."""

from __future__ import annotations

import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .adversary import Attacker, build_attacker
from .engine import Simulator
from .model import IdentityBundle, Interface, Position, SubscriptionRecord
from .network import (
    Amf,
    Bsf,
    Directory,
    Gmlc,
    Lmf,
    NgBs,
    Pcf,
    Smf,
    Tpae,
    Uaaf,
    Ucf,
    Udm,
    Ufes,
    Uss,
    Uav,
    UavController,
)
from .network.core import AA_DNN
from .network.ue import LOCATION_DNN
from .scenario import Scenario
from .trace import Trace
from .world import BaseStation, C2ModeState, NodeMotion, World, WorldState


@dataclass
class Run:
    scenario: Scenario
    seed: int
    sim: Simulator
    world: World
    net: Directory
    attackers: list[Attacker] = field(default_factory=list)

    @property
    def trace(self) -> Trace:
        return self.sim.trace

    def entity(self, eid: str):
        return self.sim.entities[eid]


class _Director:
    """Fires the scenario's scripted triggers at their scheduled times."""

    def __init__(self, run: Run, script: list[dict]) -> None:
        self.run = run
        self.script = script

    def on_timer(self, timer_id: str) -> None:
        step = self.script[int(timer_id)]
        sim, world = self.run.sim, self.run.world
        action = step["action"]
        ent = sim.entities
        if action == "start_aa":
            ent[step["node"]].start_aa()
        elif action == "flight_permission":
            ent[step["node"]].flight_permission(tuple(Position.of(p) for p in step.get("trajectory", [])))
        elif action == "request_location":
            uss = ent[step["uss"]]
            caa = step.get("caa_id")
            if caa is None:
                # the USS addresses the node by the CAA-level id it currently holds for it
                gpp3 = ent[step["node"]].bundle.gpp3_uav_id
                caa = uss.authenticated.get(gpp3, ent[step["node"]].bundle.caa_level_uav_id)
            uss.request_location(caa)
        elif action == "start_c2":
            corr = ent[step["uav"]].start_c2(step["uavc"])
            ent[step["uavc"]].join_c2(corr)
        elif action == "toggle_spoof":
            world.set_spoof(step["node"], Position.of(step["offset"]))
            sim.trace.append("StateChange", sim.now, src=step["node"], what="spoof_toggled", payload={"offset": step["offset"]})
        elif action == "tpae_override":
            ent[step["tpae"]].override(step["uav"], step.get("command", "return-home"))
        elif action == "probe":
            ent[step["node"]].probe(step["dst"], Interface(step["interface"]), step["message_type"])


def build(scenario: Scenario, seed: int) -> Run:
    d = scenario.data
    th, ch, w, prov = d["thresholds"], d["channels"], d["world"], d["provisioning"]
    sim = Simulator(
        seed,
        default_latency_ms=int(ch["default_latency_ms"]),
        latency_ms=ch["latency_ms"],
        retransmit_ms=int(th["retransmit_ms"]),
        max_retries=int(th["max_retries"]),
    )
    nodes = {
        nid: NodeMotion(Position.of(m["position"]), [Position.of(p) for p in m["waypoints"]], float(m["speed"]))
        for nid, m in w["nodes"].items()
    }
    for t in d["tpae"]:
        nodes[t["id"]] = NodeMotion(Position.of(t["position"]))
    stations = [BaseStation(b["id"], Position.of(b["position"]), float(b["coverage_radius"])) for b in w["base_stations"]]
    world = World(
        WorldState(nodes, stations, float(w["noise_sigma"]), int(w["tick_ms"])),
        range_max=float(w["range_max"]),
        c2_defaults=C2ModeState(**th["c2"]),
    )
    sim.attach_world(world, int(w["tick_ms"]))
    net = Directory(
        base_stations=tuple(b.id for b in stations),
        ue_nodes={n["ue_id"]: n["id"] for n in d["nodes"]},
    )
    run = Run(scenario, seed, sim, world, net)

    subs = {
        ue: SubscriptionRecord(ue, s["aerial_allowed"], s["served_uss"], s["policy_blob"])
        for ue, s in prov["subscriptions"].items()
    }
    gpp3 = {n["ue_id"]: n["gpp3_id"] for n in d["nodes"]}
    smf_for = {AA_DNN: net.smf, LOCATION_DNN: net.smf}
    smf_for.update({dnn: net.smf for dnn in prov["secondary_auth"]})
    smf = Smf(net.smf, sim, net, secondary_auth=dict(prov["secondary_auth"]))
    core = [
        Amf(net.amf, sim, net, credentials=dict(prov["credentials"]), subscriptions=subs, gpp3_ids=gpp3, smf_for=smf_for),
        smf,
        Pcf(net.pcf, sim, net, subscriptions=subs),
        Bsf(net.bsf, sim, net, bindings={n["id"]: (n["ue_id"], n["gpp3_id"]) for n in d["nodes"]}),
        Udm(net.udm, sim, net, known_ues=set(prov["credentials"]), privacy=dict(prov["privacy"])),
        Gmlc(net.gmlc, sim, net),
        Lmf(net.lmf, sim, net),
        Ufes(net.ufes, sim, net, directory=dict(prov["uss_directory"]), known_uss=[u["id"] for u in d["uss"]]),
        Uaaf(net.uaaf, sim, net, valid_uss=list(prov["valid_uss"])),
        Ucf(net.ucf, sim, net, trackers=tuple(t["id"] for t in d["tpae"])),
    ]
    core += [NgBs(b.id, sim, net, world=world) for b in stations]
    for nf in core:
        sim.register(nf)
    sim.up_gate = smf.gate

    for u in d["uss"]:
        sim.register(
            Uss(
                u["id"],
                sim,
                net,
                records=[tuple(r) for r in u["records"]],
                controllers=dict(u["controllers"]),
                ufes=net.ufes,
                extra_rounds=int(u["extra_rounds"]),
                threshold_m=float(th["location_m"]),
            )
        )
    for t in d["tpae"]:
        sim.register(Tpae(t["id"], sim, net, override_key=t["override_key"]))

    uavs = []
    for n in d["nodes"]:
        bundle = IdentityBundle(n["ue_id"], n["gpp3_id"], n["caa_id"], served_uss=n["served_uss"], app_id=n["app_id"])
        common = dict(bundle=bundle, creds=n["creds"], world=world, uss_hint=n["uss_hint"])
        if n["kind"] == "uav":
            node = Uav(
                n["id"],
                sim,
                net,
                dnn_c2=n["dnn_c2"],
                rid_period_ms=int(n["rid_period_ms"]),
                rid_range_m=float(th["rid_range_m"]),
                c2_period_ms=int(th["c2_period_ms"]),
                **common,
            )
            uavs.append(node)
        else:
            node = UavController(n["id"], sim, net, **common)
        sim.register(node)
    for uav in uavs:
        receivers = [(t["id"], Interface.U7) for t in d["tpae"]]
        receivers += [(o.id, Interface.U2U) for o in uavs if o is not uav]
        uav.rid_receivers = tuple(receivers)
        uav.arm()

    for spec in d["attackers"]:
        attacker = build_attacker(spec)
        attacker.install(sim, world)
        run.attackers.append(attacker)

    director = _Director(run, d["script"])
    sim.register_actor(director, "script")
    for i, step in enumerate(d["script"]):
        sim.set_timer_at("script", str(i), step["at"])

    sim.start(
        scenario=scenario.name,
        horizon_ms=scenario.horizon_ms,
        context={
            "valid_uss": list(prov["valid_uss"]),
            "aerial_allowed": {
                n["id"]: bool(prov["subscriptions"].get(n["ue_id"], {}).get("aerial_allowed", False)) for n in d["nodes"]
            },
            "noise_sigma": float(w["noise_sigma"]),
            "threshold_m": float(th["location_m"]),
            "max_retries": int(th["max_retries"]),
            "attackers": [a.describe() for a in run.attackers],
        },
    )
    return run


def run(scenario: Scenario, seed: int) -> Run:
    """Execute one seeded run to the scenario horizon and seal its trace."""
    r = build(scenario, seed)
    r.sim.run_until(scenario.horizon_ms)
    r.sim.finish(scenario.horizon_ms, in_flight=r.sim.in_flight())
    return r


# -- campaigns ------------------------------------------------------------------


def _run_one(args) -> dict[str, Any]:
    from .report import summarize

    scenario, seed = args
    t0 = time.perf_counter()
    r = run(scenario, seed)
    s = summarize(r.trace.all_records())
    s["seed"] = seed
    s["wall_s"] = time.perf_counter() - t0
    return s


def campaign(scenario: Scenario, seeds: Iterable[int], workers: Optional[int] = None) -> dict[str, Any]:
    """Run every seed and fold the per-run summaries into aggregate statistics."""
    seeds = list(seeds)
    jobs = [(scenario, s) for s in seeds]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (workers * 4))))
    else:
        per_seed = [_run_one(j) for j in jobs]
    return aggregate(scenario.name, per_seed)


def aggregate(name: str, per_seed: list[dict[str, Any]]) -> dict[str, Any]:
    n = len(per_seed)
    out: dict[str, Any] = {"scenario": name, "runs": n, "per_seed": per_seed}
    if n == 0:
        return out
    workflows = sorted({w for s in per_seed for w in s["outcomes"]})
    completion = {}
    for wf in workflows:
        counted = [s["outcomes"][wf] for s in per_seed if wf in s["outcomes"]]
        completion[wf] = sum(c.get("Success", 0) > 0 for c in counted) / n
    out["completion_rate"] = completion
    msgs = [s["aa_messages_to_success"] for s in per_seed if s.get("aa_messages_to_success") is not None]
    times = [s["aa_ms_to_success"] for s in per_seed if s.get("aa_ms_to_success") is not None]
    out["mean_steps_to_success"] = statistics.fmean(msgs) if msgs else None
    out["mean_ms_to_success"] = statistics.fmean(times) if times else None
    reasons = sorted({r for s in per_seed for r in s["anomalies"]})
    out["detection_rate"] = {r: sum(r in s["anomalies"] for s in per_seed) / n for r in reasons}
    errs = [e for s in per_seed for e in s["location_errors"]]
    if errs:
        # per-axis RMS of estimate minus truth
        out["rms_location_error_m"] = math.sqrt(math.fsum(e * e for triple in errs for e in triple) / (3 * len(errs)))
    else:
        out["rms_location_error_m"] = None
    out["location_mismatch_rate"] = sum(s["location_mismatch"] > 0 for s in per_seed) / n
    out["unique_trace_hashes"] = len({s["trace_hash"] for s in per_seed})
    return out
