"""Random scenario generator for gate and confinement fuzzing."""

from __future__ import annotations

import random
from typing import Any

from .scenario import SCENARIO_SCHEMA_VERSION, Scenario, validate

_CORE_TARGETS = ("uaaf", "ufes", "amf", "smf", "ucf")
_JAM_INTERFACES = ("U1", "U3", "U8", "U9")


def _pos(rng: random.Random, zlo: float, zhi: float) -> list[float]:
    return [round(rng.uniform(-500, 1000), 1), round(rng.uniform(-500, 1000), 1), round(rng.uniform(zlo, zhi), 1)]


def random_scenario(rng: random.Random, index: int = 0) -> Scenario:
    """Draw a valid scenario with random layout, provisioning, script and hostile probes."""
    n_uav, n_uavc = rng.randint(1, 3), rng.randint(1, 2)
    horizon = rng.choice((3000, 4500, 6000))
    nodes: list[dict[str, Any]] = []
    world_nodes: dict[str, Any] = {}
    creds, subs, directory, privacy = {}, {}, {}, {}
    records, controllers = [], {}
    for kind, count in (("uav", n_uav), ("uavc", n_uavc)):
        for i in range(1, count + 1):
            nid = f"{kind}-{i}"
            ue = f"imsi-{kind}-{i}"
            caa = f"CAA-{kind}-{i}"
            node = {
                "id": nid,
                "kind": kind,
                "ue_id": ue,
                "gpp3_id": f"3gpp-{nid}",
                "caa_id": caa,
                "creds": f"k-{nid}",
                "uss_hint": "uss-1",
                "served_uss": "uss-1",
            }
            if kind == "uav":
                node["rid_period_ms"] = rng.choice((0, 500, 1000))
            nodes.append(node)
            here = _pos(rng, 20, 150) if kind == "uav" else _pos(rng, 0, 2)
            world_nodes[nid] = {"position": here, "waypoints": [_pos(rng, 20, 150)] if kind == "uav" else [], "speed": rng.choice((0.0, 5.0, 15.0))}
            # a small share of nodes are misprovisioned so denial paths get exercised too
            creds[ue] = node["creds"] if rng.random() < 0.9 else "other-secret"
            subs[ue] = {"aerial_allowed": rng.random() < 0.85, "served_uss": "uss-1"}
            directory[caa] = "uss-1"
            privacy[ue] = "allow" if rng.random() < 0.9 else "deny"
            if rng.random() < 0.9:
                records.append([node["gpp3_id"], caa])
            if kind == "uavc":
                controllers[nid] = f"{nid}.uss-1.example"

    uavs = [n["id"] for n in nodes if n["kind"] == "uav"]
    uavcs = [n["id"] for n in nodes if n["kind"] == "uavc"]
    script: list[dict[str, Any]] = []
    for n in nodes:
        if rng.random() < 0.9:
            script.append({"at": rng.randrange(0, 800), "action": "start_aa", "node": n["id"]})
    for u in uavs:
        if rng.random() < 0.6:
            script.append({"at": rng.randrange(600, 2000), "action": "flight_permission", "node": u})
        if rng.random() < 0.3:
            script.append({"at": rng.randrange(800, 2500), "action": "request_location", "uss": "uss-1", "node": u})
    for u in rng.sample(uavs, k=rng.randint(0, len(uavs))):
        script.append({"at": rng.randrange(300, 2600), "action": "start_c2", "uav": u, "uavc": rng.choice(uavcs)})

    for _ in range(rng.randint(3, 10)):
        src = rng.choice(nodes)
        mtype = rng.choice(("AaRequest", "FlightPermissionRequest", "C2Payload"))
        options = [(t, "U1") for t in _CORE_TARGETS] + [("uss-1", "U9")]
        peers = uavcs if src["kind"] == "uav" else uavs
        options += [(p, iface) for p in peers for iface in ("U3", "U5", "U8")]
        if src["kind"] == "uav":
            options.append(("tpae-1", "U4"))
        dst, iface = rng.choice(options)
        script.append(
            {"at": rng.randrange(0, horizon), "action": "probe", "node": src["id"], "dst": dst, "interface": iface, "message_type": mtype}
        )
    script.sort(key=lambda s: s["at"])

    attackers: list[dict[str, Any]] = []
    if rng.random() < 0.4:
        attackers.append(
            {
                "id": "jam-1",
                "kind": "Jammer",
                "interface": rng.choice(_JAM_INTERFACES),
                "drop_prob": round(rng.uniform(0.0, 0.5), 3),
                "start_ms": 0,
            }
        )
    if rng.random() < 0.3 and not any(a.get("interface") == "U3" for a in attackers):
        attackers.append({"id": "eve-1", "kind": "Eavesdropper", "interface": "U3"})

    doc = {
        "schema_version": SCENARIO_SCHEMA_VERSION,
        "name": f"fuzz-{index}",
        "horizon_ms": horizon,
        "world": {
            "tick_ms": 100,
            "noise_sigma": rng.choice((0.0, 2.0, 5.0)),
            "range_max": rng.choice((500.0, 1000.0, 2000.0)),
            "base_stations": [
                {"id": f"gnb-{i}", "position": _pos(rng, 20, 30), "coverage_radius": rng.choice((800, 1500, 3000))}
                for i in range(1, rng.randint(1, 4) + 1)
            ],
            "nodes": world_nodes,
        },
        "nodes": nodes,
        "provisioning": {
            "credentials": creds,
            "subscriptions": subs,
            "uss_directory": directory,
            "valid_uss": ["uss-1"],
            "privacy": privacy,
        },
        "uss": [{"id": "uss-1", "records": records, "controllers": controllers, "extra_rounds": rng.randint(0, 2)}],
        "tpae": [{"id": "tpae-1", "position": _pos(rng, 0, 5)}],
        "script": script,
        "attackers": attackers,
    }
    return validate(doc)
