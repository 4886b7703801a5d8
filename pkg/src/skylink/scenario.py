"""Scenario files: JSON documents describing world, provisioning, script and attackers."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .adversary import AttackerSpecError, build_attacker
from .model import Interface, SkylinkError
from .network.base import Directory
from .world import C2ModeState

SCENARIO_SCHEMA_VERSION = 1

SCRIPT_ACTIONS = {
    "start_aa": ("node",),
    "flight_permission": ("node",),
    "request_location": ("uss",),
    "start_c2": ("uav", "uavc"),
    "toggle_spoof": ("node", "offset"),
    "tpae_override": ("tpae", "uav"),
    "probe": ("node", "dst", "interface", "message_type"),
}

NODE_KINDS = ("uav", "uavc")
PROBE_TYPES = ("AaRequest", "FlightPermissionRequest", "C2Payload")


class ScenarioError(SkylinkError):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: int = 1) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownReference(ScenarioError):
    def __init__(self, ref: str, where: str) -> None:
        super().__init__(f"unknown reference {ref!r} in {where}")
        self.ref = ref


class SchemaVersionMismatch(ScenarioError):
    pass


_DEFAULTS: dict[str, Any] = {
    "world": {"tick_ms": 100, "noise_sigma": 0.0, "range_max": 1000.0, "base_stations": [], "nodes": {}},
    "provisioning": {
        "credentials": {},
        "subscriptions": {},
        "uss_directory": {},
        "valid_uss": [],
        "privacy": {},
        "secondary_auth": {"uas-c2": "required"},
    },
    "uss": [],
    "tpae": [],
    "script": [],
    "attackers": [],
    "thresholds": {
        "location_m": 50.0,
        "c2": {"t_direct": 0.6, "t_assisted": 0.3, "hysteresis": 0.05},
        "retransmit_ms": 200,
        "max_retries": 5,
        "rid_range_m": 1000.0,
        "c2_period_ms": 500,
    },
    "channels": {"default_latency_ms": 10, "latency_ms": {}},
}


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("nodes", "latency_ms"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class Scenario:
    """A validated scenario. ``data`` is the normalized document (defaults filled in)."""

    data: dict

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def horizon_ms(self) -> int:
        return self.data["horizon_ms"]

    def nodes(self, kind: Optional[str] = None) -> list[dict]:
        return [n for n in self.data["nodes"] if kind is None or n["kind"] == kind]

    def node(self, node_id: str) -> dict:
        for n in self.data["nodes"]:
            if n["id"] == node_id:
                return n
        raise UnknownReference(node_id, "nodes")

    def with_changes(self, **patch: Any) -> "Scenario":
        """Copy with top-level sections merged over the current ones, revalidated."""
        return validate(_merge(self.data, patch))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Scenario) and self.data == other.data

    def __hash__(self) -> int:
        return hash(serialize(self))


def serialize(s: Scenario) -> str:
    return json.dumps(s.data, indent=2, sort_keys=True) + "\n"


def parse_scenario(text: str) -> Scenario:
    if not text.strip():
        raise ParseError("empty scenario", 1)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object", 1)
    return validate(doc)


def load_scenario(path: str | Path) -> Scenario:
    """Load from a file path or, failing that, a bundled fixture name."""
    p = Path(path)
    if not p.exists():
        fixture = fixture_path(str(path))
        if fixture is None:
            raise FileNotFoundError(str(path))
        p = fixture
    return parse_scenario(p.read_text(encoding="utf-8"))


def _fixture_dir():
    return resources.files("skylink") / "fixtures"


def list_fixtures() -> list[str]:
    return sorted(f.name[: -len(".json")] for f in _fixture_dir().iterdir() if f.name.endswith(".json"))


def fixture_path(name: str):
    stem = name[:-5] if name.endswith(".json") else name
    candidate = _fixture_dir() / f"{stem}.json"
    return candidate if candidate.is_file() else None


# -- validation ---------------------------------------------------------------


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ScenarioError(msg)


def _position(v, where: str) -> list[float]:
    _need(isinstance(v, (list, tuple)) and len(v) == 3, f"{where}: position must be [x, y, z]")
    try:
        out = [float(c) for c in v]
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: non-numeric coordinate") from None
    _need(all(c == c and abs(c) != float("inf") for c in out), f"{where}: coordinates must be finite")
    return out


def validate(doc: dict) -> Scenario:
    if "schema_version" not in doc:
        raise SchemaVersionMismatch("scenario has no schema_version")
    if doc["schema_version"] != SCENARIO_SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"scenario schema {doc['schema_version']!r}, expected {SCENARIO_SCHEMA_VERSION}")
    d = _merge(_DEFAULTS, doc)
    _need(isinstance(d.get("name"), str) and d["name"], "scenario needs a name")
    _need(isinstance(d.get("horizon_ms"), int) and d["horizon_ms"] > 0, "horizon_ms must be a positive integer")
    _need(isinstance(d.get("nodes"), list), "nodes must be a list")

    ids: dict[str, str] = {}

    def claim(eid: str, kind: str) -> None:
        _need(isinstance(eid, str) and eid != "", f"bad id {eid!r}")
        _need(eid not in ids, f"duplicate id {eid!r}")
        ids[eid] = kind

    for eid in Directory().as_dict().values():
        claim(eid, "core")
    w = d["world"]
    _need(isinstance(w["tick_ms"], int) and w["tick_ms"] > 0, "world.tick_ms must be a positive integer")
    _need(float(w["noise_sigma"]) >= 0, "world.noise_sigma must be >= 0")
    _need(float(w["range_max"]) > 0, "world.range_max must be > 0")
    for bs in w["base_stations"]:
        claim(bs["id"], "ngbs")
        bs["position"] = _position(bs["position"], bs["id"])
        _need(float(bs["coverage_radius"]) > 0, f"{bs['id']}: coverage_radius must be > 0")

    for n in d["nodes"]:
        _need(n.get("kind") in NODE_KINDS, f"node {n.get('id')!r}: kind must be one of {NODE_KINDS}")
        claim(n["id"], n["kind"])
        for key in ("ue_id", "gpp3_id", "caa_id", "creds"):
            _need(isinstance(n.get(key), str), f"node {n['id']}: missing {key}")
        n.setdefault("app_id", f"app-{n['id']}")
        n.setdefault("uss_hint", None)
        n.setdefault("served_uss", None)
        if n["kind"] == "uav":
            n.setdefault("rid_period_ms", 0)
            n.setdefault("dnn_c2", "uas-c2")
    caas = [n["caa_id"] for n in d["nodes"]]
    _need(len(caas) == len(set(caas)), "two nodes share a CAA-level id")

    for u in d["uss"]:
        claim(u["id"], "uss")
        u.setdefault("records", [])
        u.setdefault("controllers", {})
        u.setdefault("extra_rounds", 0)
        _need(isinstance(u["extra_rounds"], int) and u["extra_rounds"] >= 0, f"{u['id']}: extra_rounds must be >= 0")
        u["records"] = [list(r) for r in u["records"]]
    for t in d["tpae"]:
        claim(t["id"], "tpae")
        t["position"] = _position(t.get("position", [0, 0, 0]), t["id"])
        t.setdefault("override_key", None)

    uss_ids = {u["id"] for u in d["uss"]}
    node_ids = {n["id"] for n in d["nodes"]}
    for u in d["uss"]:
        for c in u["controllers"]:
            if ids.get(c) != "uavc":
                raise UnknownReference(c, f"{u['id']}.controllers")

    wn = w["nodes"]
    for nid, m in wn.items():
        if nid not in node_ids:
            raise UnknownReference(nid, "world.nodes")
        m["position"] = _position(m["position"], nid)
        m["waypoints"] = [_position(p, nid) for p in m.get("waypoints", [])]
        m.setdefault("speed", 0.0)
        _need(float(m["speed"]) >= 0, f"{nid}: speed must be >= 0")
    for nid in sorted(node_ids - set(wn)):
        wn[nid] = {"position": [0.0, 0.0, 0.0], "waypoints": [], "speed": 0.0}

    p = d["provisioning"]
    for uss in p["valid_uss"]:
        if uss not in uss_ids:
            raise UnknownReference(uss, "provisioning.valid_uss")
    for caa, uss in p["uss_directory"].items():
        if uss not in uss_ids:
            raise UnknownReference(uss, f"provisioning.uss_directory[{caa}]")
    for ue, sub in p["subscriptions"].items():
        sub.setdefault("served_uss", "")
        sub.setdefault("policy_blob", "")
        _need(isinstance(sub.get("aerial_allowed"), bool), f"subscription {ue}: aerial_allowed must be boolean")
    for n in d["nodes"]:
        for key in ("served_uss", "uss_hint"):
            if n[key] is not None and n[key] not in uss_ids:
                raise UnknownReference(n[key], f"node {n['id']}.{key}")
    for ue, setting in p["privacy"].items():
        _need(setting in ("allow", "deny"), f"privacy for {ue} must be allow or deny")

    th = d["thresholds"]
    _need(float(th["location_m"]) >= 0, "thresholds.location_m must be >= 0")
    try:
        C2ModeState(**th["c2"])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"thresholds.c2: {exc}") from None
    _need(int(th["retransmit_ms"]) > 0 and int(th["max_retries"]) >= 0, "bad retransmission timers")

    ch = d["channels"]
    _need(int(ch["default_latency_ms"]) >= 0, "default latency must be >= 0")
    for iface, ms in ch["latency_ms"].items():
        try:
            Interface(iface)
        except ValueError:
            raise UnknownReference(iface, "channels.latency_ms") from None
        _need(int(ms) >= 0, f"latency for {iface} must be >= 0")

    for i, step in enumerate(d["script"]):
        where = f"script[{i}]"
        action = step.get("action")
        if action not in SCRIPT_ACTIONS:
            raise ScenarioError(f"{where}: unknown action {action!r}")
        _need(isinstance(step.get("at"), int) and step["at"] >= 0, f"{where}: 'at' must be a nonnegative integer")
        for key in SCRIPT_ACTIONS[action]:
            _need(key in step, f"{where}: {action} needs {key!r}")
        for key in ("node", "uav", "uavc", "uss", "tpae", "dst"):
            if key in step and step[key] not in ids:
                raise UnknownReference(step[key], where)
        if action == "start_c2":
            _need(ids[step["uav"]] == "uav" and ids[step["uavc"]] == "uavc", f"{where}: start_c2 pairs a uav with a uavc")
        if action == "request_location":
            _need(("caa_id" in step) != ("node" in step), f"{where}: give exactly one of caa_id or node")
        if action == "toggle_spoof":
            step["offset"] = _position(step["offset"], where)
        if action == "probe":
            _need(step["message_type"] in PROBE_TYPES, f"{where}: cannot probe with {step['message_type']}")
            Interface(step["interface"])

    for a in d["attackers"]:
        for key in ("node", "uav"):
            if key in a and a[key] not in ids:
                raise UnknownReference(a[key], f"attacker {a.get('id')}")
        for f in a.get("injections", []):
            if f.get("target") not in ids:
                raise UnknownReference(str(f.get("target")), f"attacker {a.get('id')}")
        try:
            build_attacker(a)
        except AttackerSpecError as exc:
            raise ScenarioError(str(exc)) from None
    aids = [a["id"] for a in d["attackers"]]
    _need(len(aids) == len(set(aids)), "duplicate attacker id")
    for aid in aids:
        _need(aid not in ids, f"attacker id {aid!r} collides with an entity")
    return Scenario(d)
