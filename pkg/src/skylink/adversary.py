"""Attackers: channel taps and scripted actors that realize the modeled threats.

Every attacker draws from its own RNG stream, seeded from ``(run seed,
attacker id)``, so adding or removing one attacker never shifts the draws
seen by the rest of the run.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Optional

from .engine import Deliver, Drop, Modify, Simulator
from .messages import (
    AaResult,
    C2Payload,
    Envelope,
    PairingAuthorization,
    SecondaryAuthResult,
    c2_tag,
)
from .model import UAS_KINDS, EntityKind, Interface, Position, SkylinkError
from .world import C2Mode


class AttackerSpecError(SkylinkError):
    pass


class Attacker:
    """Base class: owns an id, an RNG substream and an install hook."""

    kind = "Attacker"

    def __init__(self, attacker_id: str) -> None:
        self.attacker_id = attacker_id
        self.rng: Optional[random.Random] = None
        self.sim: Optional[Simulator] = None
        self.log: list[dict[str, Any]] = []

    def install(self, sim: Simulator, world=None) -> None:
        self.sim = sim
        self.world = world
        self.rng = random.Random(f"{sim.seed}:{self.attacker_id}")
        sim.register_actor(self)

    def on_timer(self, timer_id: str) -> None:
        pass

    def record(self, kind: str, **fields: Any) -> None:
        self.sim.trace.append(kind, self.sim.now, src=self.attacker_id, attacker_id=self.attacker_id, **fields)

    def at(self, when_ms: int, timer_id: str) -> None:
        self.sim.set_timer_at(self.attacker_id, timer_id, when_ms)

    def describe(self) -> dict[str, Any]:
        return {"id": self.attacker_id, "kind": self.kind}


def _window_ok(start: int, stop: Optional[int]) -> None:
    if start < 0 or (stop is not None and stop < start):
        raise AttackerSpecError(f"bad attack window [{start}, {stop}]")


class UnauthorizedUav(Attacker):
    """A rogue node with unprovisioned credentials that tries to get in anyway."""

    kind = "UnauthorizedUav"

    def __init__(self, attacker_id: str, node: str, start_ms: int = 0, probe_ms: Optional[int] = None) -> None:
        super().__init__(attacker_id)
        _window_ok(start_ms, None)
        self.node = node
        self.start_ms = start_ms
        self.probe_ms = probe_ms

    def install(self, sim, world=None) -> None:
        super().install(sim, world)
        if self.node not in sim.entities:
            raise AttackerSpecError(f"{self.attacker_id}: rogue node {self.node!r} is not in the scenario")
        self.at(self.start_ms, "start")
        if self.probe_ms is not None:
            self.at(self.probe_ms, "probe")

    def on_timer(self, timer_id: str) -> None:
        rogue = self.sim.entities[self.node]
        if timer_id == "start":
            self.record("StateChange", what="attack_step", payload={"step": "start_aa", "node": self.node})
            rogue.start_aa()
        else:
            rogue.probe("uaaf", Interface.U1, "AaRequest")


class CredentialReplay(Attacker):
    kind = "CredentialReplay"

    def __init__(
        self,
        attacker_id: str,
        interface: str = "U1",
        message_type: str = "AaRequest",
        capture_window_ms: tuple[int, int] = (0, 1000),
        replay_at_ms: int = 1000,
    ) -> None:
        super().__init__(attacker_id)
        a, b = capture_window_ms
        _window_ok(a, b)
        if replay_at_ms < a:
            raise AttackerSpecError("replay must not precede the capture window")
        self.interface = Interface(interface)
        self.message_type = message_type
        self.window = (a, b)
        self.replay_at_ms = replay_at_ms
        self.captured: Optional[Envelope] = None

    def install(self, sim, world=None) -> None:
        super().install(sim, world)
        sim.attach_tap(self.interface, self)
        self.at(self.replay_at_ms, "replay")

    def intercept(self, env: Envelope, sim: Simulator):
        a, b = self.window
        if self.captured is None and a <= sim.now <= b and env.body.type == self.message_type and not env.injected:
            self.captured = env
            self.log.append({"captured": env.seq})
        return Deliver()

    def on_timer(self, timer_id: str) -> None:
        self.replay_attack(self.captured)

    def replay_attack(self, captured: Optional[Envelope]) -> Optional[int]:
        if captured is None:
            self.record("Anomaly", reason="NothingCaptured", payload={"message_type": self.message_type})
            return None
        return self.sim.inject(
            captured.src,
            captured.dst,
            captured.interface,
            captured.body,
            attacker_id=self.attacker_id,
            nonce=captured.nonce,
            note=f"replay of envelope {captured.seq}",
        )


@dataclass
class ForgedMessage:
    at_ms: int
    message: str  # AaResult | SecondaryAuthResult | PairingAuthorization | C2Payload
    target: str  # victim node
    fields: dict = field(default_factory=dict)


class FakeUss(Attacker):
    kind = "FakeUss"

    def __init__(
        self, attacker_id: str, forged_uss_id: str, injections: list[ForgedMessage], stolen_key: bool = False
    ) -> None:
        super().__init__(attacker_id)
        self.forged_uss_id = forged_uss_id
        self.injections = sorted(injections, key=lambda f: f.at_ms)
        self.stolen_key = stolen_key

    def install(self, sim, world=None) -> None:
        if self.forged_uss_id in sim.entities:
            raise AttackerSpecError(f"{self.forged_uss_id} is a genuine entity")
        sim.phantoms[self.forged_uss_id] = EntityKind.USS
        super().install(sim, world)
        for i, f in enumerate(self.injections):
            if f.target not in sim.entities:
                raise AttackerSpecError(f"{self.attacker_id}: unknown victim {f.target!r}")
            self.at(f.at_ms, f"inject:{i}")

    def on_timer(self, timer_id: str) -> None:
        f = self.injections[int(timer_id.split(":")[1])]
        self.fake_uss_inject(f)

    def fake_uss_inject(self, f: ForgedMessage) -> int:
        sim, uss = self.sim, self.forged_uss_id
        corr = f.fields.get("corr", f"{f.target}/UasAa/1")
        ufes = _ufes_of(sim)
        if f.message == "AaResult":
            msg = AaResult(corr=corr, verdict="Success", app_params=f"{uss}:hijack")
            return sim.inject(uss, ufes, Interface.U6, msg, attacker_id=self.attacker_id)
        if f.message == "SecondaryAuthResult":
            msg = SecondaryAuthResult(
                corr=f.fields.get("corr", f"{f.target}/C2Establish/1"),
                verdict="Success",
                gpp3_id=f.fields.get("gpp3_id", ""),
                old_caa_id=f.fields.get("caa_id", ""),
                new_caa_id="CAA-forged",
                token=self.rng.getrandbits(64),
                key_material=self.rng.getrandbits(64),
            )
            return sim.inject(uss, ufes, Interface.U6, msg, attacker_id=self.attacker_id)
        if f.message == "PairingAuthorization":
            msg = PairingAuthorization(
                corr=f.fields.get("corr", f"{f.target}/C2Establish/1"),
                uav=f.target,
                uavc_id=f.fields.get("uavc_id", "uavc-rogue"),
                authorized=True,
                uavc_address="198.51.100.66",
            )
            return sim.inject(uss, ufes, Interface.U6, msg, attacker_id=self.attacker_id)
        if f.message == "C2Payload":
            victim = sim.entities[f.target]
            origin = f.fields.get("origin") or victim.peer or "uavc-1"
            counter = int(f.fields.get("counter", 10_000))
            command = f.fields.get("command", "land-now")
            key = victim.key if self.stolen_key else None
            tag = c2_tag(key, origin, f.target, counter, command)
            msg = C2Payload(corr="", origin=origin, target=f.target, counter=counter, command=command, tag=tag)
            return sim.inject(uss, f.target, Interface.U9, msg, attacker_id=self.attacker_id)
        raise AttackerSpecError(f"cannot forge {f.message}")

    def describe(self) -> dict[str, Any]:
        return {**super().describe(), "forged_uss_id": self.forged_uss_id}


def _ufes_of(sim: Simulator) -> str:
    for eid, ent in sim.entities.items():
        if ent.kind is EntityKind.UFES:
            return eid
    raise AttackerSpecError("no UFES in the scenario")


class LocationSpoofer(Attacker):
    kind = "LocationSpoofer"

    def __init__(self, attacker_id: str, node: str, offset: Position, start_ms: int = 0, stop_ms: Optional[int] = None):
        super().__init__(attacker_id)
        _window_ok(start_ms, stop_ms)
        self.node = node
        self.offset = offset
        self.start_ms = start_ms
        self.stop_ms = stop_ms

    def install(self, sim, world=None) -> None:
        super().install(sim, world)
        if world is None or self.node not in world.state.nodes:
            raise AttackerSpecError(f"{self.attacker_id}: {self.node!r} is not in the world")
        self.at(self.start_ms, "on")
        if self.stop_ms is not None:
            self.at(self.stop_ms, "off")

    def on_timer(self, timer_id: str) -> None:
        offset = self.offset if timer_id == "on" else Position(0.0, 0.0, 0.0)
        self.world.set_spoof(self.node, offset)
        self.record("StateChange", what="spoof", payload={"node": self.node, "offset": list(offset.as_tuple())})


class Jammer(Attacker):
    kind = "Jammer"

    def __init__(
        self,
        attacker_id: str,
        interface: str,
        drop_prob: float,
        start_ms: int = 0,
        stop_ms: Optional[int] = None,
        direction: str = "uplink",
    ) -> None:
        super().__init__(attacker_id)
        if not 0.0 <= drop_prob <= 1.0:
            raise AttackerSpecError("drop_prob must lie in [0, 1]")
        if direction not in ("uplink", "downlink", "both"):
            raise AttackerSpecError(f"unknown jam direction {direction!r}")
        _window_ok(start_ms, stop_ms)
        self.interface = Interface(interface)
        self.drop_prob = drop_prob
        self.start_ms = start_ms
        self.stop_ms = stop_ms
        self.direction = direction

    def install(self, sim, world=None) -> None:
        super().install(sim, world)
        sim.attach_tap(self.interface, self)

    def _affects(self, env: Envelope, sim: Simulator) -> bool:
        if sim.now < self.start_ms or (self.stop_ms is not None and sim.now >= self.stop_ms):
            return False
        if self.direction == "both":
            return True
        side = env.src if self.direction == "uplink" else env.dst
        return sim.kind_of(side) in UAS_KINDS

    def intercept(self, env: Envelope, sim: Simulator):
        return self.jammer_intercept(env, sim)

    def jammer_intercept(self, env: Envelope, sim: Simulator):
        if not self._affects(env, sim):
            return Deliver()
        if self.rng.random() < self.drop_prob:
            return Drop("jammed")
        return Deliver()


class Eavesdropper(Attacker):
    """Observation only: logs what crosses the channel and never alters timing."""

    kind = "Eavesdropper"

    def __init__(self, attacker_id: str, interface: str, message_types: Optional[list[str]] = None) -> None:
        super().__init__(attacker_id)
        self.interface = Interface(interface)
        self.message_types = set(message_types) if message_types else None

    def install(self, sim, world=None) -> None:
        super().install(sim, world)
        sim.attach_tap(self.interface, self)

    def intercept(self, env: Envelope, sim: Simulator):
        if self.message_types is None or env.body.type in self.message_types:
            _overhear(self, env)
        return Deliver()


def _overhear(attacker: Attacker, env: Envelope) -> None:
    body = env.body
    opaque = getattr(body, "tag", None) is not None
    entry = {"env": env.seq, "src": env.src, "dst": env.dst, "message_type": body.type, "opaque": opaque}
    attacker.log.append(entry)
    attacker.record("Anomaly", reason="Intercepted", interface=env.interface.value, payload=entry)


class MitmModifier(Attacker):
    kind = "MitmModifier"

    def __init__(self, attacker_id: str, interface: str, message_type: str, field_name: str, value: Any) -> None:
        super().__init__(attacker_id)
        self.interface = Interface(interface)
        self.message_type = message_type
        self.field_name = field_name
        self.value = value

    def install(self, sim, world=None) -> None:
        super().install(sim, world)
        sim.attach_tap(self.interface, self)

    def intercept(self, env: Envelope, sim: Simulator):
        body = env.body
        if body.type != self.message_type or not hasattr(body, self.field_name):
            return Deliver()
        if getattr(body, self.field_name) == self.value:
            return Deliver()
        self.log.append({"env": env.seq})
        return Modify(body.replace(**{self.field_name: self.value}))


class C2Downgrade(Attacker):
    """Jam the direct C2 link until the pair falls back, then listen on the fallback path."""

    kind = "C2Downgrade"

    def __init__(
        self,
        attacker_id: str,
        uav: str,
        jam_intensity: float = 1.0,
        start_ms: int = 0,
        stop_ms: Optional[int] = None,
    ) -> None:
        super().__init__(attacker_id)
        if not 0.0 <= jam_intensity <= 1.0:
            raise AttackerSpecError("jam_intensity must lie in [0, 1]")
        _window_ok(start_ms, stop_ms)
        self.uav = uav
        self.jam_intensity = jam_intensity
        self.start_ms = start_ms
        self.stop_ms = stop_ms
        self.switched = False
        self.jamming = False

    def install(self, sim, world=None) -> None:
        super().install(sim, world)
        if world is None:
            raise AttackerSpecError("C2Downgrade needs a world")
        for iface in (Interface.U8, Interface.U3, Interface.U9):
            sim.attach_tap(iface, self)
        self.at(self.start_ms, "jam-on")
        if self.stop_ms is not None:
            self.at(self.stop_ms, "jam-off")
        sim.end_hooks.append(self._report)

    def on_timer(self, timer_id: str) -> None:
        self.jamming = timer_id == "jam-on" and self.jam_intensity > 0
        if self.jamming:
            self.world.jam[self.uav] = (self.jam_intensity, self.attacker_id)
        else:
            self.world.jam.pop(self.uav, None)
        self.record("StateChange", what="jam", payload={"uav": self.uav, "intensity": self.jam_intensity if self.jamming else 0.0})

    def _involves(self, env: Envelope) -> bool:
        body = env.body
        return body.type == "C2Payload" and self.uav in (body.origin, body.target)

    def intercept(self, env: Envelope, sim: Simulator):
        return self.downgrade_orchestrate(env, sim)

    def downgrade_orchestrate(self, env: Envelope, sim: Simulator):
        if not self._involves(env):
            return Deliver()
        mode = self.world.mode_of(self.uav)
        if mode is not None and mode is not C2Mode.DIRECT:
            self.switched = True
        if env.interface is Interface.U8:
            if self.jamming and self.rng.random() < self.jam_intensity:
                return Drop("jammed")
            return Deliver()
        if self.switched:
            _overhear(self, env)
        return Deliver()

    def _report(self, sim: Simulator) -> None:
        mode = self.world.mode_of(self.uav)
        if mode is not None and mode is not C2Mode.DIRECT:
            self.switched = True
        if not self.switched:
            self.record("Anomaly", reason="NeverSwitched", payload={"uav": self.uav})


ATTACKER_KINDS = {
    cls.kind: cls
    for cls in (UnauthorizedUav, CredentialReplay, FakeUss, LocationSpoofer, Jammer, Eavesdropper, MitmModifier, C2Downgrade)
}


def build_attacker(spec: dict) -> Attacker:
    """Construct an attacker from its scenario description."""
    spec = dict(spec)
    try:
        kind = spec.pop("kind")
        aid = spec.pop("id")
    except KeyError as exc:
        raise AttackerSpecError(f"attacker spec missing {exc.args[0]!r}") from None
    try:
        if kind == "UnauthorizedUav":
            return UnauthorizedUav(aid, **spec)
        if kind == "CredentialReplay":
            if "capture_window_ms" in spec:
                spec["capture_window_ms"] = tuple(spec["capture_window_ms"])
            return CredentialReplay(aid, **spec)
        if kind == "FakeUss":
            inj = [ForgedMessage(**f) for f in spec.pop("injections", [])]
            return FakeUss(aid, injections=inj, **spec)
        if kind == "LocationSpoofer":
            spec["offset"] = Position.of(spec["offset"])
            return LocationSpoofer(aid, **spec)
        if kind == "Jammer":
            return Jammer(aid, **spec)
        if kind == "Eavesdropper":
            return Eavesdropper(aid, **spec)
        if kind == "MitmModifier":
            spec["field_name"] = spec.pop("field")
            return MitmModifier(aid, **spec)
        if kind == "C2Downgrade":
            return C2Downgrade(aid, **spec)
    except (TypeError, KeyError, ValueError) as exc:
        raise AttackerSpecError(f"attacker {aid!r}: {exc}") from None
    raise AttackerSpecError(f"unknown attacker kind {kind!r}")
