"""Deterministic discrete-event scheduler with per-interface channels and taps.

Events are ordered by ``(fire_time, seq)``; ``seq`` is a single counter
incremented at scheduling time, so ties resolve in scheduling order and no
wall clock is ever consulted. All randomness comes from ``Simulator.rng``
(seeded once) or from per-attacker substreams created by the adversary.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional, Protocol

from .messages import USER_PLANE, Envelope, Message
from .model import (
    EntityKind,
    GateVerdict,
    IllegalInterface,
    Interface,
    SkylinkError,
    interface_legal,
)
from .trace import SCHEMA_VERSION, Trace

DEFAULT_LATENCY_MS = 10

# interfaces whose user-plane traffic rides a PDU session
SESSION_CARRIED = frozenset({Interface.U1, Interface.U3, Interface.U4, Interface.U9})


class TapConflict(SkylinkError):
    pass


# -- events -----------------------------------------------------------------

DELIVER = "Deliver"
TIMER = "TimerExpiry"
WORLD_TICK = "WorldTick"


@dataclass(frozen=True)
class Event:
    fire_time: int
    seq: int
    kind: str
    payload: Any = None

    def key(self) -> tuple[int, int]:
        return (self.fire_time, self.seq)


# -- intercept actions ------------------------------------------------------


@dataclass(frozen=True)
class Deliver:
    pass


@dataclass(frozen=True)
class Drop:
    reason: str = "jammed"


@dataclass(frozen=True)
class Delay:
    extra_ms: int


@dataclass(frozen=True)
class Modify:
    message: Message


@dataclass(frozen=True)
class Duplicate:
    pass


@dataclass(frozen=True)
class Inject:
    src: str
    dst: str
    interface: Interface
    message: Message
    nonce: Optional[int] = None
    at: Optional[int] = None


InterceptAction = Deliver | Drop | Delay | Modify | Duplicate | Inject


class Interceptor(Protocol):
    attacker_id: str

    def intercept(self, env: Envelope, sim: "Simulator") -> InterceptAction: ...


@dataclass
class ChannelSpec:
    interface: Interface
    latency_ms: int = DEFAULT_LATENCY_MS
    tap: Optional[Interceptor] = None


@dataclass(frozen=True)
class TapHandle:
    interface: Interface
    attacker_id: str


class Simulator:
    """Single-threaded event loop; one instance per run."""

    def __init__(
        self,
        seed: int = 0,
        *,
        default_latency_ms: int = DEFAULT_LATENCY_MS,
        latency_ms: Optional[dict[str, int]] = None,
        retransmit_ms: int = 200,
        max_retries: int = 5,
    ) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0
        self.retransmit_ms = retransmit_ms
        self.max_retries = max_retries
        self.trace = Trace()
        self.entities: dict[str, Any] = {}
        self.actors: dict[str, Any] = {}
        self.phantoms: dict[str, EntityKind] = {}
        self.channels = {iface: ChannelSpec(iface, default_latency_ms) for iface in Interface}
        for name, ms in (latency_ms or {}).items():
            if ms < 0:
                raise ValueError(f"negative latency for {name}")
            self.channels[Interface(name)].latency_ms = int(ms)
        self.up_gate: Optional[Callable[[Envelope, EntityKind], tuple[GateVerdict, Any]]] = None
        self.world = None
        self.tick_ms = 0
        self._queue: list[tuple[int, int, Event]] = []
        self._event_seq = itertools.count()
        self._env_seq = itertools.count(1)
        self._timers: dict[tuple[str, str], int] = {}
        self._cause: Optional[int] = None
        self._started = False
        self.end_hooks: list[Callable[["Simulator"], None]] = []

    # -- registry -----------------------------------------------------------

    def register(self, entity) -> None:
        if entity.id in self.entities or entity.id in self.actors:
            raise ValueError(f"duplicate entity id {entity.id!r}")
        self.entities[entity.id] = entity

    def register_actor(self, actor, actor_id: Optional[str] = None) -> None:
        """Register a timer-driven participant that is not a network entity."""
        aid = actor_id or actor.attacker_id
        if aid in self.actors or aid in self.entities:
            raise ValueError(f"duplicate actor id {aid!r}")
        self.actors[aid] = actor

    def kind_of(self, entity_id: str) -> EntityKind:
        ent = self.entities.get(entity_id)
        if ent is not None:
            return ent.kind
        try:
            return self.phantoms[entity_id]
        except KeyError:
            raise KeyError(f"unknown entity {entity_id!r}") from None

    def attach_world(self, world, tick_ms: int) -> None:
        if tick_ms <= 0:
            raise ValueError("tick_ms must be positive")
        self.world = world
        self.tick_ms = tick_ms

    def start(self, **header: Any) -> None:
        """Write the RunStart record and arm the first world tick."""
        if self._started:
            return
        self._started = True
        kinds = {eid: e.kind.value for eid, e in self.entities.items()}
        kinds.update({eid: k.value for eid, k in self.phantoms.items()})
        self.trace.append(
            "RunStart",
            0,
            schema_version=SCHEMA_VERSION,
            seed=self.seed,
            entities=dict(sorted(kinds.items())),
            **header,
        )
        if self.world is not None:
            self._push(self.tick_ms, WORLD_TICK, None)

    # -- channel model ------------------------------------------------------

    def attach_tap(self, interface: Interface | str, interceptor: Interceptor) -> TapHandle:
        ch = self.channels[Interface(interface)]
        if ch.tap is not None:
            raise TapConflict(f"{ch.interface.value} already tapped by {ch.tap.attacker_id}")
        ch.tap = interceptor
        return TapHandle(ch.interface, interceptor.attacker_id)

    def detach_tap(self, handle: TapHandle) -> None:
        ch = self.channels[handle.interface]
        if ch.tap is not None and ch.tap.attacker_id == handle.attacker_id:
            ch.tap = None

    def send(
        self,
        src: str,
        dst: str,
        interface: Interface | str,
        message: Message,
        *,
        nonce: Optional[int] = None,
    ) -> Optional[int]:
        """Enqueue ``message``; returns the envelope seq, or None if the session gate blocked it."""
        interface = Interface(interface)
        src_kind, dst_kind = self.kind_of(src), self.kind_of(dst)
        if not interface_legal(src_kind, dst_kind, interface):
            raise IllegalInterface(f"{src}({src_kind.value}) -> {dst}({dst_kind.value}) on {interface.value}")
        session = None
        if (
            message.type in USER_PLANE
            and interface in SESSION_CARRIED
            and src_kind in (EntityKind.UAV, EntityKind.UAVC)
            and self.up_gate is not None
        ):
            verdict, session = self.up_gate(_Probe(src, dst), dst_kind)
            if not verdict.deliver:
                self.trace.append(
                    "Anomaly",
                    self.now,
                    src=src,
                    dst=dst,
                    reason=verdict.reason,
                    interface=interface.value,
                    message_type=message.type,
                    session=session,
                    cause=self._cause,
                )
                return None
        env = Envelope(next(self._env_seq), self.now, src, dst, interface, message, nonce)
        self.trace.append("Send", self.now, cause=self._cause, session=session, **env.summary())
        self._push(self.now + self.channels[interface].latency_ms, DELIVER, (env, False, False))
        return env.seq

    def inject(
        self,
        src: str,
        dst: str,
        interface: Interface | str,
        message: Message,
        *,
        attacker_id: str,
        nonce: Optional[int] = None,
        at: Optional[int] = None,
        note: Optional[str] = None,
    ) -> int:
        """Place an attacker-forged envelope on a channel; it bypasses taps and gates."""
        interface = Interface(interface)
        if not interface_legal(self.kind_of(src), self.kind_of(dst), interface):
            raise IllegalInterface(f"forged {src} -> {dst} on {interface.value}")
        when = self.now if at is None else max(at, self.now)
        env = Envelope(
            next(self._env_seq), when, src, dst, interface, message, nonce, injected=True, attacker_id=attacker_id
        )
        self.trace.append(
            "Injected", self.now, attacker_id=attacker_id, injected=True, note=note, cause=self._cause, **env.summary()
        )
        self._push(when + self.channels[interface].latency_ms, DELIVER, (env, True, False))
        return env.seq

    # -- timers -------------------------------------------------------------

    def set_timer(self, owner: str, timer_id: str, delay_ms: int) -> None:
        if delay_ms < 0:
            raise ValueError("timer delay must be nonnegative")
        seq = self._push(self.now + delay_ms, TIMER, (owner, timer_id))
        self._timers[(owner, timer_id)] = seq

    def set_timer_at(self, owner: str, timer_id: str, at_ms: int) -> None:
        self.set_timer(owner, timer_id, max(0, at_ms - self.now))

    def cancel_timer(self, owner: str, timer_id: str) -> None:
        self._timers.pop((owner, timer_id), None)

    def timer_active(self, owner: str, timer_id: str) -> bool:
        return (owner, timer_id) in self._timers

    # -- loop ---------------------------------------------------------------

    def _push(self, when: int, kind: str, payload: Any) -> int:
        seq = next(self._event_seq)
        heapq.heappush(self._queue, (when, seq, Event(when, seq, kind, payload)))
        return seq

    def in_flight(self) -> list[int]:
        """Envelope seqs scheduled for delivery but not yet delivered."""
        return sorted(ev.payload[0].seq for _, _, ev in self._queue if ev.kind == DELIVER and not ev.payload[2])

    def peek_time(self) -> Optional[int]:
        return self._queue[0][0] if self._queue else None

    def step(self) -> Optional[Event]:
        if not self._queue:
            return None
        when, _, event = heapq.heappop(self._queue)
        self.now = when
        if event.kind == DELIVER:
            self._deliver(event)
        elif event.kind == TIMER:
            self._fire_timer(event)
        else:
            self._cause = None
            self.world.tick(self, self.tick_ms)
            self._push(self.now + self.tick_ms, WORLD_TICK, None)
        self._cause = None
        return event

    def run_until(self, t_max: int) -> Trace:
        self.start()
        while self._queue and self._queue[0][0] <= t_max:
            self.step()
        return self.trace

    def finish(self, t_end: int, **summary: Any) -> dict[str, Any]:
        for hook in self.end_hooks:
            hook(self)
        self.end_hooks.clear()
        return self.trace.finalize(t_end, **summary)

    def _fire_timer(self, event: Event) -> None:
        owner, timer_id = event.payload
        if self._timers.get((owner, timer_id)) != event.seq:
            return  # cancelled or re-armed
        del self._timers[(owner, timer_id)]
        self._cause = None
        target = self.entities.get(owner) or self.actors.get(owner)
        self.trace.append("TimerFired", self.now, src=owner, timer=timer_id)
        target.on_timer(timer_id)

    def _deliver(self, event: Event) -> None:
        env, tapped, duplicate = event.payload
        tap = self.channels[env.interface].tap
        if tap is not None and not tapped:
            action = tap.intercept(env, self)
            aid = tap.attacker_id
            if isinstance(action, Drop):
                self.trace.append(
                    "Dropped", self.now, attacker_id=aid, reason=action.reason, **_brief(env)
                )
                return
            if isinstance(action, Delay):
                self._push(self.now + max(0, int(action.extra_ms)), DELIVER, (env, True, False))
                return
            if isinstance(action, Modify):
                env = replace(env, body=action.message)
                self.trace.append("Modified", self.now, attacker_id=aid, **env.summary())
            elif isinstance(action, Duplicate):
                self._push(self.now, DELIVER, (env, True, True))
            elif isinstance(action, Inject):
                self.inject(
                    action.src,
                    action.dst,
                    action.interface,
                    action.message,
                    attacker_id=aid,
                    nonce=action.nonce,
                    at=action.at,
                )
        self.trace.append(
            "Delivered",
            self.now,
            injected=env.injected or None,
            attacker_id=env.attacker_id,
            duplicate=duplicate or None,
            **env.summary(),
        )
        target = self.entities.get(env.dst)
        if target is None:
            return  # forged destination with no state machine behind it
        self._cause = env.seq
        target.handle(env)


@dataclass(frozen=True)
class _Probe:
    src: str
    dst: str


def _brief(env: Envelope) -> dict[str, Any]:
    return {
        "env": env.seq,
        "src": env.src,
        "dst": env.dst,
        "interface": env.interface.value,
        "message_type": env.body.type,
    }
