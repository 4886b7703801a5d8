"""Ground truth: node motion, GNSS self-reports, NG-BS measurements and C2 link quality."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from .model import CellLocation, IncomparableKinds, Location, Position, SkylinkError

ARRIVAL_RADIUS_M = 1.0
ORIGIN = Position(0.0, 0.0, 0.0)


class NoCoverage(SkylinkError):
    pass


@dataclass
class NodeMotion:
    position: Position
    waypoints: list[Position] = field(default_factory=list)
    speed: float = 0.0
    spoof_offset: Position = ORIGIN


@dataclass(frozen=True)
class BaseStation:
    id: str
    position: Position
    coverage_radius: float

    def __post_init__(self):
        if not self.coverage_radius > 0:
            raise ValueError(f"{self.id}: coverage_radius must be positive")


@dataclass
class WorldState:
    nodes: dict[str, NodeMotion]
    base_stations: list[BaseStation]
    noise_sigma: float = 0.0
    tick_ms: int = 100


def world_advance(state: WorldState, dt_ms: int) -> None:
    """Move every node toward its next waypoint by ``speed * dt``."""
    dt = dt_ms / 1000.0
    for motion in state.nodes.values():
        if not motion.waypoints:
            continue
        target = motion.waypoints[0]
        here = motion.position
        dist = here.distance(target)
        if dist <= ARRIVAL_RADIUS_M:
            motion.waypoints.pop(0)
            continue
        step = motion.speed * dt
        if step >= dist:
            motion.position = target
            motion.waypoints.pop(0)
            continue
        f = step / dist
        moved = Position(
            here.x + (target.x - here.x) * f,
            here.y + (target.y - here.y) * f,
            here.z + (target.z - here.z) * f,
        )
        motion.position = moved
        if moved.distance(target) <= ARRIVAL_RADIUS_M:
            motion.waypoints.pop(0)


def gnss_self_report(state: WorldState, node: str) -> Position:
    """What the node believes (and reports) its position is: truth plus any spoof offset."""
    m = state.nodes[node]
    return m.position + m.spoof_offset


def ngbs_measure(
    bs: BaseStation, node_true_pos: Position, sigma: float, rng: random.Random
) -> Optional[Position]:
    """One network-side position observation, or None when the node is out of coverage.

    Noise is zero-mean Gaussian per axis. The spoof offset never enters here.
    """
    if bs.position.distance(node_true_pos) > bs.coverage_radius:
        return None
    if sigma == 0:
        return node_true_pos
    return Position(
        node_true_pos.x + rng.gauss(0.0, sigma),
        node_true_pos.y + rng.gauss(0.0, sigma),
        node_true_pos.z + rng.gauss(0.0, sigma),
    )


def mean_position(measurements: Sequence[Position]) -> Position:
    if not measurements:
        raise NoCoverage("no NG-BS measurement available")
    n = len(measurements)
    return Position(
        math.fsum(m.x for m in measurements) / n,
        math.fsum(m.y for m in measurements) / n,
        math.fsum(m.z for m in measurements) / n,
    )


@dataclass(frozen=True)
class LocationVerdict:
    consistent: bool
    distance: float = 0.0

    @property
    def label(self) -> str:
        return "Consistent" if self.consistent else "Mismatch"


def verify_location(reported: Location, estimate: Location, threshold_m: float) -> LocationVerdict:
    if isinstance(reported, CellLocation) and isinstance(estimate, CellLocation):
        return LocationVerdict(reported.cell_id == estimate.cell_id)
    if isinstance(reported, CellLocation) or isinstance(estimate, CellLocation):
        raise IncomparableKinds("cannot compare an absolute position with a cell location")
    d = reported.distance(estimate)
    return LocationVerdict(d <= threshold_m, d)


# -- C2 mode selection ------------------------------------------------------


class C2Mode(str, Enum):
    DIRECT = "Direct"
    NETWORK_ASSISTED = "NetworkAssisted"
    UTM_NAVIGATED = "UtmNavigated"

    @property
    def capability(self) -> int:
        return _CAPABILITY[self]


_CAPABILITY = {C2Mode.UTM_NAVIGATED: 0, C2Mode.NETWORK_ASSISTED: 1, C2Mode.DIRECT: 2}


@dataclass(frozen=True)
class C2ModeState:
    mode: C2Mode = C2Mode.DIRECT
    quality: float = 1.0
    t_direct: float = 0.6
    t_assisted: float = 0.3
    hysteresis: float = 0.05

    def __post_init__(self):
        if not (1 > self.t_direct > self.t_assisted > 0):
            raise ValueError("need 1 > t_direct > t_assisted > 0")
        if self.hysteresis < 0:
            raise ValueError("hysteresis must be nonnegative")
        if self.t_assisted + self.hysteresis >= self.t_direct - self.hysteresis:
            raise ValueError("hysteresis bands around the two thresholds overlap")


def select_c2_mode(state: C2ModeState, quality: float) -> C2ModeState:
    """Pick the C2 mode for link ``quality`` with a hysteresis band around each threshold.

    Inside a band the current mode is kept if it is one of the two modes the
    band separates; otherwise the nearer of those two is chosen, which keeps
    the map monotone in quality for every starting mode.
    """
    h = state.hysteresis
    td, ta = state.t_direct, state.t_assisted
    cur = state.mode
    if quality > td + h:
        mode = C2Mode.DIRECT
    elif quality > td - h:
        mode = cur if cur is not C2Mode.UTM_NAVIGATED else C2Mode.NETWORK_ASSISTED
    elif quality > ta + h:
        mode = C2Mode.NETWORK_ASSISTED
    elif quality > ta - h:
        mode = cur if cur is not C2Mode.DIRECT else C2Mode.NETWORK_ASSISTED
    else:
        mode = C2Mode.UTM_NAVIGATED
    return replace(state, mode=mode, quality=quality)


def link_quality(uav: Position, uavc: Position, range_max: float, jam_intensity: float = 0.0) -> float:
    base = min(1.0, max(0.0, 1.0 - uav.distance(uavc) / range_max))
    return base * (1.0 - min(1.0, max(0.0, jam_intensity)))


# -- runtime world attached to a simulator ----------------------------------


@dataclass
class C2Link:
    uav: str
    uavc: str
    state: C2ModeState


class World:
    """Owns the ``WorldState`` during a run and reacts to ``WorldTick`` events."""

    def __init__(
        self,
        state: WorldState,
        *,
        range_max: float = 1000.0,
        c2_defaults: Optional[C2ModeState] = None,
    ) -> None:
        self.state = state
        self.range_max = range_max
        self.c2_defaults = c2_defaults or C2ModeState()
        self.links: dict[str, C2Link] = {}
        # uav id -> (intensity, attacker id) on the direct C2 channel
        self.jam: dict[str, tuple[float, str]] = {}

    def truth(self, node: str) -> Position:
        return self.state.nodes[node].position

    def airborne(self, node: str) -> bool:
        return self.state.nodes[node].position.z > 0

    def self_report(self, node: str) -> Position:
        return gnss_self_report(self.state, node)

    def set_spoof(self, node: str, offset: Position) -> None:
        self.state.nodes[node].spoof_offset = offset

    def base_station(self, bs_id: str) -> BaseStation:
        for bs in self.state.base_stations:
            if bs.id == bs_id:
                return bs
        raise KeyError(bs_id)

    def measure(self, bs_id: str, node: str, rng: random.Random) -> Optional[Position]:
        return ngbs_measure(self.base_station(bs_id), self.truth(node), self.state.noise_sigma, rng)

    def quality(self, uav: str, uavc: str) -> float:
        jam = self.jam.get(uav, (0.0, ""))[0]
        return link_quality(self.truth(uav), self.truth(uavc), self.range_max, jam)

    def open_link(self, uav: str, uavc: str) -> C2ModeState:
        start = replace(self.c2_defaults, mode=C2Mode.DIRECT)
        state = select_c2_mode(start, self.quality(uav, uavc))
        self.links[uav] = C2Link(uav, uavc, state)
        return state

    def mode_of(self, uav: str) -> Optional[C2Mode]:
        link = self.links.get(uav)
        return link.state.mode if link else None

    def tick(self, sim, dt_ms: int) -> None:
        world_advance(self.state, dt_ms)
        for uav in sorted(self.links):
            link = self.links[uav]
            q = self.quality(link.uav, link.uavc)
            new = select_c2_mode(link.state, q)
            if new.mode is not link.state.mode:
                jam, attacker = self.jam.get(uav, (0.0, None))
                sim.trace.append(
                    "StateChange",
                    sim.now,
                    src=uav,
                    what="c2_mode",
                    payload={
                        "from": link.state.mode.value,
                        "to": new.mode.value,
                        "quality": round(q, 9),
                        "jam": jam,
                        "peer": link.uavc,
                    },
                    attacker_id=attacker if jam > 0 else None,
                )
            link.state = new
