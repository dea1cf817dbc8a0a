"""Subframe clock, seeded random streams, event log and the simulation loop.

Every entity registers with a :class:`Simulation` and exposes per-phase
handlers. Each call to :meth:`Simulation.advance` runs one 1 ms subframe:

    enb -> dl_inject -> uplink -> ul_inject -> observe

``enb`` is the base station, ``dl_inject`` and ``ul_inject`` are the attacker's
downlink/uplink injection slots, ``uplink`` covers UEs and repeaters, and
``observe`` is where sniffers read the air.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

SUBFRAMES_PER_FRAME = 10

PHASES = ("enb", "dl_inject", "uplink", "ul_inject", "observe")

# registry order: role rank first, then entity id
ROLE_RANK = {"enb": 0, "attacker": 1, "ue": 2, "repeater": 3, "sniffer": 4}

EVENT_COLUMNS = ("time_ms", "entity", "event", "rnti", "value_db", "extra")


class GeometryError(ValueError):
    """Raised when two positions coincide or a coordinate is not finite."""


@dataclass(frozen=True, order=True)
class SimTime:
    frame: int
    subframe: int

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"frame must be non-negative, got {self.frame}")
        if not 0 <= self.subframe < SUBFRAMES_PER_FRAME:
            raise ValueError(f"subframe must be in [0, 9], got {self.subframe}")

    @property
    def ms(self) -> int:
        return self.frame * SUBFRAMES_PER_FRAME + self.subframe

    @classmethod
    def from_ms(cls, ms: int) -> "SimTime":
        return cls(*divmod(int(ms), SUBFRAMES_PER_FRAME))

    def next(self) -> "SimTime":
        if self.subframe == SUBFRAMES_PER_FRAME - 1:
            return SimTime(self.frame + 1, 0)
        return SimTime(self.frame, self.subframe + 1)

    def __str__(self):
        return f"{self.frame}.{self.subframe}"


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite position ({self.x}, {self.y})")

    def distance_to(self, other: "Position") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def bearing_to(self, other: "Position") -> float:
        """Bearing in degrees in [0, 360), counter-clockwise from +x."""
        return wrap_deg(math.degrees(math.atan2(other.y - self.y, other.x - self.x)))


def wrap_deg(a: float) -> float:
    """Angle folded into [0, 360); tiny negatives would otherwise round to 360."""
    a = float(a) % 360.0
    return 0.0 if a >= 360.0 else a


@dataclass(frozen=True)
class Placement:
    role: str
    entity_id: str
    position: Position


@dataclass
class SimConfig:
    seed: int
    duration_ms: int
    placements: list[Placement] = field(default_factory=list)
    sched_manip: bool = True
    power_boost: bool = True

    def __post_init__(self):
        if self.duration_ms < 1:
            raise ValueError("duration_ms must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        n_enb = sum(1 for p in self.placements if p.role == "enb")
        if n_enb != 1:
            raise ValueError(f"exactly one eNB per cell required, found {n_enb}")
        ids = [p.entity_id for p in self.placements]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate entity id in placements")


def seeded_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Independent generator for a (seed, label) pair.

    The label is hashed with blake2b rather than ``hash()`` so streams are
    stable across interpreter runs.
    """
    digest = hashlib.blake2b(stream_label.encode(), digest_size=16).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), *words]))


class EventLog:
    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, time_ms: int, entity: str, event: str, rnti=None, value_db=None, extra=""):
        self.rows.append((time_ms, entity, event, rnti, value_db, extra))

    def count(self, event: str, entity: str | None = None) -> int:
        return sum(1 for r in self.rows if r[2] == event and (entity is None or r[1] == entity))

    def select(self, event: str, entity: str | None = None) -> list[tuple]:
        return [r for r in self.rows if r[2] == event and (entity is None or r[1] == entity)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for t, ent, ev, rnti, val, extra in self.rows:
            w.writerow((t, ent, ev, "" if rnti is None else rnti,
                        "" if val is None else f"{val:.2f}", extra))
        return buf.getvalue()


class Air:
    """Transmissions on the air for the current subframe.

    ``prev_uplink`` holds what was sent in the previous subframe; the eNB
    processes it at the start of the current one.
    """

    def __init__(self):
        self.downlink: list = []
        self.uplink: list = []
        self.prev_uplink: list = []

    def rotate(self):
        self.prev_uplink = self.uplink
        self.downlink = []
        self.uplink = []


class Simulation:
    def __init__(self, seed: int, duration_ms: int):
        if duration_ms < 1:
            raise ValueError("duration_ms must be >= 1")
        self.seed = seed
        self.duration_ms = duration_ms
        self.clock = SimTime(0, 0)
        self._now = 0
        self.air = Air()
        self.log = EventLog()
        self._entities: dict[str, object] = {}
        self._handlers: dict[str, list[Callable]] = {p: [] for p in PHASES}

    @property
    def now_ms(self) -> int:
        return self._now

    @property
    def done(self) -> bool:
        return self._now >= self.duration_ms

    def rng(self, label: str) -> np.random.Generator:
        return seeded_rng(self.seed, label)

    def add(self, entity) -> None:
        if entity.entity_id in self._entities:
            raise ValueError(f"duplicate entity id {entity.entity_id!r}")
        if entity.role not in ROLE_RANK:
            raise ValueError(f"unknown role {entity.role!r}")
        self._entities[entity.entity_id] = entity
        self._rebuild()

    def entities(self, role: str | None = None) -> list:
        ordered = sorted(self._entities.values(), key=lambda e: (ROLE_RANK[e.role], e.entity_id))
        return [e for e in ordered if role is None or e.role == role]

    def _rebuild(self):
        for phase in PHASES:
            self._handlers[phase] = [getattr(e, "on_" + phase) for e in self.entities()
                                     if hasattr(e, "on_" + phase)]

    def advance(self) -> SimTime:
        """Run the current subframe's handlers and step the clock by 1 ms."""
        if self.done:
            return self.clock
        self.air.rotate()
        for phase in PHASES:
            for handler in self._handlers[phase]:
                handler(self)
        self.clock = self.clock.next()
        self._now += 1
        return self.clock

    def run(self, until_ms: int | None = None, stop: Callable[["Simulation"], bool] | None = None):
        end = self.duration_ms if until_ms is None else min(until_ms, self.duration_ms)
        while self._now < end:
            self.advance()
            if stop is not None and stop(self):
                break
        return self


def percentile(values: Iterable[float], q: float) -> float:
    """Linear-interpolated percentile; ``inf`` entries sort last."""
    arr = np.asarray(sorted(values), dtype=float)
    if arr.size == 0:
        raise ValueError("percentile of empty sequence")
    pos = (arr.size - 1) * q / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, arr.size - 1)
    frac = pos - lo
    if frac == 0.0 or arr[lo] == arr[hi]:
        return float(arr[lo])
    return float(arr[lo] + (arr[hi] - arr[lo]) * frac)
