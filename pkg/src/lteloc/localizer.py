"""AoA sweeps on the victim's scheduled uplink, bearing estimation, multiangulation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .channel import AntennaPattern, ChannelModel, Transmission, antenna_gain, mean_received_power
from .core import GeometryError, Position, wrap_deg

QUALITY_ORDER = {"undetectable": 0, "ambiguous": 1, "ok": 2}


class EmptyProfile(ValueError):
    pass


class IllConditioned(ValueError):
    pass


def sweep_angles(step_deg: float = 5.0, start_deg: float = 0.0, span_deg: float = 360.0) -> tuple[float, ...]:
    n = int(round(span_deg / step_deg))
    if span_deg < 360.0:
        n += 1
    return tuple(start_deg + i * step_deg for i in range(n))


@dataclass(frozen=True)
class SnifferConfig:
    entity_id: str
    position: Position
    pattern: AntennaPattern = AntennaPattern()
    angles: tuple[float, ...] = field(default_factory=sweep_angles)
    window: int = 20
    dwell_timeout_ms: int = 200

    def __post_init__(self):
        a = self.angles
        if any(b <= x for x, b in zip(a, a[1:])):
            raise ValueError("sweep angles must be strictly increasing")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class SweepProfile:
    position: Position
    angles: np.ndarray
    power_dbm: np.ndarray          # mean over detected samples, nan if none detected
    detected: np.ndarray           # detected sample count per angle
    samples: np.ndarray            # total sample count per angle
    noise_floor_dbm: float = -105.0

    @property
    def snr_db(self) -> np.ndarray:
        return np.where(np.isnan(self.power_dbm), 0.0, self.power_dbm - self.noise_floor_dbm)

    @property
    def empty(self) -> bool:
        return int(self.samples.sum()) == 0

    def filled(self) -> np.ndarray:
        """Powers with undetected angles set to the noise floor."""
        return np.where(np.isnan(self.power_dbm), self.noise_floor_dbm, self.power_dbm)

    def is_circular(self) -> bool:
        a = self.angles
        if len(a) < 3:
            return False
        step = a[1] - a[0]
        return abs((a[-1] + step) - (a[0] + 360.0)) < 1e-6


@dataclass(frozen=True)
class BearingMeasurement:
    position: Position
    bearing_deg: float | None
    peak_dbm: float | None
    snr_db: float
    quality: str

    def __post_init__(self):
        if self.quality not in QUALITY_ORDER:
            raise ValueError(f"bad quality {self.quality!r}")
        if self.quality == "undetectable" and self.bearing_deg is not None:
            raise ValueError("undetectable measurement carries no bearing")
        if self.bearing_deg is not None and not 0.0 <= self.bearing_deg < 360.0:
            raise ValueError("bearing must be in [0, 360)")


@dataclass(frozen=True)
class LocationEstimate:
    position: Position
    residual_m: float
    bearings: tuple[BearingMeasurement, ...]

    def __post_init__(self):
        if self.residual_m < 0:
            raise ValueError("residual must be >= 0")


def sample_power(sniffer_pos: Position, boresight_deg: float, pattern: AntennaPattern,
                 txs: Iterable[Transmission], rnti: int, model: ChannelModel,
                 rng: np.random.Generator | None) -> float | None:
    """Power received on the target's resource blocks, or None below the noise floor.

    Each copy (direct signal, repeater relay) arrives from its own direction
    and gets its own shadowing draw; copies add in linear power.
    """
    lin = 0.0
    for tx in txs:
        if tx.channel != "PUSCH" or getattr(tx.payload, "rnti", None) != rnti:
            continue
        if tx.position == sniffer_pos:
            continue
        g = antenna_gain(pattern, sniffer_pos.bearing_to(tx.position) - boresight_deg)
        p = mean_received_power(tx.tx_power_dbm, tx.position, sniffer_pos, model, g)
        if rng is not None and model.shadowing_sigma_db > 0:
            p += rng.normal(0.0, model.shadowing_sigma_db)
        lin += 10.0 ** (p / 10.0)
    if lin <= 0.0:
        return None
    p = 10.0 * math.log10(lin)
    return p if p >= model.noise_floor_dbm else None


class _Accumulator:
    def __init__(self, n):
        self.sum_db = np.zeros(n)
        self.detected = np.zeros(n, dtype=int)
        self.samples = np.zeros(n, dtype=int)

    def add(self, i, p):
        self.samples[i] += 1
        if p is not None:
            self.detected[i] += 1
            self.sum_db[i] += p

    def profile(self, cfg: SnifferConfig, model: ChannelModel) -> SweepProfile:
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(self.detected > 0, self.sum_db / np.maximum(self.detected, 1), np.nan)
        return SweepProfile(cfg.position, np.asarray(cfg.angles, dtype=float), mean,
                            self.detected.copy(), self.samples.copy(), model.noise_floor_dbm)


def sweep(sniffer: SnifferConfig, rnti: int, dci_feed: Iterable[int], model: ChannelModel,
          world: Callable[[int], Sequence[Transmission]], rng: np.random.Generator | None = None,
          skip: Iterable[int] = ()) -> SweepProfile:
    """Offline sweep: one angle per ``window`` scheduled victim subframes.

    ``dci_feed`` lists the PUSCH subframes decoded from DCI 0 grants to
    ``rnti``; ``world(ms)`` returns what was on the uplink in that subframe.
    Subframes in ``skip`` (the attacker's own injections) are not sampled.
    """
    acc = _Accumulator(len(sniffer.angles))
    skip = set(skip)
    i = 0
    for ms in sorted(set(dci_feed)):
        if i >= len(sniffer.angles):
            break
        if ms in skip:
            continue
        acc.add(i, sample_power(sniffer.position, sniffer.angles[i], sniffer.pattern, world(ms), rnti, model, rng))
        if acc.samples[i] >= sniffer.window:
            i += 1
    return acc.profile(sniffer, model)


def _ang_dist(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


def local_maxima(p: SweepProfile) -> list[int]:
    v = p.filled()
    n = len(v)
    circ = p.is_circular()
    out = []
    for i in range(n):
        left = v[i - 1] if (i > 0 or circ) else -math.inf
        right = v[(i + 1) % n] if (i < n - 1 or circ) else -math.inf
        if v[i] > p.noise_floor_dbm and v[i] >= left and v[i] > right:
            out.append(i)
    return out


def estimate_bearing(p: SweepProfile, beamwidth_deg: float = 30.0, min_snr_db: float = 15.0,
                     ambiguity_db: float = 3.0) -> BearingMeasurement:
    if p.empty:
        raise EmptyProfile("no victim transmissions during the sweep")
    if np.all(np.isnan(p.power_dbm)):
        return BearingMeasurement(p.position, None, None, 0.0, "undetectable")
    v = p.filled()
    n = len(v)
    i = int(np.argmax(v))
    peak = float(v[i])
    snr = peak - float(np.median(v))
    if peak <= float(np.min(v)):
        # flat: no direction stands out
        return BearingMeasurement(p.position, None, None, 0.0, "undetectable")

    bearing = float(p.angles[i])
    circ = p.is_circular()
    if n >= 3 and (circ or 0 < i < n - 1):
        y0, y1, y2 = v[i - 1], v[i], v[(i + 1) % n]
        denom = y0 - 2.0 * y1 + y2
        if denom < 0:
            step = float(p.angles[1] - p.angles[0])
            bearing += step * 0.5 * (y0 - y2) / denom
    bearing = wrap_deg(bearing)

    quality = "ok"
    for j in local_maxima(p):
        if j != i and v[j] >= peak - ambiguity_db and _ang_dist(p.angles[j], p.angles[i]) > 2.0 * beamwidth_deg:
            quality = "ambiguous"
    if snr < min_snr_db:
        quality = "ambiguous"
    return BearingMeasurement(p.position, bearing, peak, snr, quality)


def _unit(deg: float) -> np.ndarray:
    r = math.radians(deg)
    return np.array([math.cos(r), math.sin(r)])


def _pair(b1: BearingMeasurement, b2: BearingMeasurement, min_angle_deg: float) -> tuple[Position, float]:
    for b in (b1, b2):
        if b.quality != "ok":
            raise ValueError(f"bearing quality is {b.quality}")
    if b1.position == b2.position:
        raise GeometryError("sniffer positions coincide")
    u1, u2 = _unit(b1.bearing_deg), _unit(b2.bearing_deg)
    sep = math.degrees(math.acos(min(1.0, abs(float(u1 @ u2)))))
    if sep < min_angle_deg:
        raise IllConditioned(f"bearings within {sep:.2f} deg of parallel")
    p1 = np.array([b1.position.x, b1.position.y])
    p2 = np.array([b2.position.x, b2.position.y])
    # minimise |p1 + t1 u1 - (p2 + t2 u2)|
    a = np.column_stack([u1, -u2])
    t, *_ = np.linalg.lstsq(a, p2 - p1, rcond=None)
    c1 = p1 + t[0] * u1
    c2 = p2 + t[1] * u2
    mid = (c1 + c2) / 2.0
    return Position(float(mid[0]), float(mid[1])), float(np.linalg.norm(c1 - c2) / 2.0)


def multiangulate(b1: BearingMeasurement, b2: BearingMeasurement, *more: BearingMeasurement,
                  min_angle_deg: float = 5.0) -> LocationEstimate:
    """Closest point of the bearing lines; with 3+ sniffers, average of pairwise fixes."""
    bs = (b1, b2, *more)
    fixes = []
    for x, y in itertools.combinations(bs, 2):
        fixes.append(_pair(x, y, min_angle_deg))
    px = sum(f[0].x for f in fixes) / len(fixes)
    py = sum(f[0].y for f in fixes) / len(fixes)
    resid = sum(f[1] for f in fixes) / len(fixes)
    return LocationEstimate(Position(px, py), resid, bs)


def localization_error(est: LocationEstimate, truth: Position) -> float:
    return est.position.distance_to(truth)


def bearing_error(b: BearingMeasurement, truth: Position) -> float:
    if b.bearing_deg is None:
        return math.inf
    return _ang_dist(b.bearing_deg, b.position.bearing_to(truth))


class Sniffer:
    """Directional sniffer that sweeps while the victim is scheduled.

    ``feed`` is the attacker entity (same team): it exposes the decoded
    victim schedule, the target RNTI and the attacker's own injection times.
    """

    role = "sniffer"

    def __init__(self, cfg: SnifferConfig, model: ChannelModel, feed, rng: np.random.Generator):
        self.cfg = cfg
        self.entity_id = cfg.entity_id
        self.position = cfg.position
        self.model = model
        self.feed = feed
        self.rng = rng
        self.active = False
        self.finished = False
        self._acc: _Accumulator | None = None
        self._angles = cfg.angles
        self._window = cfg.window
        self._timeout = cfg.dwell_timeout_ms
        self._i = 0
        self._angle_start = 0
        self.start_ms = None
        self.end_ms = None
        self.profile: SweepProfile | None = None

    def start(self, at: int, angles: Sequence[float] | None = None, window: int | None = None,
              timeout_ms: int | None = None) -> None:
        self._angles = tuple(angles) if angles is not None else self.cfg.angles
        self._window = window or self.cfg.window
        self._timeout = timeout_ms or self.cfg.dwell_timeout_ms
        self._acc = _Accumulator(len(self._angles))
        self._i = 0
        self._angle_start = at
        self.active = True
        self.finished = False
        self.start_ms = at
        self.profile = None

    def on_observe(self, sim) -> None:
        if not self.active:
            return
        now = sim.now_ms
        rnti = self.feed.state.target_rnti
        if now in self.feed.victim_sched and now not in self.feed.injected_ul_ms:
            p = sample_power(self.position, self._angles[self._i], self.cfg.pattern, sim.air.uplink, rnti,
                             self.model, self.rng)
            self._acc.add(self._i, p)
        if self._acc.samples[self._i] >= self._window or now - self._angle_start >= self._timeout:
            self._i += 1
            self._angle_start = now + 1
            if self._i >= len(self._angles):
                self._finish(now)

    def _finish(self, now: int) -> None:
        self.active = False
        self.finished = True
        self.end_ms = now
        cfg = SnifferConfig(self.cfg.entity_id, self.position, self.cfg.pattern, self._angles, self._window,
                            self.cfg.dwell_timeout_ms)
        self.profile = self._acc.profile(cfg, self.model)
