"""Overshadowing attacker: RNTI acquisition, scheduling manipulation, power boosting.

The attacker only reads what is on the air (``sim.air``) plus the cell's
public configuration, and only acts by appending transmissions or by
sending messages to the victim's phone number through a network service.
"""

from __future__ import annotations

import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .channel import Transmission
from .codec import (LCID_DATA, BsrCe, Dci0, MacPdu, SchedulingRequest, SchedulingRequestConfig,
                    decode_dci0, encode_dci0, encode_sr)
from .core import SUBFRAMES_PER_FRAME, Position
from .enb import CellConfig, DownlinkSubframe
from .ue import K_GRANT

log = logging.getLogger(__name__)

BURST_SPLIT_MS = 1000
PATTERN_BEARERS = ("SRB", "DRB1")
BEARERS = ("SRB", "DRB1", "DRB2")


class AcquisitionError(RuntimeError):
    pass


class RntiNotFound(AcquisitionError):
    pass


class RntiAmbiguous(AcquisitionError):
    def __init__(self, candidates):
        super().__init__(f"{len(candidates)} RNTIs match the pattern: {sorted(candidates)}")
        self.candidates = sorted(candidates)


class SetupNotObserved(RuntimeError):
    pass


class Inconclusive(RuntimeError):
    pass


@dataclass(frozen=True)
class SilentPattern:
    burst_count: int = 4
    gap_ms: int = 7000
    tolerance_ms: int = 250

    def __post_init__(self):
        if self.burst_count < 2:
            raise ValueError("need at least 2 bursts")
        if self.gap_ms <= 6000:
            raise ValueError("gap must exceed 6 s")
        if not 0 <= self.tolerance_ms < self.gap_ms / 2:
            raise ValueError("tolerance must be below half the gap")

    def send_times(self, start_ms: int) -> list[int]:
        return [start_ms + i * self.gap_ms for i in range(self.burst_count)]


@dataclass(frozen=True)
class DownlinkObservation:
    rnti: int
    bearer: str
    timestamp: int

    def __post_init__(self):
        if self.bearer not in BEARERS:
            raise ValueError(f"unknown bearer {self.bearer!r}")


def burst_starts(times: Iterable[int], split_ms: int = BURST_SPLIT_MS) -> list[int]:
    starts = []
    prev = None
    for t in sorted(times):
        if prev is None or t - prev > split_ms:
            starts.append(t)
        prev = t
    return starts


def matches_pattern(starts: Sequence[int], pattern: SilentPattern) -> bool:
    k = pattern.burst_count
    lo = pattern.gap_ms - pattern.tolerance_ms
    hi = pattern.gap_ms + pattern.tolerance_ms
    run = 1
    for a, b in zip(starts, starts[1:]):
        run = run + 1 if lo <= b - a <= hi else 1
        if run >= k:
            return True
    return False


def acquire_rnti(pattern: SilentPattern, observations: Iterable[DownlinkObservation]) -> int:
    """The single RNTI whose SRB/DRB1 timeline shows the K-burst pattern."""
    per_rnti = defaultdict(list)
    for ob in observations:
        if ob.bearer in PATTERN_BEARERS:
            per_rnti[ob.rnti].append(ob.timestamp)
    hits = [r for r, ts in per_rnti.items() if matches_pattern(burst_starts(ts), pattern)]
    if not hits:
        raise RntiNotFound("no RNTI shows the injected traffic pattern")
    if len(hits) > 1:
        raise RntiAmbiguous(hits)
    return hits[0]


def capture_sr_config(setups: Iterable[tuple[int, int, SchedulingRequestConfig]], rnti: int,
                      since_ms: int = 0) -> SchedulingRequestConfig:
    """Config from the latest observed connection setup ``(ms, rnti, cfg)`` for ``rnti``."""
    seen = [(ms, cfg) for ms, r, cfg in setups if r == rnti and ms >= since_ms]
    if not seen:
        raise SetupNotObserved(f"no connection setup for RNTI {rnti} while monitoring")
    return max(seen, key=lambda x: x[0])[1]


@dataclass
class AttackState:
    target_rnti: int | None = None
    sr_config: SchedulingRequestConfig | None = None
    duty_cycle: float = 0.10
    boost_subframe: int = 9
    ul_power_dbm: float = 30.0
    dl_power_dbm: float = 30.0

    def __post_init__(self):
        if not 0.0 < self.duty_cycle <= 1.0:
            raise ValueError("duty cycle must be in (0, 1]")
        if not 0 <= self.boost_subframe < SUBFRAMES_PER_FRAME:
            raise ValueError("boost subframe must be in [0, 9]")


@dataclass(frozen=True)
class ForgedChannel:
    rnti: int
    sr_config: SchedulingRequestConfig

    def sr_bits(self) -> str:
        return encode_sr(SchedulingRequest(self.rnti, self.sr_config))


def forge_uplink_channel(state: AttackState) -> ForgedChannel:
    if state.target_rnti is None or state.sr_config is None:
        raise ValueError("target RNTI and SR config must be captured before forging")
    return ForgedChannel(state.target_rnti, state.sr_config)


def disambiguate_repeater(candidates: Sequence[float], measure: Callable[[Sequence[float], bool], Sequence[float]],
                          delta_threshold_db: float = 5.0) -> int:
    """Index of the candidate bearing whose power rises when boosting is enabled.

    ``measure(bearings, boost)`` returns the mean received power at each
    bearing with boosting off/on. A repeater re-emits at constant output
    power, so only the true UE direction rises.
    """
    if not candidates:
        raise ValueError("no candidate bearings")
    before = list(measure(candidates, False))
    after = list(measure(candidates, True))
    deltas = [a - b for a, b in zip(after, before)]
    best = max(range(len(deltas)), key=lambda i: deltas[i])
    if not deltas[best] >= delta_threshold_db:
        raise Inconclusive(f"no candidate rose by {delta_threshold_db} dB (max {deltas[best]:.2f})")
    return best


@dataclass
class AttackPlan:
    victim_phone: str
    pattern: SilentPattern = field(default_factory=SilentPattern)
    silent_start_ms: int = 100
    settle_ms: int = 1500
    sched_manip: bool = True
    power_boost: bool = True
    boost_delay_ms: int = 0
    bsr_bytes: int = 200
    window_ms: int = 100
    sr_retry_ms: int = 30


class Attacker:
    """Simulation entity driving the attack phases from air observations only."""

    role = "attacker"

    def __init__(self, entity_id: str, position: Position, cell: CellConfig, plan: AttackPlan,
                 send_message: Callable[[str, str, int], None], state: AttackState | None = None,
                 target_rnti: int | None = None):
        self.entity_id = entity_id
        self.position = position
        self.cell = cell
        self.plan = plan
        self.send_message = send_message
        self.state = state or AttackState()
        self.observations: list[DownlinkObservation] = []
        self.setups: list[tuple[int, int, SchedulingRequestConfig]] = []
        self.phase = "acquire"
        self.phase_start: dict[str, int] = {"acquire": 0}
        self.channel: ForgedChannel | None = None
        self.injected_ul_ms: set[int] = set()
        self.injected_dl_ms: set[int] = set()
        self.victim_sched: set[int] = set()  # PUSCH ms of grants to the target, as decoded
        self.victim_grants = 0
        self.used_grants = 0
        self.boosts = 0
        self.failures: list[str] = []
        self._sent = 0
        self._sr_ms: int | None = None
        self._inject_at: int | None = None
        self._last_dci_ms = -10**9
        self._injected_bsr_ms: int | None = None
        self._window: deque = deque()  # (ms, "grant" | "used")
        if target_rnti is not None:
            # identity already known (unit scenarios that skip acquisition)
            self.state.target_rnti = target_rnti

    # -- monitoring --------------------------------------------------------

    def _monitor(self, sim) -> None:
        now = sim.now_ms
        for tx in sim.air.downlink:
            if tx.source_kind != "enb":
                continue
            sub: DownlinkSubframe = tx.payload
            for msg in sub.messages:
                if msg[0] == "rrc_setup":
                    self.setups.append((now, msg[2], msg[3]))
                elif msg[0] == "dl_data":
                    self.observations.append(DownlinkObservation(msg[1], msg[2], now))
            target = self.state.target_rnti
            if target is None:
                continue
            for bits in sub.dcis:
                if decode_dci0(bits).rnti == target:
                    self._on_victim_dci(now)

    def _on_victim_dci(self, now: int) -> None:
        self.victim_sched.add(now + K_GRANT)
        self.victim_grants += 1
        self._last_dci_ms = now
        self._window.append((now, "grant"))
        if self._sr_ms is not None and now > self._sr_ms and self._inject_at is None:
            if self._duty_allows(now):
                self._inject_at = now + K_GRANT
            self._sr_ms = None

    def _duty_allows(self, now: int) -> bool:
        while self._window and self._window[0][0] <= now - self.plan.window_ms:
            self._window.popleft()
        granted = sum(1 for _, k in self._window if k == "grant")
        used = sum(1 for _, k in self._window if k == "used")
        return used + 1 <= self.state.duty_cycle * granted + 1

    # -- phases --------------------------------------------------------------

    def _enter(self, phase: str, now: int, sim) -> None:
        self.phase = phase
        self.phase_start[phase] = now
        sim.log.add(now, self.entity_id, "phase", self.state.target_rnti, None, phase)

    def _acquisition_step(self, sim) -> None:
        now = sim.now_ms
        times = self.plan.pattern.send_times(self.plan.silent_start_ms)
        while self._sent < len(times) and times[self._sent] <= now:
            self.send_message(self.plan.victim_phone, "SRB", now)
            sim.log.add(now, self.entity_id, "silent_message", None, None, str(self._sent))
            self._sent += 1
        if self._sent < len(times) or now < times[-1] + self.plan.settle_ms:
            return
        try:
            rnti = acquire_rnti(self.plan.pattern, [o for o in self.observations
                                                    if o.timestamp >= self.plan.silent_start_ms])
            self.state.target_rnti = rnti
            self.state.sr_config = capture_sr_config(self.setups, rnti)
            self.channel = forge_uplink_channel(self.state)
        except (AcquisitionError, SetupNotObserved) as exc:
            self.failures.append(str(exc))
            sim.log.add(now, self.entity_id, "acquire_failed", None, None, type(exc).__name__)
            self._enter("failed", now, sim)
            return
        sim.log.add(now, self.entity_id, "rnti_acquired", rnti)
        self._enter("attack", now, sim)

    def start_attack(self, rnti: int, sr_config: SchedulingRequestConfig, at: int, sim) -> None:
        """Skip acquisition (identity and config obtained out of band)."""
        self.state.target_rnti = rnti
        self.state.sr_config = sr_config
        self.channel = forge_uplink_channel(self.state)
        self._enter("attack", at, sim)

    def on_dl_inject(self, sim) -> None:
        self._monitor(sim)
        if self.phase == "acquire":
            self._acquisition_step(sim)
        elif self.phase == "attack" and self.plan.power_boost:
            if sim.now_ms - self.phase_start["attack"] >= self.plan.boost_delay_ms:
                self.power_boost_step(sim)

    def on_ul_inject(self, sim) -> None:
        if self.phase == "attack" and self.plan.sched_manip:
            self.scheduling_manipulation_step(sim)

    def power_boost_step(self, sim) -> Transmission | None:
        now = sim.now_ms
        if now % SUBFRAMES_PER_FRAME != self.state.boost_subframe:
            return None
        dci = Dci0(self.state.target_rnti, rb_start=0, rb_len=1, tpc_command=3)
        tx = Transmission(self.entity_id, self.position, self.state.dl_power_dbm,
                          DownlinkSubframe(dcis=[encode_dci0(dci)]), "downlink", "PDCCH", now,
                          source_kind="attacker")
        sim.air.downlink.append(tx)
        self.injected_dl_ms.add(now)
        self.victim_sched.add(now + K_GRANT)
        self.boosts += 1
        sim.log.add(now, self.entity_id, "boost", dci.rnti, 3.0)
        return tx

    def scheduling_manipulation_step(self, sim) -> list[Transmission]:
        now = sim.now_ms
        ch = self.channel
        out = []
        if self._inject_at == now:
            pdu = MacPdu(ch.rnti, BsrCe(LCID_DATA, self.plan.bsr_bytes), "data", 4, sdu=b"\x00" * 4)
            out.append(Transmission(self.entity_id, self.position, self.state.ul_power_dbm, pdu,
                                    "uplink", "PUSCH", now, source_kind="attacker"))
            self.injected_ul_ms.add(now)
            self.used_grants += 1
            self._window.append((now, "used"))
            self._inject_at = None
            self._injected_bsr_ms = now
            sim.log.add(now, self.entity_id, "fake_bsr", ch.rnti, None, str(self.plan.bsr_bytes))
        elif self._injected_bsr_ms is not None and now == self._injected_bsr_ms + 3:
            # grants for the forged report should have started by now
            if self._last_dci_ms <= self._injected_bsr_ms:
                sim.log.add(now, self.entity_id, "capture_lost", ch.rnti)
            self._injected_bsr_ms = None

        if self._sr_ms is not None and now - self._sr_ms > self.plan.sr_retry_ms:
            self._sr_ms = None  # unanswered; retry
        drained = now - self._last_dci_ms > 1 and self._injected_bsr_ms is None
        if (self._sr_ms is None and self._inject_at is None and drained
                and ch.sr_config.is_opportunity(now)):
            out.append(Transmission(self.entity_id, self.position, self.state.ul_power_dbm,
                                    ("sr", ch.sr_bits()), "uplink", "PUCCH", now, source_kind="attacker"))
            self._sr_ms = now
            sim.log.add(now, self.entity_id, "fake_sr", ch.rnti)
        sim.air.uplink.extend(out)
        return out
