"""eNB MAC/RRC: RNTI lifecycle, SR/BSR-driven grants and the closed-loop TPC."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, Transmission, mean_received_power, power_sum_dbm
from .codec import (SR_PERIODICITIES, Dci0, MacPdu, SchedulingRequest, SchedulingRequestConfig,
                    decode_sr, encode_dci0)
from .core import Position
from .ue import K_GRANT

log = logging.getLogger(__name__)

C_RNTI_MIN = 0x003D
C_RNTI_MAX = 0xFFF3

ANOMALY_WINDOW_MS = 1000
ANOMALY_THRESHOLD = 20   # benign bursts reach ~5/s; forged scheduling runs in the hundreds
FLAG_ZERO_BSR = "zero-bsr-with-repeated-uplink"
FLAG_PADDING = "padding-only-payloads"


class RntiExhausted(RuntimeError):
    pass


@dataclass
class RntiRecord:
    rnti: int
    ue_token: str
    sr_config: SchedulingRequestConfig
    last_activity: int
    state: str = "active"
    pending_grant_bytes: int = 0
    outstanding: dict = field(default_factory=dict)  # PUSCH ms -> granted bytes
    measured_rx_dbm: float | None = None
    measured_at: int = -1
    rx_samples: deque = field(default_factory=lambda: deque(maxlen=32))
    last_tpc_ms: int = -10**9
    connected_at: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=4000))
    flags: set = field(default_factory=set)

    @property
    def active(self) -> bool:
        return self.state == "active"

    def outstanding_bytes(self) -> int:
        return sum(self.outstanding.values()) + self.pending_grant_bytes


@dataclass(frozen=True)
class UplinkGrant:
    rnti: int
    rb_count: int
    grant_bytes: int
    issued_ms: int
    scheduled_ms: int

    def __post_init__(self):
        if self.rb_count < 1:
            raise ValueError("rb_count must be >= 1")
        if self.scheduled_ms <= self.issued_ms:
            raise ValueError("grant must be scheduled after it is issued")


@dataclass(frozen=True)
class TpcPolicy:
    target_rx_power_dbm: float = -90.0
    hysteresis_db: float = 6.0
    interval_ms: int = 10
    enabled: bool = True
    # median over the last few PUSCH receptions, robust to a stray outlier
    measure_window: int = 5

    def __post_init__(self):
        if self.hysteresis_db < 0:
            raise ValueError("hysteresis must be >= 0")
        if not 1 <= self.measure_window <= 32:
            raise ValueError("measure_window must be in 1..32")


def tpc_decision(policy: TpcPolicy, measured_rx_dbm: float) -> int:
    """Bang-bang command with a dead zone; never returns 3."""
    if measured_rx_dbm > policy.target_rx_power_dbm + policy.hysteresis_db:
        return 0
    if measured_rx_dbm < policy.target_rx_power_dbm - policy.hysteresis_db:
        return 2
    return 1


@dataclass
class DownlinkSubframe:
    dcis: list = field(default_factory=list)       # encoded DCI 0 bit strings
    messages: list = field(default_factory=list)   # broadcast/unencrypted signalling


@dataclass(frozen=True)
class CellConfig:
    """Publicly decodable cell parameters (MIB/SIB)."""
    pci: int = 1
    n_rb: int = 100
    rs_power_dbm: float = 15.0
    rb_bytes: int = 100


def detect_anomalies(window, threshold: int = ANOMALY_THRESHOLD,
                     window_ms: int = ANOMALY_WINDOW_MS) -> set[str]:
    """Scan an RNTI's uplink history for scheduling-manipulation symptoms.

    ``window`` is a sequence of ``(ms, kind, pdu)`` with kind ``"sr"`` or
    ``"pdu"``. Flags are raised when ``threshold`` events fall inside any
    ``window_ms`` span:

    - padding PDUs that report an empty buffer;
    - PDUs that arrive after the UE reported an empty buffer without any
      scheduling request in between.
    """
    padding_times = []
    after_zero_times = []
    zero_reported = False
    for ms, kind, pdu in window:
        if kind == "sr":
            zero_reported = False
            continue
        rep = pdu.reported_bytes
        if zero_reported:
            after_zero_times.append(ms)
        if pdu.payload_kind == "padding" and rep == 0:
            padding_times.append(ms)
        if rep is not None:
            zero_reported = rep == 0

    flags = set()
    if _dense(padding_times, threshold, window_ms):
        flags.add(FLAG_PADDING)
    if _dense(after_zero_times, threshold, window_ms):
        flags.add(FLAG_ZERO_BSR)
    return flags


def _dense(times, threshold, window_ms) -> bool:
    for i in range(len(times) - threshold + 1):
        if times[i + threshold - 1] - times[i] < window_ms:
            return True
    return False


class ENodeB:
    role = "enb"

    def __init__(self, entity_id: str, position: Position, channel: ChannelModel,
                 rng: np.random.Generator, cell: CellConfig = CellConfig(),
                 tpc: TpcPolicy = TpcPolicy(), grant_bytes: int = 100, sr_grant_bytes: int = 8,
                 inactivity_timeout_ms: int = 15_000, sr_periodicity_ms: int = 10,
                 n_pucch_resources: int = 2048, rnti_range: tuple[int, int] = (C_RNTI_MIN, C_RNTI_MAX)):
        if sr_periodicity_ms not in SR_PERIODICITIES:
            raise ValueError(f"SR periodicity {sr_periodicity_ms} not allowed")
        self.entity_id = entity_id
        self.position = position
        self.channel = channel
        self.cell = cell
        self.tpc = tpc
        self.grant_bytes = grant_bytes
        self.sr_grant_bytes = sr_grant_bytes
        self.inactivity_timeout_ms = inactivity_timeout_ms
        self.sr_periodicity_ms = sr_periodicity_ms
        self.n_pucch_resources = n_pucch_resources
        self.rnti_range = rnti_range
        self.records: dict[int, RntiRecord] = {}
        self.expired: list[RntiRecord] = []
        self._by_token: dict[str, int] = {}
        self._sr_used: dict[tuple[int, int], int] = {}
        span = rnti_range[1] - rnti_range[0] + 1
        self._next_rnti = rnti_range[0] + int(rng.integers(span))
        self._next_sr = 0
        self.anomalies = 0
        self.dl_queue: list[tuple[int, int, str, str]] = []  # (due ms, seq, token, bearer)
        self._dl_seq = 0
        self._pending_dl: DownlinkSubframe | None = None
        self._ul_events: list = []
        self.grant_log: list[UplinkGrant] = []
        self.flag_log: dict[int, set] = {}

    # -- RRC ---------------------------------------------------------------

    def _alloc_rnti(self) -> int:
        lo, hi = self.rnti_range
        span = hi - lo + 1
        for _ in range(span):
            cand = self._next_rnti
            self._next_rnti = lo + (self._next_rnti - lo + 1) % span
            if cand not in self.records:
                return cand
        raise RntiExhausted("no free C-RNTI")

    def _alloc_sr(self) -> SchedulingRequestConfig:
        period = self.sr_periodicity_ms
        capacity = self.n_pucch_resources * period
        for _ in range(capacity):
            k = self._next_sr
            self._next_sr = (self._next_sr + 1) % capacity
            key = (k // period, k % period)
            if key not in self._sr_used:
                return SchedulingRequestConfig(key[0], period, key[1])
        raise RntiExhausted("PUCCH SR resources exhausted")

    def rrc_connect(self, ue_token: str, at: int) -> tuple[RntiRecord, tuple]:
        if ue_token in self._by_token:
            raise ValueError(f"UE {ue_token} already has an active connection")
        rnti = self._alloc_rnti()
        cfg = self._alloc_sr()
        rec = RntiRecord(rnti, ue_token, cfg, last_activity=at, connected_at=at)
        self.records[rnti] = rec
        self._by_token[ue_token] = rnti
        self._sr_used[(cfg.resource_index, cfg.offset_ms)] = rnti
        setup = ("rrc_setup", ue_token, rnti, cfg)
        return rec, setup

    def expire_idle(self, at: int) -> list[int]:
        gone = [r for r in self.records.values() if at - r.last_activity >= self.inactivity_timeout_ms]
        for rec in gone:
            rec.state = "expired"
            del self.records[rec.rnti]
            self._by_token.pop(rec.ue_token, None)
            self._sr_used.pop((rec.sr_config.resource_index, rec.sr_config.offset_ms), None)
            self.expired.append(rec)
        return [r.rnti for r in gone]

    # -- MAC ---------------------------------------------------------------

    def _rb_count(self, nbytes: int) -> int:
        return max(1, math.ceil(nbytes / self.cell.rb_bytes))

    def on_scheduling_request(self, sr: SchedulingRequest, at: int) -> UplinkGrant | None:
        rec = self.records.get(sr.rnti)
        if rec is None:
            self.anomalies += 1
            log.debug("SR for unknown/expired RNTI %s ignored", sr.rnti)
            return None
        cfg = rec.sr_config
        if (sr.sr_config.resource_index != cfg.resource_index
                or sr.sr_config.offset_ms != cfg.offset_ms
                or sr.sr_config.periodicity_ms != cfg.periodicity_ms):
            log.debug("SR on wrong PUCCH resource for RNTI %s ignored", sr.rnti)
            return None
        rec.last_activity = at
        rec.history.append((at, "sr", None))
        return UplinkGrant(rec.rnti, self._rb_count(self.sr_grant_bytes), self.sr_grant_bytes,
                           at, at + K_GRANT)

    def on_bsr(self, pdu: MacPdu, at: int) -> list[UplinkGrant]:
        rec = self.records.get(pdu.rnti)
        if rec is None:
            return []
        rec.last_activity = at
        reported = pdu.reported_bytes
        if reported:
            short = reported - rec.outstanding_bytes()
            if short > 0:
                rec.pending_grant_bytes += short
        return self._projected_grants(rec, at)

    def _projected_grants(self, rec: RntiRecord, at: int) -> list[UplinkGrant]:
        n = math.ceil(rec.pending_grant_bytes / self.grant_bytes)
        rb = self._rb_count(self.grant_bytes)
        return [UplinkGrant(rec.rnti, rb, self.grant_bytes, at + i, at + i + K_GRANT) for i in range(n)]

    def _tpc_for(self, rec: RntiRecord, at: int) -> int:
        if not self.tpc.enabled or rec.measured_rx_dbm is None:
            return 1
        if at - rec.last_tpc_ms < self.tpc.interval_ms or rec.measured_at <= rec.last_tpc_ms + K_GRANT:
            return 1
        cmd = tpc_decision(self.tpc, rec.measured_rx_dbm)
        if cmd != 1:
            rec.last_tpc_ms = at
        return cmd

    # -- per-subframe handler ------------------------------------------------

    def queue_downlink(self, ue_token: str, bearer: str, due_ms: int) -> None:
        """Network-side delivery of a downlink message (e.g. an SMS) to a UE."""
        self._dl_seq += 1
        self.dl_queue.append((due_ms, self._dl_seq, ue_token, bearer))
        self.dl_queue.sort()

    def on_enb(self, sim) -> None:
        now = sim.now_ms
        sub = DownlinkSubframe()
        dci_now: dict[int, UplinkGrant] = {}

        self._process_uplink(sim.air.prev_uplink, now - 1, now, sub, dci_now, sim)

        for rnti in self.expire_idle(now):
            sub.messages.append(("rrc_release", rnti))
            sim.log.add(now, self.entity_id, "rnti_expired", rnti)

        while self.dl_queue and self.dl_queue[0][0] <= now:
            due, seq, token, bearer = self.dl_queue.pop(0)
            rnti = self._by_token.get(token)
            if rnti is None:
                # paging collapsed into an immediate connection setup
                rec, setup = self.rrc_connect(token, now)
                sub.messages.append(setup)
                sim.log.add(now, self.entity_id, "rrc_setup", rec.rnti, None, "paged")
                self.dl_queue.append((now + 20, seq, token, bearer))
                self.dl_queue.sort()
                continue
            self.records[rnti].last_activity = now
            sub.messages.append(("dl_data", rnti, bearer))
            sim.log.add(now, self.entity_id, "dl_data", rnti, None, bearer)

        for rec in self.records.values():
            # drop grants whose PUSCH never arrived
            for ms in [m for m in rec.outstanding if m < now - 1]:
                del rec.outstanding[ms]
            if rec.rnti in dci_now or rec.pending_grant_bytes <= 0:
                continue
            g = UplinkGrant(rec.rnti, self._rb_count(self.grant_bytes), self.grant_bytes, now, now + K_GRANT)
            rec.pending_grant_bytes = max(0, rec.pending_grant_bytes - self.grant_bytes)
            dci_now[rec.rnti] = g

        for rnti, g in sorted(dci_now.items()):
            rec = self.records[rnti]
            tpc = self._tpc_for(rec, now)
            rec.outstanding[g.scheduled_ms] = g.grant_bytes
            self.grant_log.append(g)
            sub.dcis.append(encode_dci0(Dci0(rnti, rb_start=0, rb_len=g.rb_count, tpc_command=tpc)))
            sim.log.add(now, self.entity_id, "grant", rnti, None, f"sched={g.scheduled_ms};tpc={tpc}")

        if now % 100 == 0:
            self._scan_anomalies(now, sim)

        sim.air.downlink.append(Transmission(self.entity_id, self.position, self.cell.rs_power_dbm, sub,
                                             "downlink", "PDCCH", now, source_kind="enb"))

    def _process_uplink(self, txs, sent_ms, now, sub, dci_now, sim):
        if not txs:
            return
        pusch: dict[int, list[Transmission]] = {}
        for tx in txs:
            if tx.channel == "PUCCH":
                kind = tx.payload[0]
                if kind == "sr":
                    sr = decode_sr(tx.payload[1])
                    if sr.rnti in dci_now:
                        continue
                    g = self.on_scheduling_request(sr, now)
                    if g is not None:
                        dci_now[sr.rnti] = g
                        sim.log.add(now, self.entity_id, "sr_rx", sr.rnti)
                elif kind == "rrc_request":
                    token = tx.payload[1]
                    if token not in self._by_token:
                        rec, setup = self.rrc_connect(token, now)
                        sub.messages.append(setup)
                        sim.log.add(now, self.entity_id, "rrc_setup", rec.rnti)
            else:
                pusch.setdefault(tx.payload.rnti, []).append(tx)

        for rnti, group in sorted(pusch.items()):
            rec = self.records.get(rnti)
            if rec is None or sent_ms not in rec.outstanding:
                continue
            rb = self._rb_count(rec.outstanding.pop(sent_ms))
            winner, rx_dbm = self._capture(group)
            pdu = winner.payload
            rec.rx_samples.append(rx_dbm - 10.0 * math.log10(rb))
            recent = list(rec.rx_samples)[-self.tpc.measure_window:]
            rec.measured_rx_dbm = float(np.median(recent))
            rec.measured_at = sent_ms
            rec.history.append((sent_ms, "pdu", pdu))
            self.on_bsr(pdu, now)
            sim.log.add(now, self.entity_id, "pusch_rx", rnti, rx_dbm,
                        f"{pdu.payload_kind};bsr={pdu.reported_bytes};from={winner.origin_id}")

    def _capture(self, group: list[Transmission]) -> tuple[Transmission, float]:
        # combine copies of the same origin (direct + repeater relays) then
        # apply the capture margin between the two strongest origins
        by_origin: dict[str, list[float]] = {}
        first: dict[str, Transmission] = {}
        for tx in group:
            p = mean_received_power(tx.tx_power_dbm, tx.position, self.position, self.channel)
            by_origin.setdefault(tx.origin_id, []).append(p)
            first.setdefault(tx.origin_id, tx)
        levels = sorted(((power_sum_dbm(v), o) for o, v in by_origin.items()), reverse=True)
        legit = [lv for lv in levels if first[lv[1]].source_kind != "attacker"]
        inj = [lv for lv in levels if first[lv[1]].source_kind == "attacker"]
        if inj and (not legit or inj[0][0] >= legit[0][0] + self.channel.capture_margin_db):
            return first[inj[0][1]], inj[0][0]
        best = legit[0] if legit else levels[0]
        return first[best[1]], best[0]

    def _scan_anomalies(self, now, sim):
        for rec in self.records.values():
            if not rec.history or rec.history[-1][0] < now - 100:
                continue
            window = [h for h in rec.history if h[0] >= now - 2 * ANOMALY_WINDOW_MS]
            flags = detect_anomalies(window)
            new = flags - rec.flags
            for f in sorted(new):
                sim.log.add(now, self.entity_id, "anomaly", rec.rnti, None, f)
            rec.flags |= flags
            self.flag_log.setdefault(rec.rnti, set()).update(flags)
