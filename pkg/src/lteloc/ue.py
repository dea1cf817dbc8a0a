"""Standard-compliant victim/background UE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (REFERENCE_SIGNAL_POWER_DBM, UE_MAX_POWER_DBM, ChannelModel,
                      Transmission, path_loss, resolve_capture)
from .codec import (LCID_DATA, BSR_CE_BYTES, BsrCe, Dci0, MacPdu, SchedulingRequest,
                    SchedulingRequestConfig, decode_dci0, encode_sr)
from .core import Position

K_GRANT = 4
TPC_DELTA_DB = {0: -1.0, 1: 0.0, 2: 1.0, 3: 3.0}
F_FLOOR_DB = -40.0


def tpc_delta(command: int) -> float:
    try:
        return TPC_DELTA_DB[command]
    except KeyError:
        raise ValueError(f"TPC command must be in 0..3, got {command!r}") from None


@dataclass
class PowerControlState:
    p0_dbm: float
    alpha: float
    f_db: float = 0.0
    p_cmax_dbm: float = UE_MAX_POWER_DBM

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")

    def apply_tpc(self, command: int) -> None:
        self.f_db = max(F_FLOOR_DB, self.f_db + tpc_delta(command))


def compute_tx_power(s: PowerControlState, path_loss_db: float, rb_count: int) -> float:
    if rb_count < 1:
        raise ValueError("rb_count must be >= 1")
    p = s.p0_dbm + 10.0 * math.log10(rb_count) + s.alpha * path_loss_db + s.f_db
    return min(s.p_cmax_dbm, p)


@dataclass(frozen=True)
class TrafficProfile:
    rate_per_s: float = 0.0
    mean_bytes: int = 200

    @classmethod
    def idle(cls) -> "TrafficProfile":
        return cls(0.0, 0)


class TrafficSource:
    """Poisson packet arrivals; one instance per UE, fed by its own stream.

    Inter-arrival gaps are drawn lazily so a quiet UE costs nothing per
    subframe. Packet sizes are exponential with the profile's mean.
    """

    def __init__(self, profile: TrafficProfile, rng: np.random.Generator):
        self.profile = profile
        self.rng = rng
        self._next_ms = math.inf
        if profile.rate_per_s > 0:
            self._next_ms = self._gap()

    def _gap(self) -> float:
        return self.rng.exponential(1000.0 / self.profile.rate_per_s)

    def arrivals(self, now_ms: int) -> tuple[int, int]:
        """(packet count, bytes) arriving during subframe ``now_ms``."""
        count = 0
        total = 0
        while self._next_ms < now_ms + 1:
            count += 1
            total += max(1, int(round(self.rng.exponential(self.profile.mean_bytes))))
            self._next_ms += self._gap()
        return count, total


def app_traffic(source: TrafficSource, now_ms: int) -> int:
    return source.arrivals(now_ms)[1]


@dataclass
class UeState:
    ue_id: str
    position: Position
    power: PowerControlState
    rnti: int | None = None
    sr_config: SchedulingRequestConfig | None = None
    buffer_bytes: int = 0
    scheduled: dict = field(default_factory=dict)  # pusch ms -> (grant bytes, rb count)
    sr_outstanding_ms: int | None = None


def on_dci0(ue: UeState, d: Dci0, now_ms: int, grant_bytes: int) -> bool:
    """Apply a decoded DCI 0. Returns True when it was addressed to this UE."""
    if ue.rnti is None or d.rnti != ue.rnti:
        return False
    ue.power.apply_tpc(d.tpc_command)
    ue.scheduled[now_ms + K_GRANT] = (grant_bytes, d.rb_len)
    ue.sr_outstanding_ms = None
    return True


def build_pusch_pdu(ue: UeState, grant_bytes: int) -> MacPdu:
    """MAC PDU for a granted subframe; an empty buffer still transmits padding."""
    if ue.buffer_bytes <= 0:
        return MacPdu(ue.rnti, BsrCe(LCID_DATA, 0), "padding", grant_bytes)
    room = max(1, grant_bytes - BSR_CE_BYTES)
    sent = min(ue.buffer_bytes, room)
    ue.buffer_bytes -= sent
    return MacPdu(ue.rnti, BsrCe(LCID_DATA, ue.buffer_bytes), "data", sent, sdu=b"\x01" * sent)


def maybe_send_sr(ue: UeState, at_ms: int) -> SchedulingRequest | None:
    if ue.rnti is None or ue.sr_config is None or ue.buffer_bytes <= 0:
        return None
    if ue.scheduled or ue.sr_outstanding_ms is not None:
        return None
    if not ue.sr_config.is_opportunity(at_ms):
        return None
    return SchedulingRequest(ue.rnti, ue.sr_config)


@dataclass
class UeCounters:
    grants: int = 0
    pusch: int = 0
    padding: int = 0
    zero_bsr_padding: int = 0
    fake_grants: int = 0
    rntis: list = field(default_factory=list)


class UserEquipment:
    """Simulation entity wrapping :class:`UeState`."""

    role = "ue"

    def __init__(self, entity_id: str, position: Position, channel: ChannelModel, enb_position: Position,
                 p0_dbm: float, alpha: float, traffic: TrafficProfile, rng: np.random.Generator,
                 rs_power_dbm: float = REFERENCE_SIGNAL_POWER_DBM, rb_bytes: int = 100):
        self.entity_id = entity_id
        self.state = UeState(entity_id, position, PowerControlState(p0_dbm, alpha))
        self.channel = channel
        self.enb_position = enb_position
        self.traffic = TrafficSource(traffic, rng)
        self.rb_bytes = rb_bytes
        self.counters = UeCounters()
        self.rs_power_dbm = rs_power_dbm
        self.move_to(position)
        self.power_trace: list[tuple[int, float]] = []
        self.wants_connection = False

    @property
    def position(self) -> Position:
        return self.state.position

    def move_to(self, position: Position) -> None:
        self.state.position = position
        # path loss estimated from the serving cell's reference signals
        self.rsrp_dbm = self.rs_power_dbm - path_loss(self.channel, position.distance_to(self.enb_position))
        self.path_loss_db = self.rs_power_dbm - self.rsrp_dbm

    def tx_power(self, rb_count: int = 1) -> float:
        return compute_tx_power(self.state.power, self.path_loss_db, rb_count)

    def on_uplink(self, sim) -> None:
        now = sim.now_ms
        st = self.state
        n, nbytes = self.traffic.arrivals(now)
        if nbytes:
            st.buffer_bytes += nbytes

        self._read_downlink(sim, now)

        if st.rnti is None:
            if st.buffer_bytes > 0 and not self.wants_connection:
                self.wants_connection = True
                sim.air.uplink.append(Transmission(self.entity_id, st.position, self.tx_power(),
                                                   ("rrc_request", self.entity_id), "uplink", "PUCCH", now))
            return

        grant = st.scheduled.pop(now, None)
        if grant is not None:
            grant_bytes, rb = grant
            pdu = build_pusch_pdu(st, grant_bytes)
            p = self.tx_power(rb)
            c = self.counters
            c.pusch += 1
            if pdu.payload_kind == "padding":
                c.padding += 1
                if pdu.bsr is not None and pdu.bsr.buffer_size_bytes == 0:
                    c.zero_bsr_padding += 1
            self.power_trace.append((now, p))
            sim.air.uplink.append(Transmission(self.entity_id, st.position, p, pdu, "uplink", "PUSCH", now))
            sim.log.add(now, self.entity_id, "pusch", st.rnti, p,
                        f"{pdu.payload_kind};bsr={pdu.bsr.buffer_size_bytes if pdu.bsr else ''}")

        sr = maybe_send_sr(st, now)
        if sr is not None:
            st.sr_outstanding_ms = now
            sim.air.uplink.append(Transmission(self.entity_id, st.position, self.tx_power(),
                                               ("sr", encode_sr(sr)), "uplink", "PUCCH", now))
            sim.log.add(now, self.entity_id, "sr", st.rnti)
        elif st.sr_outstanding_ms is not None and now - st.sr_outstanding_ms > 40:
            st.sr_outstanding_ms = None  # SR went unanswered; retry at next opportunity

    def _read_downlink(self, sim, now: int) -> None:
        legit = injected = None
        for tx in sim.air.downlink:
            if tx.source_kind == "enb":
                legit = tx
            else:
                injected = tx
        if injected is None:
            if legit is None:
                return
            sub = legit.payload
            if not sub.messages and (self.state.rnti is None or not sub.dcis):
                return
        winner = resolve_capture(legit, injected, self.state.position, self.channel)
        sub = winner.payload
        st = self.state
        for msg in sub.messages:
            kind = msg[0]
            if kind == "rrc_setup" and msg[1] == self.entity_id and st.rnti is None:
                st.rnti, st.sr_config = msg[2], msg[3]
                self.wants_connection = False
                self.counters.rntis.append(st.rnti)
                st.power.f_db = 0.0
            elif kind == "rrc_release" and msg[1] == st.rnti and st.rnti is not None:
                st.rnti = None
                st.sr_config = None
                st.scheduled.clear()
                st.sr_outstanding_ms = None
        if st.rnti is None:
            return
        for bits in sub.dcis:
            d = decode_dci0(bits)
            if on_dci0(st, d, now, d.rb_len * self.rb_bytes):
                self.counters.grants += 1
                if winner is injected:
                    self.counters.fake_grants += 1
                sim.log.add(now, self.entity_id, "dci0", st.rnti, tpc_delta(d.tpc_command),
                            "injected" if winner is injected else "")
