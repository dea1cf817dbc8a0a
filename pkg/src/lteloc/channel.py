"""Propagation, capture resolution, repeater relaying and antenna gain."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import GeometryError, Position

UE_MAX_POWER_DBM = 23.0
DEFAULT_CAPTURE_MARGIN_DB = 3.0

UPLINK_CHANNELS = ("PUCCH", "PUSCH")
DOWNLINK_CHANNELS = ("PDCCH",)

# Measured distance (m), UE Tx power (dBm) and RSRP (dBm) in a commercial cell.
TABLE1_DISTANCE_M = (10.0, 30.0, 50.0, 70.0, 90.0, 110.0)
TABLE1_TX_DBM = (-7.04, 0.49, 5.05, 7.65, 7.2, 7.56)
TABLE1_RSRP_DBM = (-62.37, -73.43, -78.91, -85.36, -86.45, -87.6)

# Reference-signal EPRE assumed for the cell; turns RSRP into path loss.
REFERENCE_SIGNAL_POWER_DBM = 15.0


@dataclass(frozen=True)
class Calibration:
    pl0_db: float
    exponent_n: float
    p0_dbm: float
    alpha: float
    rsrp_residuals_db: tuple[float, ...]
    tx_residuals_db: tuple[float, ...]


def calibrate_table1(d0: float = 1.0, rs_power_dbm: float = REFERENCE_SIGNAL_POWER_DBM) -> Calibration:
    """Least-squares fit of (pl0, n) to the RSRP rows and (p0, alpha) to the Tx rows.

    Path loss for the power fit is taken from the measured RSRP
    (``rs_power - RSRP``); residuals are reported against the fitted model.
    """
    d = np.asarray(TABLE1_DISTANCE_M)
    rsrp = np.asarray(TABLE1_RSRP_DBM)
    tx = np.asarray(TABLE1_TX_DBM)

    a = np.column_stack([np.ones_like(d), -10.0 * np.log10(d / d0)])
    (intercept, n), *_ = np.linalg.lstsq(a, rsrp, rcond=None)
    pl0 = rs_power_dbm - intercept

    measured_pl = rs_power_dbm - rsrp
    b = np.column_stack([np.ones_like(d), measured_pl])
    (p0, alpha), *_ = np.linalg.lstsq(b, tx, rcond=None)

    model_pl = pl0 + 10.0 * n * np.log10(d / d0)
    rsrp_res = (rs_power_dbm - model_pl) - rsrp
    tx_res = np.minimum(UE_MAX_POWER_DBM, p0 + alpha * model_pl) - tx
    return Calibration(float(pl0), float(n), float(p0), float(alpha),
                       tuple(float(r) for r in rsrp_res), tuple(float(r) for r in tx_res))


# Frozen output of calibrate_table1(); tests check these still match the fit.
CALIBRATED_PL0_DB = 51.7596
CALIBRATED_EXPONENT = 2.5314
CALIBRATED_P0_DBM = -51.8014
CALIBRATED_ALPHA = 0.5880


@dataclass(frozen=True)
class ChannelModel:
    pl0_db: float = CALIBRATED_PL0_DB
    d0: float = 1.0
    exponent_n: float = CALIBRATED_EXPONENT
    shadowing_sigma_db: float = 2.0
    noise_floor_dbm: float = -105.0
    capture_margin_db: float = DEFAULT_CAPTURE_MARGIN_DB

    def __post_init__(self):
        if self.exponent_n <= 0:
            raise ValueError("exponent_n must be > 0")
        if self.d0 <= 0:
            raise ValueError("d0 must be > 0")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")


@dataclass(frozen=True)
class Transmission:
    source_id: str
    position: Position
    tx_power_dbm: float
    payload: object
    link: str
    channel: str
    time_ms: int
    source_kind: str = "ue"
    origin_id: str = ""

    def __post_init__(self):
        if self.link not in ("downlink", "uplink"):
            raise ValueError(f"bad link {self.link!r}")
        allowed = UPLINK_CHANNELS if self.link == "uplink" else DOWNLINK_CHANNELS
        if self.channel not in allowed:
            raise ValueError(f"channel {self.channel} inconsistent with {self.link}")
        if self.source_kind == "ue" and self.tx_power_dbm > UE_MAX_POWER_DBM + 1e-9:
            raise ValueError(f"UE tx power {self.tx_power_dbm} dBm exceeds 23 dBm")
        if not self.origin_id:
            object.__setattr__(self, "origin_id", self.source_id)


@dataclass(frozen=True)
class RepeaterModel:
    position: Position
    external_position: Position
    sensitivity_dbm: float = -95.0
    output_power_dbm: float = 17.0


@dataclass(frozen=True)
class AntennaPattern:
    g0_db: float = 10.0
    beamwidth_3db_deg: float = 30.0
    floor_db: float = -20.0

    def __post_init__(self):
        if self.beamwidth_3db_deg <= 0:
            raise ValueError("beamwidth must be > 0")
        if self.floor_db > self.g0_db:
            raise ValueError("floor_db above boresight gain")


OMNI = AntennaPattern(0.0, 1e9, 0.0)


def path_loss(model: ChannelModel, d: float) -> float:
    if not d > 0:
        raise GeometryError(f"path loss needs d > 0, got {d}")
    return model.pl0_db + 10.0 * model.exponent_n * math.log10(d / model.d0)


def mean_received_power(tx_power_dbm: float, tx_pos: Position, rx_pos: Position,
                        model: ChannelModel, rx_gain_db: float = 0.0) -> float:
    """Received power without the shadowing draw."""
    return tx_power_dbm - path_loss(model, tx_pos.distance_to(rx_pos)) + rx_gain_db


def received_power(tx: Transmission, rx_position: Position, rx_gain_db: float,
                   model: ChannelModel, rng: np.random.Generator | None = None) -> float | None:
    """Received power in dBm, or ``None`` when below the noise floor."""
    p = mean_received_power(tx.tx_power_dbm, tx.position, rx_position, model, rx_gain_db)
    if rng is not None and model.shadowing_sigma_db > 0:
        p += rng.normal(0.0, model.shadowing_sigma_db)
    if p < model.noise_floor_dbm:
        return None
    return p


def resolve_capture(legit: Transmission | None, injected: Transmission | None,
                    rx_position: Position, model: ChannelModel) -> Transmission | None:
    """Injected signal is decoded only when at least ``capture_margin_db`` stronger."""
    if injected is None:
        return legit
    if legit is None:
        return injected
    p_legit = mean_received_power(legit.tx_power_dbm, legit.position, rx_position, model)
    p_inj = mean_received_power(injected.tx_power_dbm, injected.position, rx_position, model)
    if p_inj >= p_legit + model.capture_margin_db:
        return injected
    return legit


def power_sum_dbm(levels) -> float:
    lin = sum(10.0 ** (p / 10.0) for p in levels)
    return 10.0 * math.log10(lin) if lin > 0 else -math.inf


def repeater_relay(rep: RepeaterModel, inbound: Transmission, model: ChannelModel) -> Transmission | None:
    """Re-emit ``inbound`` from the external antenna at the fixed output power.

    Output level does not depend on the input level once it clears the
    sensitivity threshold; the relay is zero-delay (same subframe).
    """
    p_in = mean_received_power(inbound.tx_power_dbm, inbound.position, rep.position, model)
    if p_in < rep.sensitivity_dbm:
        return None
    return replace(inbound, source_id=f"relay:{inbound.source_id}", position=rep.external_position,
                   tx_power_dbm=rep.output_power_dbm, source_kind="repeater",
                   origin_id=inbound.origin_id)


def antenna_gain(pattern: AntennaPattern, offset_deg: float) -> float:
    off = abs((offset_deg + 180.0) % 360.0 - 180.0)
    g = pattern.g0_db - 12.0 * (off / pattern.beamwidth_3db_deg) ** 2
    return max(g, pattern.floor_db)


class Repeater:
    """Uplink amplify-and-forward entity; relays UE transmissions in the same subframe."""

    role = "repeater"

    def __init__(self, entity_id: str, model: RepeaterModel, channel: ChannelModel):
        self.entity_id = entity_id
        self.model = model
        self.channel = channel
        self.relayed = 0

    def on_uplink(self, sim) -> None:
        out = []
        for tx in sim.air.uplink:
            if tx.source_kind != "ue":
                continue
            r = repeater_relay(self.model, tx, self.channel)
            if r is not None:
                out.append(r)
        self.relayed += len(out)
        sim.air.uplink.extend(out)
