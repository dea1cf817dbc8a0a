"""Scenario files: TOML documents validated against a strict, versioned schema.

Example skeleton::

    schema_version = 1
    name = "e2e_lab"
    kind = "localization"

    [enb]
    position = [0.5, 3.5]

    [victim]
    points = [[2.5, 2.0], [7.5, 2.0]]

    [[sniffer]]
    id = "s1"
    position = [7.5, 9.8]

    [attacker]
    position = [4.0, 3.0]

Unknown keys are rejected. Positions are ``[x, y]`` in metres.
"""

from __future__ import annotations

import re
import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .channel import CALIBRATED_ALPHA, CALIBRATED_EXPONENT, CALIBRATED_P0_DBM, CALIBRATED_PL0_DB, TABLE1_DISTANCE_M
from .core import Placement, Position, SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
KINDS = ("localization", "table1", "sched_manip", "boost_race", "repeater", "acquisition_crowd")
BUNDLED = ("table1_power_vs_distance", "shadow_area", "sched_manip_unit", "boost_race",
           "repeater_table5", "e2e_lab", "rnti_acquisition_crowd")

Vec = tuple[float, float]


class ScenarioError(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class WorldCfg(_Strict):
    width_m: float = Field(gt=0)
    height_m: float = Field(gt=0)


class ChannelCfg(_Strict):
    pl0_db: float = CALIBRATED_PL0_DB
    d0: float = Field(1.0, gt=0)
    exponent_n: float = Field(CALIBRATED_EXPONENT, gt=0)
    shadowing_sigma_db: float = Field(2.0, ge=0)
    noise_floor_dbm: float = -105.0
    capture_margin_db: float = Field(3.0, ge=0)


class TpcCfg(_Strict):
    enabled: bool = True
    target_rx_power_dbm: float = -90.0
    hysteresis_db: float = Field(6.0, ge=0)
    interval_ms: int = Field(10, ge=1)


class EnbCfg(_Strict):
    id: str = "enb"
    position: Vec
    rs_power_dbm: float = 15.0
    grant_bytes: int = Field(100, ge=1)
    sr_grant_bytes: int = Field(8, ge=2)
    rb_bytes: int = Field(100, ge=1)
    sr_periodicity_ms: Literal[5, 10, 20, 40, 80] = 10
    inactivity_timeout_ms: int = Field(15_000, ge=1)
    core_delay_ms: tuple[int, int] = (50, 250)
    tpc: TpcCfg = TpcCfg()


class PowerCfg(_Strict):
    p0_dbm: float = CALIBRATED_P0_DBM
    alpha: float = Field(CALIBRATED_ALPHA, ge=0, le=1)


class VictimCfg(_Strict):
    id: str = "victim"
    phone: str = "+15550100"
    points: list[Vec] = Field(min_length=1)
    point_names: Optional[list[str]] = None
    rate_per_s: float = Field(0.0, ge=0)
    mean_bytes: int = Field(200, ge=1)


class UeCfg(_Strict):
    id: str
    position: Vec
    phone: Optional[str] = None
    rate_per_s: float = Field(0.2, ge=0)
    mean_bytes: int = Field(300, ge=1)
    dl_rate_per_s: float = Field(0.05, ge=0)


class BackgroundCfg(_Strict):
    count: int = Field(0, ge=0)
    rate_per_s: float = Field(0.2, ge=0)
    mean_bytes: int = Field(300, ge=1)
    dl_rate_per_s: float = Field(0.05, ge=0)


class SnifferCfg(_Strict):
    id: str
    position: Vec
    g0_db: float = 10.0
    beamwidth_deg: float = Field(30.0, gt=0)
    floor_db: float = -20.0
    step_deg: float = Field(5.0, gt=0)
    start_deg: float = 0.0
    span_deg: float = Field(360.0, gt=0, le=360)
    window: int = Field(20, ge=1)
    dwell_timeout_ms: int = Field(250, ge=1)
    min_snr_db: float = 15.0


class RepeaterCfg(_Strict):
    id: str = "repeater"
    position: Vec
    external_position: Vec
    sensitivity_dbm: float = -95.0
    output_power_dbm: float = 17.0


class PatternCfg(_Strict):
    burst_count: int = Field(4, ge=2)
    gap_ms: int = Field(7000, gt=6000)
    tolerance_ms: int = Field(250, ge=0)


class AttackerCfg(_Strict):
    id: str = "attacker"
    position: Vec
    acquisition: bool = True
    sched_manip: bool = True
    power_boost: bool = True
    duty_cycle: float = Field(0.10, gt=0, le=1)
    boost_subframe: int = Field(9, ge=0, le=9)
    bsr_bytes: int = Field(200, ge=1)
    injection_margin_db: float = 10.0
    pattern: PatternCfg = PatternCfg()


class ScheduleCfg(_Strict):
    """Attack timeline: acquisition, then manipulation/boost, then the sweeps."""
    silent_start_ms: int = Field(100, ge=0)
    acquisition_settle_ms: int = Field(1500, ge=0)
    point_settle_ms: int = Field(600, ge=0)
    sweep_timeout_ms: int = Field(60_000, ge=1)


class SchedManipCfg(_Strict):
    attack_ms: int = Field(60_000, ge=1)
    steps_checked: int = Field(4, ge=1)
    idle_ms: int = Field(20_000, ge=1)


class BoostRaceCfg(_Strict):
    run_ms: int = Field(30_000, ge=1)
    limit_ms: int = Field(120_000, ge=1)
    tolerance_db: float = Field(1.0, gt=0)


class RepeaterTestCfg(_Strict):
    dwell_subframes: int = Field(800, ge=1)
    settle_ms: int = Field(500, ge=0)
    delta_threshold_db: float = 5.0
    max_candidates: int = Field(2, ge=1)


class CrowdCfg(_Strict):
    users: int = Field(862, ge=0)
    trials: int = Field(10, ge=1)
    adversarial_trials: int = Field(100, ge=0)
    session_rate_per_s: float = Field(0.05, ge=0)
    decoys: int = Field(50, ge=0)


class Table1Cfg(_Strict):
    distances_m: list[float] = Field(default_factory=lambda: list(TABLE1_DISTANCE_M))
    measure_ms: int = Field(3000, ge=1)
    rsrp_tolerance_db: float = 2.0
    tx_tolerance_db: float = 3.0


class MetricsCfg(_Strict):
    requested: list[str] = Field(default_factory=lambda: ["success", "dist_err_m", "snr_db"])
    reference_point: int = Field(0, ge=0)
    percentile: float = Field(70.0, ge=0, le=100)


class Scenario(_Strict):
    schema_version: Literal[1]
    name: str
    kind: Literal["localization", "table1", "sched_manip", "boost_race", "repeater", "acquisition_crowd"]
    description: str = ""
    seed: int = Field(1, ge=0, lt=2**64)
    world: Optional[WorldCfg] = None
    channel: ChannelCfg = ChannelCfg()
    enb: EnbCfg
    ue_power: PowerCfg = PowerCfg()
    victim: Optional[VictimCfg] = None
    ues: list[UeCfg] = Field(default_factory=list, alias="ue")
    background: BackgroundCfg = BackgroundCfg()
    sniffers: list[SnifferCfg] = Field(default_factory=list, alias="sniffer")
    repeater: Optional[RepeaterCfg] = None
    attacker: Optional[AttackerCfg] = None
    schedule: ScheduleCfg = ScheduleCfg()
    metrics: MetricsCfg = MetricsCfg()
    sched_manip: SchedManipCfg = SchedManipCfg()
    boost_race: BoostRaceCfg = BoostRaceCfg()
    repeater_test: RepeaterTestCfg = RepeaterTestCfg()
    crowd: CrowdCfg = CrowdCfg()
    table1: Table1Cfg = Table1Cfg()

    @model_validator(mode="after")
    def _check(self):
        ids = [self.enb.id]
        if self.victim:
            ids.append(self.victim.id)
        ids += [u.id for u in self.ues] + [s.id for s in self.sniffers]
        if self.repeater:
            ids.append(self.repeater.id)
        if self.attacker:
            ids.append(self.attacker.id)
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValueError(f"duplicate entity id(s): {', '.join(dup)}")
        needs_victim = self.kind in ("localization", "table1", "sched_manip", "boost_race", "repeater")
        if needs_victim and self.victim is None:
            raise ValueError(f"kind {self.kind!r} needs a [victim] section")
        if self.kind in ("localization", "sched_manip", "boost_race", "repeater") and self.attacker is None:
            raise ValueError(f"kind {self.kind!r} needs an [attacker] section")
        if self.kind in ("localization", "repeater") and not self.sniffers:
            raise ValueError(f"kind {self.kind!r} needs at least one [[sniffer]]")
        if self.kind == "repeater" and self.repeater is None:
            raise ValueError("kind 'repeater' needs a [repeater] section")
        if self.victim and self.victim.point_names and len(self.victim.point_names) != len(self.victim.points):
            raise ValueError("victim.point_names must match victim.points")
        if self.victim and self.metrics.reference_point >= len(self.victim.points):
            raise ValueError("metrics.reference_point out of range")
        if self.world:
            for label, pos in self._positions():
                if not (0 <= pos[0] <= self.world.width_m and 0 <= pos[1] <= self.world.height_m):
                    raise ValueError(f"{label} at {list(pos)} lies outside the world")
        return self

    def _positions(self):
        yield "enb", self.enb.position
        if self.victim:
            for i, p in enumerate(self.victim.points):
                yield f"victim point {i}", p
        for u in self.ues:
            yield u.id, u.position
        for s in self.sniffers:
            yield s.id, s.position
        if self.attacker:
            yield self.attacker.id, self.attacker.position

    def point_name(self, i: int) -> str:
        if self.victim and self.victim.point_names:
            return self.victim.point_names[i]
        return f"p{i + 1}"

    def sim_config(self, seed: int | None = None, duration_ms: int = 1, power_boost: bool | None = None,
                   sched_manip: bool | None = None) -> SimConfig:
        placements = [Placement("enb", self.enb.id, Position(*self.enb.position))]
        if self.victim:
            placements.append(Placement("ue", self.victim.id, Position(*self.victim.points[0])))
        placements += [Placement("ue", u.id, Position(*u.position)) for u in self.ues]
        placements += [Placement("sniffer", s.id, Position(*s.position)) for s in self.sniffers]
        if self.repeater:
            placements.append(Placement("repeater", self.repeater.id, Position(*self.repeater.position)))
        att = self.attacker
        if att:
            placements.append(Placement("attacker", att.id, Position(*att.position)))
        return SimConfig(self.seed if seed is None else seed, duration_ms, placements,
                         sched_manip=(att.sched_manip if att else False) if sched_manip is None else sched_manip,
                         power_boost=(att.power_boost if att else False) if power_boost is None else power_boost)


def _line_of(text: str, loc: tuple) -> int | None:
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    lines = text.splitlines()
    key = keys[-1]
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    sect = re.compile(rf"^\s*\[\[?\s*{re.escape(key)}\s*\]\]?")
    for i, line in enumerate(lines, 1):
        if pat.match(line) or sect.match(line):
            return i
    return None


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"{source}: {exc}"]) from exc
    if data.get("schema_version") not in (None, SCHEMA_VERSION):
        raise ScenarioError([f"{source}: unsupported schema_version {data.get('schema_version')!r}"])
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        diags = []
        for err in exc.errors():
            loc = tuple(err.get("loc", ()))
            where = ".".join(str(x) for x in loc) or "<root>"
            line = _line_of(text, loc)
            at = f":{line}" if line else ""
            diags.append(f"{source}{at}: {where}: {err['msg']}")
        raise ScenarioError(diags) from exc


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("lteloc") / "scenarios" / f"{name}.scn"))


def load_scenario(ref: str) -> Scenario:
    """Load a bundled scenario by name or a ``.scn`` file by path."""
    p = Path(ref)
    if not p.exists():
        if ref in BUNDLED:
            p = bundled_path(ref)
        else:
            raise FileNotFoundError(f"no scenario file or bundled scenario named {ref!r}")
    return parse_scenario(p.read_text(), str(p))


def list_scenarios() -> list[tuple[str, str]]:
    out = []
    for name in BUNDLED:
        s = load_scenario(name)
        out.append((name, s.description))
    return out
