"""Scenario execution, metrics rows and CSV emission."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacker import (AttackPlan, AttackState, Attacker, AcquisitionError, Inconclusive, SilentPattern,
                       acquire_rnti, capture_sr_config, disambiguate_repeater)
from .channel import (AntennaPattern, ChannelModel, Repeater, RepeaterModel, calibrate_table1,
                      TABLE1_DISTANCE_M, TABLE1_RSRP_DBM, TABLE1_TX_DBM, mean_received_power, path_loss,
                      power_sum_dbm)
from .core import Position, Simulation, percentile, seeded_rng
from .crowd import CrowdConfig, adversarial_trace, crowd_trace
from .enb import CellConfig, ENodeB, TpcPolicy, detect_anomalies
from .localizer import (EmptyProfile, BearingMeasurement, IllConditioned, Sniffer, SnifferConfig, bearing_error,
                        estimate_bearing, local_maxima, localization_error, multiangulate, sweep_angles)
from .scenario import Scenario
from .ue import TrafficProfile, UserEquipment

METRICS_COLUMNS = ("scenario", "seed", "point", "success", "bearing_err_deg_1", "bearing_err_deg_2",
                   "dist_err_m", "max_dbm", "snr_db")
SWEEP_COLUMNS = ("scenario", "seed", "point", "sniffer", "angle_deg", "power_dbm", "detected", "samples")
NAN = float("nan")
MAX_SIM_MS = 3_600_000


class RunError(RuntimeError):
    pass


@dataclass
class RunMetrics:
    scenario: str
    seed: int
    point: str
    success: bool
    bearing_err_deg_1: float = NAN
    bearing_err_deg_2: float = NAN
    dist_err_m: float = NAN
    max_dbm: float = NAN
    snr_db: float = NAN
    phase_ms: dict = field(default_factory=dict)
    flags: tuple = ()

    def __post_init__(self):
        if self.success and self.dist_err_m is not None and math.isinf(self.dist_err_m):
            raise ValueError("successful run must have a finite distance error")

    def row(self) -> tuple:
        def f(x):
            return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"
        return (self.scenario, self.seed, self.point, int(self.success), f(self.bearing_err_deg_1),
                f(self.bearing_err_deg_2), f(self.dist_err_m), f(self.max_dbm), f(self.snr_db))


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    metrics: list[RunMetrics]
    events: dict[str, str] = field(default_factory=dict)   # label -> event CSV text
    tables: dict[str, str] = field(default_factory=dict)   # file stem -> CSV text
    details: dict = field(default_factory=dict)
    summary: str = ""

    @property
    def success_count(self) -> int:
        return sum(m.success for m in self.metrics)

    def metrics_csv(self) -> str:
        return _csv(METRICS_COLUMNS, [m.row() for m in self.metrics])

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{self.scenario.name}_s{self.seed}"
        written = []
        p = out / f"{stem}_metrics.csv"
        p.write_text(self.metrics_csv())
        written.append(p)
        for label, text in self.events.items():
            p = out / f"{stem}_events_{label}.csv"
            p.write_text(text)
            written.append(p)
        for name, text in self.tables.items():
            p = out / f"{stem}_{name}.csv"
            p.write_text(text)
            written.append(p)
        return written


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.4f}" if isinstance(x, float) else str(x)


# -- world construction ----------------------------------------------------

@dataclass
class Cell:
    sim: Simulation
    channel: ChannelModel
    enb: ENodeB
    victim: UserEquipment | None
    attacker: Attacker | None
    sniffers: list[Sniffer]
    repeater: Repeater | None
    ues: list[UserEquipment]
    deliver: object = None


def _antenna(s) -> AntennaPattern:
    return AntennaPattern(s.g0_db, s.beamwidth_deg, s.floor_db)


def injection_powers(scn: Scenario, ch: ChannelModel) -> tuple[float, float]:
    """Downlink/uplink injection power giving the configured margin over the legitimate signal.

    Downlink: over the eNB's signal at every victim point. Uplink: over the
    victim at full power (plus any repeater relay) at the eNB.
    """
    a = scn.attacker
    enb = Position(*scn.enb.position)
    att = Position(*a.position)
    dl = ul = -math.inf
    for pt in scn.victim.points:
        v = Position(*pt)
        legit_dl = mean_received_power(scn.enb.rs_power_dbm, enb, v, ch)
        dl = max(dl, legit_dl + a.injection_margin_db + path_loss(ch, att.distance_to(v)))
        copies = [mean_received_power(23.0, v, enb, ch)]
        if scn.repeater:
            r = scn.repeater
            copies.append(mean_received_power(r.output_power_dbm, Position(*r.external_position), enb, ch))
        ul = max(ul, power_sum_dbm(copies) + a.injection_margin_db + path_loss(ch, att.distance_to(enb)))
    return dl, ul


def build_cell(scn: Scenario, seed: int, power_boost: bool | None = None, sched_manip: bool | None = None,
               duration_ms: int = MAX_SIM_MS, with_attacker: bool = True) -> Cell:
    sim = Simulation(seed, duration_ms)
    c = scn.channel
    ch = ChannelModel(c.pl0_db, c.d0, c.exponent_n, c.shadowing_sigma_db, c.noise_floor_dbm, c.capture_margin_db)
    e = scn.enb
    enb_pos = Position(*e.position)
    t = e.tpc
    enb = ENodeB(e.id, enb_pos, ch, sim.rng("enb"), CellConfig(rs_power_dbm=e.rs_power_dbm, rb_bytes=e.rb_bytes),
                 TpcPolicy(t.target_rx_power_dbm, t.hysteresis_db, t.interval_ms, t.enabled),
                 grant_bytes=e.grant_bytes, sr_grant_bytes=e.sr_grant_bytes,
                 inactivity_timeout_ms=e.inactivity_timeout_ms, sr_periodicity_ms=e.sr_periodicity_ms)
    sim.add(enb)
    pw = scn.ue_power
    core_rng = sim.rng("core")
    phones: dict[str, str] = {}

    def deliver(phone: str, bearer: str, at: int) -> None:
        lo, hi = e.core_delay_ms
        enb.queue_downlink(phones[phone], bearer, at + int(core_rng.integers(lo, hi + 1)))

    victim = None
    if scn.victim:
        v = scn.victim
        victim = UserEquipment(v.id, Position(*v.points[0]), ch, enb_pos, pw.p0_dbm, pw.alpha,
                               TrafficProfile(v.rate_per_s, v.mean_bytes), sim.rng(f"traffic:{v.id}"),
                               e.rs_power_dbm, e.rb_bytes)
        phones[v.phone] = v.id
        sim.add(victim)

    ues = []
    specs = [(u.id, Position(*u.position), u.rate_per_s, u.mean_bytes, u.dl_rate_per_s) for u in scn.ues]
    bg = scn.background
    if bg.count:
        place = sim.rng("placement")
        w = scn.world.width_m if scn.world else 100.0
        h = scn.world.height_m if scn.world else 100.0
        for i in range(bg.count):
            pos = Position(float(place.uniform(0.05 * w, 0.95 * w)), float(place.uniform(0.05 * h, 0.95 * h)))
            specs.append((f"bg{i:03d}", pos, bg.rate_per_s, bg.mean_bytes, bg.dl_rate_per_s))
    dl_rng = sim.rng("downlink-traffic")
    for uid, pos, rate, mean, dl_rate in specs:
        ue = UserEquipment(uid, pos, ch, enb_pos, pw.p0_dbm, pw.alpha, TrafficProfile(rate, mean),
                           sim.rng(f"traffic:{uid}"), e.rs_power_dbm, e.rb_bytes)
        ues.append(ue)
        sim.add(ue)
        if dl_rate > 0:
            # background downlink (messages, app pushes) scheduled up front
            tm = 0.0
            horizon = 600_000
            while True:
                tm += dl_rng.exponential(1000.0 / dl_rate)
                if tm >= horizon:
                    break
                enb.queue_downlink(uid, str(dl_rng.choice(("SRB", "DRB1", "DRB2"))), int(tm))

    repeater = None
    if scn.repeater:
        r = scn.repeater
        repeater = Repeater(r.id, RepeaterModel(Position(*r.position), Position(*r.external_position),
                                                r.sensitivity_dbm, r.output_power_dbm), ch)
        sim.add(repeater)

    attacker = None
    sniffers = []
    if scn.attacker and with_attacker:
        a = scn.attacker
        dl_p, ul_p = injection_powers(scn, ch)
        p = a.pattern
        plan = AttackPlan(scn.victim.phone, SilentPattern(p.burst_count, p.gap_ms, p.tolerance_ms),
                          silent_start_ms=scn.schedule.silent_start_ms,
                          settle_ms=scn.schedule.acquisition_settle_ms,
                          sched_manip=a.sched_manip if sched_manip is None else sched_manip,
                          power_boost=a.power_boost if power_boost is None else power_boost,
                          bsr_bytes=a.bsr_bytes)
        state = AttackState(duty_cycle=a.duty_cycle, boost_subframe=a.boost_subframe,
                            ul_power_dbm=ul_p, dl_power_dbm=dl_p)
        attacker = Attacker(a.id, Position(*a.position), enb.cell, plan, deliver, state)
        sim.add(attacker)
        for s in scn.sniffers:
            cfg = SnifferConfig(s.id, Position(*s.position), _antenna(s),
                                sweep_angles(s.step_deg, s.start_deg, s.span_deg), s.window, s.dwell_timeout_ms)
            sn = Sniffer(cfg, ch, attacker, sim.rng(f"sniffer:{s.id}"))
            sniffers.append(sn)
            sim.add(sn)
    return Cell(sim, ch, enb, victim, attacker, sniffers, repeater, ues, deliver)


def quick_identity(cell: Cell, scn: Scenario, limit_ms: int = 5_000) -> None:
    """Connect the victim with one message and hand its identity to the attacker.

    Used by unit scenarios that exercise later attack stages only; the
    attacker still reads the SR config from the observed connection setup.
    """
    sim, att, victim = cell.sim, cell.attacker, cell.victim
    att.phase = "idle"
    cell.deliver(scn.victim.phone, "SRB", sim.now_ms + scn.schedule.silent_start_ms)
    sim.run(until_ms=sim.now_ms + limit_ms, stop=lambda s: victim.state.rnti is not None)
    if victim.state.rnti is None:
        raise RunError("victim never connected")
    att.start_attack(victim.state.rnti, capture_sr_config(att.setups, victim.state.rnti), sim.now_ms, sim)


def _acquire(cell: Cell, scn: Scenario) -> bool:
    sim, att = cell.sim, cell.attacker
    if scn.attacker.acquisition:
        sim.run(stop=lambda s: att.phase != "acquire")
        return att.phase == "attack"
    quick_identity(cell, scn)
    return True


# -- kinds -------------------------------------------------------------------

def _bearings(cell: Cell, scn: Scenario) -> list[BearingMeasurement]:
    out = []
    for sn, cfg in zip(cell.sniffers, scn.sniffers):
        try:
            out.append(estimate_bearing(sn.profile, cfg.beamwidth_deg, cfg.min_snr_db))
        except EmptyProfile:
            out.append(BearingMeasurement(sn.position, None, None, 0.0, "undetectable"))
    return out


def _sweep_rows(scn, seed, point, cell) -> list[tuple]:
    rows = []
    for sn in cell.sniffers:
        p = sn.profile
        for a, pw, d, n in zip(p.angles, p.power_dbm, p.detected, p.samples):
            rows.append((scn.name, seed, point, sn.entity_id, f"{a:.1f}", _fmt(float(pw)), int(d), int(n)))
    return rows


def run_localization(scn: Scenario, seed: int, power_boost=None, sched_manip=None) -> RunResult:
    cell = build_cell(scn, seed, power_boost, sched_manip)
    sim = cell.sim
    ok = _acquire(cell, scn)
    acq_ms = sim.now_ms
    metrics, sweep_rows = [], []
    phases = {"acquisition": acq_ms}
    bearings_by_point = []
    for i, pt in enumerate(scn.victim.points):
        name = scn.point_name(i)
        truth = Position(*pt)
        if not ok:
            metrics.append(RunMetrics(scn.name, seed, name, False, math.inf, math.inf, math.inf,
                                      phase_ms={"acquisition": acq_ms}))
            continue
        t0 = sim.now_ms
        cell.victim.move_to(truth)
        sim.run(until_ms=t0 + scn.schedule.point_settle_ms)
        t1 = sim.now_ms
        for sn in cell.sniffers:
            sn.start(t1)
        sim.run(until_ms=t1 + scn.schedule.sweep_timeout_ms, stop=lambda s: all(x.finished for x in cell.sniffers))
        if not all(x.finished for x in cell.sniffers):
            raise RunError(f"sweep at {name} did not finish")
        t2 = sim.now_ms
        phases[f"{name}:settle"] = t1 - t0
        phases[f"{name}:sweep"] = t2 - t1
        bs = _bearings(cell, scn)
        bearings_by_point.append(bs)
        sweep_rows += _sweep_rows(scn, seed, name, cell)
        errs = [bearing_error(b, truth) for b in bs]
        peaks = [b.peak_dbm for b in bs if b.peak_dbm is not None]
        snr = min(b.snr_db for b in bs)
        success = all(b.quality == "ok" for b in bs)
        dist = math.inf
        if success and len(bs) >= 2:
            try:
                dist = localization_error(multiangulate(*bs), truth)
            except (IllConditioned, ValueError):
                success = False
        elif success:
            dist = NAN  # single sniffer: detection only
        metrics.append(RunMetrics(scn.name, seed, name, success, errs[0], errs[1] if len(errs) > 1 else NAN,
                                  dist, max(peaks) if peaks else NAN, snr,
                                  phase_ms={"settle": t1 - t0, "sweep": t2 - t1}))
    res = RunResult(scn, seed, metrics)
    res.events["main"] = sim.log.to_csv()
    res.tables["sweep"] = _csv(SWEEP_COLUMNS, sweep_rows)
    res.tables["phases"] = _csv(("phase", "duration_ms"), list(phases.items()))
    res.details.update(phases=phases, total_ms=sim.now_ms, bearings=bearings_by_point,
                       anomaly_flags=sorted(cell.enb.flag_log.get(cell.attacker.state.target_rnti or -1, ())),
                       target_rnti=cell.attacker.state.target_rnti, victim_rntis=list(cell.victim.counters.rntis))
    dists = [m.dist_err_m for m in metrics if not math.isnan(m.dist_err_m)]
    p = scn.metrics.percentile
    pct = percentile(dists, p) if dists else NAN
    res.details["p_dist_err_m"] = pct
    res.summary = (f"{scn.name} seed={seed} boost={cell.attacker.plan.power_boost} "
                   f"localized={res.success_count}/{len(metrics)} p{p:g}_dist_err_m={_fmt(pct) or 'n/a'}")
    return res


def run_table1(scn: Scenario, seed: int, **_) -> RunResult:
    cal = calibrate_table1(scn.channel.d0, scn.enb.rs_power_dbm)
    rows, metrics = [], []
    t1 = scn.table1
    for d in t1.distances_m:
        s2 = scn.model_copy(update={"victim": scn.victim.model_copy(update={"points": [(scn.enb.position[0] + d,
                                                                                        scn.enb.position[1])]})})
        cell = build_cell(s2, seed, with_attacker=False, duration_ms=t1.measure_ms)
        cell.sim.run()
        v = cell.victim
        tx = [p - 10.0 * math.log10(max(1, math.ceil(scn.enb.grant_bytes / scn.enb.rb_bytes)))
              for _, p in v.power_trace]
        sim_tx = float(np.mean(tx)) if tx else NAN
        pred_rsrp = scn.enb.rs_power_dbm - (cal.pl0_db + 10 * cal.exponent_n * math.log10(d / scn.channel.d0))
        pred_tx = min(23.0, cal.p0_dbm + cal.alpha * (scn.enb.rs_power_dbm - pred_rsrp))
        ref = dict(zip(TABLE1_DISTANCE_M, zip(TABLE1_RSRP_DBM, TABLE1_TX_DBM)))
        rsrp_ref, tx_ref = ref.get(d, (NAN, NAN))
        ok = abs(pred_rsrp - rsrp_ref) <= t1.rsrp_tolerance_db and abs(pred_tx - tx_ref) <= t1.tx_tolerance_db
        rows.append((f"{d:g}", _fmt(rsrp_ref), _fmt(pred_rsrp), _fmt(v.rsrp_dbm), _fmt(tx_ref), _fmt(pred_tx),
                     _fmt(sim_tx), len(tx)))
        metrics.append(RunMetrics(scn.name, seed, f"{d:g}m", bool(ok), max_dbm=sim_tx))
    res = RunResult(scn, seed, metrics)
    res.tables["table1"] = _csv(("distance_m", "rsrp_ref_dbm", "rsrp_pred_dbm", "rsrp_sim_dbm", "tx_ref_dbm",
                                 "tx_pred_dbm", "tx_sim_dbm", "pusch_count"), rows)
    res.tables["calibration"] = _csv(
        ("parameter", "value"),
        [("pl0_db", f"{cal.pl0_db:.4f}"), ("exponent_n", f"{cal.exponent_n:.4f}"), ("p0_dbm", f"{cal.p0_dbm:.4f}"),
         ("alpha", f"{cal.alpha:.4f}")]
        + [(f"rsrp_residual_{d:g}m", f"{r:.4f}") for d, r in zip(TABLE1_DISTANCE_M, cal.rsrp_residuals_db)]
        + [(f"tx_residual_{d:g}m", f"{r:.4f}") for d, r in zip(TABLE1_DISTANCE_M, cal.tx_residuals_db)])
    res.details["calibration"] = cal
    res.summary = f"{scn.name} seed={seed} rows_within_tolerance={res.success_count}/{len(metrics)}"
    return res


def run_sched_manip(scn: Scenario, seed: int, sched_manip=None, **_) -> RunResult:
    cfg = scn.sched_manip
    # attack on: forged SR/BSR keep the idle victim scheduled
    cell = build_cell(scn, seed, power_boost=False, sched_manip=True if sched_manip is None else sched_manip)
    sim = cell.sim
    quick_identity(cell, scn)
    start = sim.now_ms
    sim.run(until_ms=start + cfg.attack_ms)
    rnti = cell.attacker.state.target_rnti
    log = sim.log
    bsr_times = [r[0] for r in log.select("fake_bsr")]
    # victim PUSCH between the first forged BSR and the one after the last checked step
    steps_ok = False
    checked = 0
    if len(bsr_times) > cfg.steps_checked:
        lo, hi = bsr_times[0], bsr_times[cfg.steps_checked]
        pus = [r for r in log.select("pusch", cell.victim.entity_id) if lo <= r[0] < hi]
        grants = [r for r in log.select("dci0", cell.victim.entity_id) if lo - 4 <= r[0] < hi - 4]
        checked = len(pus)
        steps_ok = bool(pus) and all(r[5] == "padding;bsr=0" for r in pus) and len(pus) == len(grants)
    expired = [r for r in log.select("rnti_expired") if r[3] == rnti]
    unchanged = not expired and cell.victim.state.rnti == rnti and cell.victim.counters.rntis == [rnti]
    duty = cell.attacker.used_grants / max(1, cell.attacker.victim_grants)
    duty_ok = cell.attacker.used_grants <= scn.attacker.duty_cycle * cell.attacker.victim_grants + 1
    flags = tuple(sorted(cell.enb.flag_log.get(rnti, ())))
    on = RunMetrics(scn.name, seed, "attack_on", bool(steps_ok and unchanged and duty_ok), flags=flags,
                    phase_ms={"attack": cfg.attack_ms})

    # attack off: one message connects the victim, then silence until expiry
    cell2 = build_cell(scn, seed, with_attacker=False)
    sim2 = cell2.sim
    cell2.deliver(scn.victim.phone, "SRB", scn.schedule.silent_start_ms)
    sim2.run(until_ms=scn.schedule.silent_start_ms + cfg.idle_ms)
    v2 = cell2.victim
    rnti2 = v2.counters.rntis[0] if v2.counters.rntis else None
    exp = [r[0] for r in sim2.log.select("rnti_expired") if r[3] == rnti2]
    act = [r[0] for r in sim2.log.rows if r[3] == rnti2 and r[1] == cell2.enb.entity_id
           and r[2] in ("dl_data", "rrc_setup", "pusch_rx", "sr_rx")]
    lifetime = (exp[0] - max(a for a in act if a < exp[0])) if exp and act else NAN
    off = RunMetrics(scn.name, seed, "attack_off", bool(exp) and lifetime == scn.enb.inactivity_timeout_ms,
                     phase_ms={"idle": cfg.idle_ms})
    res = RunResult(scn, seed, [on, off])
    res.events["attack_on"] = log.to_csv()
    res.events["attack_off"] = sim2.log.to_csv()
    res.details.update(steps_ok=steps_ok, steps_pusch=checked, rnti_unchanged=unchanged, duty=duty,
                       duty_ok=duty_ok, used=cell.attacker.used_grants, granted=cell.attacker.victim_grants,
                       flags=flags, lifetime_ms=lifetime, expired_at=exp[0] if exp else None,
                       victim_counters=cell.victim.counters, bsr_steps=len(bsr_times),
                       enb_flags_benign=sorted(cell2.enb.flag_log.get(rnti2, ())))
    res.tables["attack"] = _csv(("quantity", "value"), [
        ("forged_bsr_steps", len(bsr_times)), ("victim_pusch_checked", checked), ("steps_padding_zero_bsr", steps_ok),
        ("rnti_unchanged_60s", unchanged), ("attacker_used_grants", cell.attacker.used_grants),
        ("victim_grants", cell.attacker.victim_grants), ("duty", f"{duty:.4f}"),
        ("anomaly_flags", ";".join(flags)), ("idle_rnti_lifetime_ms", _fmt(lifetime))])
    res.summary = (f"{scn.name} seed={seed} steps_ok={steps_ok} rnti_unchanged={unchanged} "
                   f"duty={duty:.3f} idle_lifetime_ms={_fmt(lifetime)} flags={','.join(flags) or 'none'}")
    return res


def run_boost_race(scn: Scenario, seed: int, power_boost=None, sched_manip=None) -> RunResult:
    cfg = scn.boost_race
    cell = build_cell(scn, seed, power_boost, sched_manip)
    sim, v = cell.sim, cell.victim
    quick_identity(cell, scn)
    start = sim.now_ms
    trace = []
    while sim.now_ms < start + cfg.run_ms:
        sim.run(until_ms=sim.now_ms + 10)
        trace.append((sim.now_ms - start, v.tx_power(1), v.state.power.f_db))
    steady_at = None
    for i, (t, p, _) in enumerate(trace):
        if all(abs(q - 23.0) <= cfg.tolerance_db for _, q, _ in trace[i:]):
            steady_at = t
            break
    success = steady_at is not None and steady_at <= cfg.limit_ms
    final = trace[-1][1]
    m = RunMetrics(scn.name, seed, "race", success, max_dbm=max(p for _, p, _ in trace),
                   phase_ms={"race": cfg.run_ms, "steady_at": steady_at})
    res = RunResult(scn, seed, [m])
    res.events["main"] = sim.log.to_csv()
    res.tables["power_trace"] = _csv(("t_ms", "tx_power_dbm", "f_db"),
                                     [(t, f"{p:.2f}", f"{f:.1f}") for t, p, f in trace])
    downs = sum(1 for r in sim.log.select("grant") if r[3] == v.state.rnti and r[5].endswith("tpc=0"))
    res.details.update(trace=trace, steady_at=steady_at, final_dbm=final, boosts=cell.attacker.boosts,
                       enb_down_commands=downs, enb_tpc3=sum(1 for r in sim.log.select("grant")
                                                            if r[5].endswith("tpc=3")))
    res.summary = (f"{scn.name} seed={seed} boost={cell.attacker.plan.power_boost} final={final:.2f}dBm "
                   f"steady_at_ms={steady_at if steady_at is not None else 'never'}")
    return res


def run_repeater(scn: Scenario, seed: int, **_) -> RunResult:
    cfg = scn.repeater_test
    cell = build_cell(scn, seed, power_boost=False, sched_manip=True)
    sim, att = cell.sim, cell.attacker
    quick_identity(cell, scn)
    sim.run(until_ms=sim.now_ms + scn.schedule.point_settle_ms)
    sn, scfg = cell.sniffers[0], scn.sniffers[0]
    sn.start(sim.now_ms)
    sim.run(until_ms=sim.now_ms + scn.schedule.sweep_timeout_ms, stop=lambda s: sn.finished)
    prof = sn.profile
    peaks = sorted(local_maxima(prof), key=lambda i: -prof.filled()[i])[:cfg.max_candidates]
    candidates = [float(prof.angles[i]) for i in peaks]
    sweep_rows = _sweep_rows(scn, seed, "sweep", cell)
    measured = {}

    def measure(bearings, boost):
        att.plan.power_boost = boost
        sim.run(until_ms=sim.now_ms + cfg.settle_ms)
        out = []
        for b in bearings:
            # a targeted dwell waits for its full sample count
            sn.start(sim.now_ms, angles=[b], window=cfg.dwell_subframes, timeout_ms=scn.schedule.sweep_timeout_ms)
            sim.run(until_ms=sim.now_ms + scn.schedule.sweep_timeout_ms, stop=lambda s: sn.finished)
            out.append(float(sn.profile.filled()[0]))
        measured[boost] = out
        return out

    victim_pos = cell.victim.position
    ext = Position(*scn.repeater.external_position)
    truth_ue = sn.position.bearing_to(victim_pos)
    truth_rep = sn.position.bearing_to(ext)
    try:
        idx = disambiguate_repeater(candidates, measure, cfg.delta_threshold_db)
        chosen = candidates[idx]
    except (Inconclusive, ValueError):
        idx, chosen = None, None

    def ang(a, b):
        return abs((a - b + 180.0) % 360.0 - 180.0)

    labels = ["ue" if ang(c, truth_ue) < ang(c, truth_rep) else "repeater" for c in candidates]
    deltas = [a - b for a, b in zip(measured.get(True, []), measured.get(False, []))]
    success = chosen is not None and labels[idx] == "ue"
    rows = [(c, lab, _fmt(measured.get(False, [NAN] * 9)[i]), _fmt(measured.get(True, [NAN] * 9)[i]),
             _fmt(deltas[i] if i < len(deltas) else NAN), int(i == idx)) for i, (c, lab) in enumerate(zip(candidates, labels))]
    m = RunMetrics(scn.name, seed, "table5", success, bearing_err_deg_1=ang(chosen, truth_ue) if chosen is not None else NAN,
                   max_dbm=max(measured.get(True, [NAN])), snr_db=NAN)
    res = RunResult(scn, seed, [m])
    res.events["main"] = sim.log.to_csv()
    res.tables["sweep"] = _csv(SWEEP_COLUMNS, sweep_rows)
    res.tables["repeater"] = _csv(("bearing_deg", "truth", "before_dbm", "after_dbm", "delta_db", "selected"), rows)
    by_label = {lab: deltas[i] for i, lab in enumerate(labels) if i < len(deltas)}
    res.details.update(candidates=candidates, labels=labels, deltas=deltas, selected=idx,
                       ue_delta=by_label.get("ue"), repeater_delta=by_label.get("repeater"),
                       before=measured.get(False), after=measured.get(True))
    res.summary = (f"{scn.name} seed={seed} candidates={len(candidates)} ue_delta={_fmt(by_label.get('ue'))} "
                   f"repeater_delta={_fmt(by_label.get('repeater'))} selected={labels[idx] if idx is not None else 'none'}")
    return res


def run_crowd(scn: Scenario, seed: int, **_) -> RunResult:
    c = scn.crowd
    p = scn.attacker.pattern if scn.attacker else None
    pattern = SilentPattern(p.burst_count, p.gap_ms, p.tolerance_ms) if p else SilentPattern()
    cfg = CrowdConfig(n_users=c.users, session_rate_per_s=c.session_rate_per_s,
                      inactivity_timeout_ms=scn.enb.inactivity_timeout_ms)
    metrics, rows = [], []
    for t in range(c.trials):
        obs, victim = crowd_trace(pattern, seeded_rng(seed, f"crowd-trial:{t}"), cfg)
        try:
            got, err = acquire_rnti(pattern, obs), ""
        except AcquisitionError as exc:
            got, err = None, type(exc).__name__
        ok = got == victim
        metrics.append(RunMetrics(scn.name, seed, f"trial{t}", ok))
        rows.append(("crowd", t, len(obs), victim, got if got is not None else "", err, int(ok)))
    fps = 0
    for t in range(c.adversarial_trials):
        with_victim = t % 2 == 0
        obs, victim = adversarial_trace(pattern, seeded_rng(seed, f"adversarial:{t}"), c.decoys, with_victim, cfg)
        try:
            got, err = acquire_rnti(pattern, obs), ""
        except AcquisitionError as exc:
            got, err = None, type(exc).__name__
        fp = got is not None and got != victim
        fps += fp
        ok = got == victim
        metrics.append(RunMetrics(scn.name, seed, f"adversarial{t}", ok))
        rows.append(("adversarial", t, len(obs), victim if victim is not None else "", got if got is not None else "",
                     err, int(ok)))
    res = RunResult(scn, seed, metrics)
    res.tables["acquisition"] = _csv(("set", "trial", "observations", "victim_rnti", "found_rnti", "error", "success"),
                                     rows)
    found = sum(m.success for m in metrics[:c.trials])
    res.details.update(found=found, trials=c.trials, false_positives=fps, adversarial=c.adversarial_trials)
    res.summary = (f"{scn.name} seed={seed} users={c.users} identified={found}/{c.trials} "
                   f"false_positives={fps}/{c.adversarial_trials}")
    return res


def benign_flags(scn: Scenario, seed: int, duration_ms: int = 3_000, users: int = 8,
                 rate_per_s: float = 2.0) -> dict[int, set]:
    """Anomaly flags raised over a cell of ordinary users and no attacker.

    Every RNTI's full PDU history is re-checked with ``detect_anomalies``
    on top of the eNB's own periodic scan.
    """
    bg = scn.background.model_copy(update={"count": users, "rate_per_s": rate_per_s})
    cell = build_cell(scn.model_copy(update={"background": bg}), seed, with_attacker=False,
                      duration_ms=duration_ms)
    cell.sim.run()
    out = {r: set(f) for r, f in cell.enb.flag_log.items() if f}
    for rec in list(cell.enb.records.values()) + cell.enb.expired:
        flags = detect_anomalies(list(rec.history))
        if flags:
            out.setdefault(rec.rnti, set()).update(flags)
    return out


RUNNERS = {
    "localization": run_localization,
    "table1": run_table1,
    "sched_manip": run_sched_manip,
    "boost_race": run_boost_race,
    "repeater": run_repeater,
    "acquisition_crowd": run_crowd,
}


def run_scenario(scn: Scenario, seed: int | None = None, power_boost: bool | None = None,
                 sched_manip: bool | None = None) -> RunResult:
    seed = scn.seed if seed is None else seed
    fn = RUNNERS[scn.kind]
    kw = {}
    if power_boost is not None:
        kw["power_boost"] = power_boost
    if sched_manip is not None:
        kw["sched_manip"] = sched_manip
    return fn(scn, seed, **kw)


# -- batch -------------------------------------------------------------------

AXES = {"boost": "power_boost", "sched_manip": "sched_manip"}


def _one(args):
    scn, seed, kw = args
    return run_scenario(scn, seed, **kw)


@dataclass
class BatchResult:
    rows: list[tuple]            # (axis value, RunMetrics)
    aggregates: dict             # axis value -> dict
    results: list[RunResult]

    def csv(self) -> str:
        header = ("axis",) + METRICS_COLUMNS
        body = [(a,) + m.row() for a, m in self.rows]
        for a, agg in self.aggregates.items():
            body.append((a, agg["scenario"], "all", f"p{agg['q']:g}", f"{agg['success_rate']:.4f}",
                         _fmt(agg["bearing_err_deg_1"]), _fmt(agg["bearing_err_deg_2"]), _fmt(agg["dist_err_m"]),
                         "", ""))
        return _csv(header, body)


def aggregate(metrics: list[RunMetrics], q: float = 70.0) -> dict:
    """Success rate and percentile errors; failed runs count as infinite error."""
    def col(name):
        vals = [getattr(m, name) if m.success else math.inf for m in metrics]
        vals = [v for v in vals if not math.isnan(v)]
        return percentile(vals, q) if vals else NAN
    return {"scenario": metrics[0].scenario if metrics else "", "q": q, "n": len(metrics),
            "success_rate": sum(m.success for m in metrics) / len(metrics) if metrics else NAN,
            "bearing_err_deg_1": col("bearing_err_deg_1"), "bearing_err_deg_2": col("bearing_err_deg_2"),
            "dist_err_m": col("dist_err_m")}


def run_batch(scn: Scenario, seeds, axis: str | None = None, values=None, workers: int = 1) -> BatchResult:
    seeds = sorted(set(int(s) for s in seeds))
    if not seeds:
        raise ValueError("empty seed list")
    if axis is None:
        points = [(None, {})]
    else:
        if axis not in AXES:
            raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
        vals = values if values is not None else [True, False]
        points = [(v, {AXES[axis]: v}) for v in vals]
    jobs = [(scn, s, kw) for _, kw in points for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    rows, aggs = [], {}
    it = iter(results)
    for v, _ in points:
        label = "default" if v is None else f"{axis}={v}"
        ms = []
        for _ in seeds:
            r = next(it)
            for m in r.metrics:
                rows.append((label, m))
                ms.append(m)
        aggs[label] = aggregate(ms, scn.metrics.percentile)
    return BatchResult(rows, aggs, results)
