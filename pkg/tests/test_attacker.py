import ast
import inspect

import numpy as np
import pytest

import lteloc.attacker as attacker_mod
from lteloc.attacker import (AttackState, DownlinkObservation, Inconclusive, RntiAmbiguous, RntiNotFound,
                             SetupNotObserved, SilentPattern, acquire_rnti, burst_starts, capture_sr_config,
                             disambiguate_repeater, forge_uplink_channel, matches_pattern)
from lteloc.codec import SchedulingRequestConfig, decode_sr
from lteloc.runner import build_cell, quick_identity

PATTERN = SilentPattern(4, 7000, 250)


def pattern_obs(rnti, start, bearer="SRB", jitter=(0, 0, 0, 0)):
    return [DownlinkObservation(rnti, bearer, t + j) for t, j in zip(PATTERN.send_times(start), jitter)]


def test_silent_pattern_invariants():
    with pytest.raises(ValueError):
        SilentPattern(4, 6000, 100)
    with pytest.raises(ValueError):
        SilentPattern(1, 7000, 100)
    with pytest.raises(ValueError):
        SilentPattern(4, 7000, 3500)
    assert PATTERN.send_times(100) == [100, 7100, 14100, 21100]


def test_burst_starts_split():
    assert burst_starts([0, 10, 500, 2000, 2100, 9000]) == [0, 2000, 9000]


def test_matches_pattern_tolerance():
    assert matches_pattern([0, 7000, 14000, 21000], PATTERN)
    assert matches_pattern([0, 7250, 14000, 20750], PATTERN)
    assert not matches_pattern([0, 7251, 14000, 21000], PATTERN)
    assert not matches_pattern([0, 7000, 14000], PATTERN)


def test_acquire_victim_alone():
    assert acquire_rnti(PATTERN, pattern_obs(77, 1000, jitter=(3, 150, 40, 220))) == 77


def test_acquire_ignores_drb2_and_requires_consecutive_bursts():
    obs = pattern_obs(5, 0, bearer="DRB2")
    with pytest.raises(RntiNotFound):
        acquire_rnti(PATTERN, obs)
    broken = pattern_obs(6, 0)[:3] + [DownlinkObservation(6, "SRB", 30_000)]
    with pytest.raises(RntiNotFound):
        acquire_rnti(PATTERN, broken)


def test_acquire_two_identical_patterns_ambiguous():
    with pytest.raises(RntiAmbiguous):
        acquire_rnti(PATTERN, pattern_obs(1, 0) + pattern_obs(2, 50))


def test_capture_sr_config():
    a, b = SchedulingRequestConfig(3, 10, 1), SchedulingRequestConfig(4, 10, 2)
    setups = [(100, 11, a), (200, 12, b)]
    assert capture_sr_config(setups, 11) == a
    assert capture_sr_config(setups, 12) == b
    with pytest.raises(SetupNotObserved):
        capture_sr_config(setups, 11, since_ms=150)
    with pytest.raises(SetupNotObserved):
        capture_sr_config([], 11)


def test_forge_requires_capture():
    with pytest.raises(ValueError):
        forge_uplink_channel(AttackState())
    cfg = SchedulingRequestConfig(9, 5, 3)
    ch = forge_uplink_channel(AttackState(target_rnti=1234, sr_config=cfg))
    sr = decode_sr(ch.sr_bits())
    assert sr.rnti == 1234 and sr.sr_config == cfg


def test_attack_state_invariants():
    with pytest.raises(ValueError):
        AttackState(duty_cycle=0.0)
    with pytest.raises(ValueError):
        AttackState(boost_subframe=10)


def test_disambiguate_examples():
    table = {False: [5.0, 17.0], True: [25.0, 17.0]}
    assert disambiguate_repeater([30.0, 80.0], lambda b, on: table[on]) == 0
    assert disambiguate_repeater([30.0], lambda b, on: [0.0] if not on else [9.0]) == 0
    with pytest.raises(Inconclusive):
        disambiguate_repeater([30.0], lambda b, on: [0.0])
    with pytest.raises(Inconclusive):
        disambiguate_repeater([30.0, 80.0], lambda b, on: [5.0, 17.0])


def test_attacker_module_is_not_privileged():
    """Only broadcast-level types from the eNB/UE modules are imported."""
    tree = ast.parse(inspect.getsource(attacker_mod))
    imported = {(n.module, a.name) for n in ast.walk(tree) if isinstance(n, ast.ImportFrom) for a in n.names}
    assert ("enb", "ENodeB") not in imported and ("ue", "UserEquipment") not in imported
    from_enb = {name for mod, name in imported if mod == "enb"}
    assert from_enb <= {"CellConfig", "DownlinkSubframe"}
    src = inspect.getsource(attacker_mod.Attacker)
    for forbidden in (".records", ".power.f_db", "buffer_bytes", "pending_grant"):
        assert forbidden not in src


def _cell(scenarios, name="sched_manip_unit", seed=1, **kw):
    scn = scenarios(name)
    cell = build_cell(scn, seed, **kw)
    quick_identity(cell, scn)
    return scn, cell


def test_one_step_yields_grants_of_at_least_200_bytes(scenarios):
    scn, cell = _cell(scenarios, power_boost=False, sched_manip=True)
    sim = cell.sim
    sim.run(until_ms=sim.now_ms + 200, stop=lambda s: s.log.count("fake_bsr") >= 1)
    t_bsr = sim.log.select("fake_bsr")[0][0]
    sim.run(until_ms=t_bsr + 40)
    rnti = cell.attacker.state.target_rnti
    granted = sum(g.grant_bytes for g in cell.enb.grant_log if g.rnti == rnti and t_bsr < g.issued_ms <= t_bsr + 30)
    assert granted >= 180  # 200 quantizes down to the 180-byte level
    rx = [r for r in sim.log.select("pusch_rx") if r[0] == t_bsr + 1]
    assert rx and "from=attacker" in rx[0][5]


def test_attacker_sr_ignored_without_forging(scenarios):
    scn, cell = _cell(scenarios, power_boost=False, sched_manip=True)
    att = cell.attacker
    att.channel = forge_uplink_channel(AttackState(target_rnti=att.state.target_rnti,
                                                   sr_config=SchedulingRequestConfig(2047, 5, 4)))
    sim = cell.sim
    before = len([g for g in cell.enb.grant_log if g.rnti == att.state.target_rnti])
    sim.run(until_ms=sim.now_ms + 300)
    assert sim.log.count("fake_sr") >= 1
    after = len([g for g in cell.enb.grant_log if g.rnti == att.state.target_rnti])
    assert after == before


def test_victim_sr_still_works_during_attack(scenarios):
    scn, cell = _cell(scenarios, power_boost=False, sched_manip=True)
    sim, v = cell.sim, cell.victim
    sim.run(until_ms=sim.now_ms + 500)
    v.state.buffer_bytes += 500
    sim.run(until_ms=sim.now_ms + 500)
    data = [r for r in sim.log.select("pusch", v.entity_id) if r[5].startswith("data")]
    assert data and v.state.buffer_bytes == 0


def test_duty_cycle_bound(scenarios):
    scn, cell = _cell(scenarios, power_boost=False, sched_manip=True)
    cell.sim.run(until_ms=cell.sim.now_ms + 10_000)
    att = cell.attacker
    assert att.victim_grants > 100
    assert att.used_grants <= 0.10 * att.victim_grants + 1


def test_boost_monotonicity_with_tpc_disabled(scenarios):
    scn = scenarios("boost_race")
    enb = scn.enb.model_copy(update={"tpc": scn.enb.tpc.model_copy(update={"enabled": False})})
    scn = scn.model_copy(update={"enb": enb})
    cell = build_cell(scn, 8, power_boost=False, sched_manip=False)
    quick_identity(cell, scn)
    sim, v, att = cell.sim, cell.victim, cell.attacker
    base = v.tx_power(1)
    assert v.state.power.f_db == 0.0
    att.plan.power_boost = True
    seen = []
    for _ in range(12):
        sim.run(until_ms=sim.now_ms + 10)
        seen.append((att.boosts, v.tx_power(1)))
    assert seen[-1][0] >= 10
    for n, p in seen:
        assert p == min(23.0, base + 3 * n)
    assert seen[-1][1] == 23.0


def test_boost_disabled_tracks_enb_only(scenarios):
    scn, cell = _cell(scenarios, name="boost_race", power_boost=False, sched_manip=True)
    cell.sim.run(until_ms=cell.sim.now_ms + 2000)
    assert cell.attacker.boosts == 0
    assert cell.victim.counters.fake_grants == 0
    assert "tpc=3" not in cell.sim.log.to_csv()


def test_boost_reaches_max(scenarios):
    from lteloc.runner import run_scenario
    r = run_scenario(scenarios("boost_race"), 6)
    assert r.details["final_dbm"] == 23.0
    assert r.details["enb_down_commands"] > 0  # the eNB does race back


def test_acquisition_in_cell(scenarios):
    """Full acquisition through the simulated cell: silent messages, DL monitoring, SR config capture."""
    scn = scenarios("e2e_lab")
    cell = build_cell(scn, 4)
    cell.sim.run(stop=lambda s: cell.attacker.phase != "acquire")
    att = cell.attacker
    assert att.phase == "attack"
    assert att.state.target_rnti == cell.victim.state.rnti
    assert att.state.sr_config == cell.enb.records[att.state.target_rnti].sr_config
    assert np.isfinite(att.phase_start["attack"])
