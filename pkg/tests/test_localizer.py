import math

import numpy as np
import pytest

from lteloc.channel import AntennaPattern, ChannelModel, Transmission
from lteloc.codec import MacPdu
from lteloc.core import GeometryError, Position
from lteloc.localizer import (BearingMeasurement, EmptyProfile, IllConditioned, LocationEstimate, SnifferConfig,
                              SweepProfile, bearing_error, estimate_bearing, local_maxima, localization_error,
                              multiangulate, sweep, sweep_angles)
from oracles import line_intersection, sorted_percentile

QUIET = ChannelModel(shadowing_sigma_db=0.0)
RNTI = 4242


def ok(pos, bearing):
    return BearingMeasurement(Position(*pos), bearing % 360.0, -50.0, 30.0, "ok")


def pusch(pos, power=10.0, kind="ue", origin="v"):
    return Transmission(origin if kind == "ue" else f"relay:{origin}", Position(*pos), power,
                        MacPdu(RNTI), "uplink", "PUSCH", 0, source_kind=kind, origin_id=origin)


def profile(values, step=5.0, floor=-105.0):
    a = np.arange(len(values)) * step
    v = np.asarray(values, dtype=float)
    return SweepProfile(Position(0, 0), a, v, (~np.isnan(v)).astype(int), np.ones(len(v), dtype=int), floor)


def test_sweep_angles():
    assert len(sweep_angles()) == 72 and sweep_angles()[-1] == 355.0
    assert sweep_angles(5.0, 40.0, 100.0) == tuple(40.0 + 5 * i for i in range(21))
    with pytest.raises(ValueError):
        SnifferConfig("s", Position(0, 0), angles=(10.0, 5.0))


def test_sweep_single_source_peak_at_bearing():
    src = (10 * math.cos(math.radians(30)), 10 * math.sin(math.radians(30)))
    cfg = SnifferConfig("s", Position(0, 0), AntennaPattern(10, 30, -20), window=3)
    feed = range(0, 72 * 3)
    p = sweep(cfg, RNTI, feed, QUIET, lambda ms: [pusch(src)])
    assert p.angles[int(np.argmax(p.filled()))] == 30.0
    b = estimate_bearing(p)
    assert abs(b.bearing_deg - 30.0) <= 2.5 and b.quality == "ok"


def test_sweep_skips_injected_subframes():
    cfg = SnifferConfig("s", Position(0, 0), window=2, angles=(0.0, 5.0))
    p = sweep(cfg, RNTI, [1, 2, 3, 4, 5], QUIET, lambda ms: [pusch((10, 0))], skip=[1, 3])
    assert list(p.samples) == [2, 1]


def test_silent_victim_empty_profile():
    cfg = SnifferConfig("s", Position(0, 0))
    p = sweep(cfg, RNTI, [], QUIET, lambda ms: [])
    assert p.empty
    with pytest.raises(EmptyProfile):
        estimate_bearing(p)


def test_victim_and_repeater_two_maxima():
    cfg = SnifferConfig("s", Position(0, 0), AntennaPattern(10, 20, -30), window=1)
    world = [pusch((10, 0), 10.0), pusch((0, 10), 10.0, kind="repeater")]
    p = sweep(cfg, RNTI, range(72), QUIET, lambda ms: world)
    peaks = sorted(p.angles[i] for i in local_maxima(p))
    assert peaks == [0.0, 90.0]
    assert estimate_bearing(p, beamwidth_deg=20).quality == "ambiguous"


def test_flat_and_silent_profiles_undetectable():
    assert estimate_bearing(profile([-80.0] * 72)).quality == "undetectable"
    b = estimate_bearing(profile([math.nan] * 72))
    assert b.quality == "undetectable" and b.bearing_deg is None


def test_low_snr_is_ambiguous():
    v = [-100.0] * 72
    v[10] = -95.0
    b = estimate_bearing(profile(v))
    assert b.quality == "ambiguous" and b.snr_db == pytest.approx(5.0)


def test_quadratic_interpolation():
    # samples of a parabola peaking at 12 deg
    vals = [-0.05 * (a - 12.0) ** 2 - 40.0 for a in np.arange(72) * 5.0]
    b = estimate_bearing(profile(vals))
    assert b.bearing_deg == pytest.approx(12.0, abs=1e-6)


def test_circular_wrap_interpolation():
    vals = [-0.05 * (min(abs(a - 358.0), 360 - abs(a - 358.0))) ** 2 - 40.0 for a in np.arange(72) * 5.0]
    b = estimate_bearing(profile(vals))
    assert b.bearing_deg == pytest.approx(358.0, abs=1e-6)


def test_measurement_invariants():
    with pytest.raises(ValueError):
        BearingMeasurement(Position(0, 0), 10.0, None, 0.0, "undetectable")
    with pytest.raises(ValueError):
        BearingMeasurement(Position(0, 0), 360.0, None, 0.0, "ok")
    with pytest.raises(ValueError):
        LocationEstimate(Position(0, 0), -1.0, ())


def test_multiangulate_exact_example():
    est = multiangulate(ok((0, 0), 45.0), ok((10, 0), 135.0))
    assert est.position.x == pytest.approx(5.0) and est.position.y == pytest.approx(5.0)
    assert est.residual_m == pytest.approx(0.0, abs=1e-9)


def test_multiangulate_matches_cramer_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        p1, p2 = rng.uniform(-20, 20, 2), rng.uniform(-20, 20, 2)
        t1, t2 = rng.uniform(0, 360, 2)
        if abs(math.sin(math.radians(t1 - t2))) < 0.1:
            continue
        est = multiangulate(ok(p1, t1), ok(p2, t2))
        x, y = line_intersection(p1, t1, p2, t2)
        assert est.position.x == pytest.approx(x, abs=1e-6) and est.position.y == pytest.approx(y, abs=1e-6)


def test_multiangulate_errors():
    with pytest.raises(IllConditioned):
        multiangulate(ok((0, 0), 90.0), ok((10, 0), 90.0))
    with pytest.raises(IllConditioned):
        multiangulate(ok((0, 0), 90.0), ok((10, 0), 93.0))
    with pytest.raises(GeometryError):
        multiangulate(ok((0, 0), 10.0), ok((0, 0), 80.0))
    bad = BearingMeasurement(Position(1, 1), 10.0, -50, 5.0, "ambiguous")
    with pytest.raises(ValueError):
        multiangulate(ok((0, 0), 10.0), bad)


def test_three_sniffers_average():
    t = Position(4.0, 3.0)
    sn = [Position(0, 0), Position(10, 0), Position(0, 10)]
    est = multiangulate(*[ok((s.x, s.y), s.bearing_to(t)) for s in sn])
    assert localization_error(est, t) == pytest.approx(0.0, abs=1e-9)


def test_localization_error_examples():
    est = LocationEstimate(Position(0, 0), 0.0, ())
    assert localization_error(est, Position(0, 0)) == 0.0
    assert localization_error(est, Position(3, 4)) == 5.0
    assert bearing_error(ok((0, 0), 359.0), Position(1, 0)) == pytest.approx(1.0)
    assert bearing_error(BearingMeasurement(Position(0, 0), None, None, 0, "undetectable"), Position(1, 0)) == math.inf


def test_lab_geometry_perturbation_monte_carlo(scenarios):
    """Bearings perturbed by up to 2 degrees on the lab layout keep the 70th-percentile error under 2 m."""
    scn = scenarios("e2e_lab")
    s1, s2 = (Position(*s.position) for s in scn.sniffers)
    rng = np.random.default_rng(1000)
    errs = []
    for _ in range(1000):
        for pt in scn.victim.points:
            t = Position(*pt)
            b1 = ok((s1.x, s1.y), s1.bearing_to(t) + rng.uniform(-2, 2))
            b2 = ok((s2.x, s2.y), s2.bearing_to(t) + rng.uniform(-2, 2))
            errs.append(localization_error(multiangulate(b1, b2), t))
    assert sorted_percentile(errs, 70) <= 2.0
