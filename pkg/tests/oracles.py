"""Independent reference implementations used to check the package.

These are written from first principles (closed forms, brute force,
sorting) and share no code with ``lteloc``.
"""

from __future__ import annotations

import math

# Field measurements used for channel calibration: distance (m), RSRP (dBm), UE Tx (dBm).
TABLE1 = (
    (10.0, -62.37, -7.04),
    (30.0, -73.43, 0.49),
    (50.0, -78.91, 5.05),
    (70.0, -85.36, 7.65),
    (90.0, -86.45, 7.20),
    (110.0, -87.60, 7.56),
)
TPC_TABLE = {0: -1.0, 1: 0.0, 2: 1.0, 3: 3.0}


def simple_regression(xs, ys):
    """Ordinary least squares y = a + b x via the closed form."""
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    b = sxy / sxx
    return my - b * mx, b


def calibration_oracle(rs_power=15.0):
    """(pl0, n, p0, alpha) fitted by closed-form regression."""
    logd = [10.0 * math.log10(d) for d, _, _ in TABLE1]
    pl = [rs_power - r for _, r, _ in TABLE1]
    pl0, n = simple_regression(logd, pl)
    p0, alpha = simple_regression(pl, [t for _, _, t in TABLE1])
    return pl0, n, p0, alpha


def riv_bruteforce_table(n_rb):
    """All contiguous allocations keyed by RIV, from the textbook two-branch rule."""
    out = {}
    for length in range(1, n_rb + 1):
        for start in range(0, n_rb - length + 1):
            if length - 1 <= n_rb // 2:
                riv = n_rb * (length - 1) + start
            else:
                riv = n_rb * (n_rb - length + 1) + (n_rb - 1 - start)
            out[riv] = (start, length)
    return out


def sorted_percentile(values, q):
    """Linear interpolation between closest ranks; inf handled explicitly."""
    xs = sorted(values)
    pos = (len(xs) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    if xs[lo] == xs[hi] or pos == lo:
        return xs[lo]
    if math.isinf(xs[hi]):
        return math.inf
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def line_intersection(p1, th1_deg, p2, th2_deg):
    """Intersection of two bearing lines by Cramer's rule."""
    c1, s1 = math.cos(math.radians(th1_deg)), math.sin(math.radians(th1_deg))
    c2, s2 = math.cos(math.radians(th2_deg)), math.sin(math.radians(th2_deg))
    # p1 + t1 (c1, s1) = p2 + t2 (c2, s2)
    det = c1 * (-s2) - (-c2) * s1
    dx, dy = p2[0] - p1[0], p2[1] - p1[1]
    t1 = (dx * (-s2) - (-c2) * dy) / det
    return p1[0] + t1 * c1, p1[1] + t1 * s1


def closed_loop_steps(start_rx, target, hyst, max_steps=10_000):
    """Steps for a bang-bang +-1 dB loop to enter the dead zone (one command per step)."""
    rx = start_rx
    for k in range(max_steps):
        if target - hyst <= rx <= target + hyst:
            return k, rx
        rx += -1.0 if rx > target + hyst else 1.0
    return None, rx


def bsr_lower_bound(size, table):
    """Largest table entry not above ``size`` (linear scan)."""
    best = 0
    for i, v in enumerate(table):
        if v <= size:
            best = i
    return best
