"""Downlink observation traces for a crowded cell, used to exercise RNTI acquisition.

The full MAC loop is unnecessary here: what the attacker sees is a stream of
(RNTI, bearer, time) tuples. Background users get Poisson session arrivals
and lose their RNTI after the inactivity timeout, like in the simulated eNB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacker import BEARERS, DownlinkObservation, SilentPattern
from .enb import C_RNTI_MAX, C_RNTI_MIN


@dataclass(frozen=True)
class CrowdConfig:
    n_users: int = 862
    session_rate_per_s: float = 1.0 / 20.0
    events_per_session: float = 3.0
    session_span_ms: int = 600
    inactivity_timeout_ms: int = 15_000
    delivery_jitter_ms: int = 200
    silent_start_ms: int = 5_000
    tail_ms: int = 3_000


class _RntiPool:
    def __init__(self, rng):
        self.span = C_RNTI_MAX - C_RNTI_MIN + 1
        self.next = int(rng.integers(self.span))

    def take(self) -> int:
        r = C_RNTI_MIN + self.next
        self.next = (self.next + 1) % self.span
        return r


def _assign_rntis(times, pool, timeout_ms):
    out = []
    rnti = None
    last = None
    for t in times:
        if last is None or t - last >= timeout_ms:
            rnti = pool.take()
        out.append(rnti)
        last = t
    return out


def _user_events(rng, cfg: CrowdConfig, duration_ms: int) -> np.ndarray:
    n_sessions = rng.poisson(cfg.session_rate_per_s * duration_ms / 1000.0)
    starts = np.sort(rng.uniform(0, duration_ms, n_sessions))
    times = []
    for s in starts:
        k = 1 + rng.poisson(cfg.events_per_session - 1)
        times.extend(s + np.sort(rng.uniform(0, cfg.session_span_ms, k)))
    return np.floor(np.asarray(times)).astype(int)


def crowd_trace(pattern: SilentPattern, rng: np.random.Generator, cfg: CrowdConfig = CrowdConfig(),
                victim: bool = True) -> tuple[list[DownlinkObservation], int | None]:
    """Observations for one trial and the victim's RNTI (None without a victim)."""
    duration = cfg.silent_start_ms + (pattern.burst_count - 1) * pattern.gap_ms + cfg.tail_ms
    pool = _RntiPool(rng)
    obs: list[DownlinkObservation] = []
    for _ in range(cfg.n_users):
        ts = _user_events(rng, cfg, duration)
        bearers = rng.choice(BEARERS, size=len(ts))
        for t, r, b in zip(ts, _assign_rntis(ts, pool, cfg.inactivity_timeout_ms), bearers):
            obs.append(DownlinkObservation(int(r), str(b), int(t)))
    victim_rnti = None
    if victim:
        sends = pattern.send_times(cfg.silent_start_ms)
        ts = [int(t + rng.integers(0, cfg.delivery_jitter_ms + 1)) for t in sends]
        rntis = _assign_rntis(ts, pool, cfg.inactivity_timeout_ms)
        victim_rnti = rntis[0]
        obs.extend(DownlinkObservation(r, "SRB", t) for t, r in zip(ts, rntis))
    obs.sort(key=lambda o: (o.timestamp, o.rnti))
    return obs, victim_rnti


def adversarial_trace(pattern: SilentPattern, rng: np.random.Generator, n_decoys: int = 50,
                      victim: bool = False, cfg: CrowdConfig = CrowdConfig()
                      ) -> tuple[list[DownlinkObservation], int | None]:
    """Background made of near-miss patterns that must never be accepted.

    Decoys repeat the burst train with a gap just outside the tolerance,
    break the train after K-1 bursts, carry it on the ignored bearer, or
    change RNTI halfway through.
    """
    base, victim_rnti = crowd_trace(pattern, rng, CrowdConfig(n_users=50, silent_start_ms=cfg.silent_start_ms),
                                    victim=victim)
    pool = _RntiPool(rng)
    obs = list(base)
    k, gap, tol = pattern.burst_count, pattern.gap_ms, pattern.tolerance_ms
    for i in range(n_decoys):
        start = int(rng.integers(0, cfg.silent_start_ms))
        kind = i % 4
        if kind == 0:
            off = int(rng.integers(tol + 1, tol + 1500)) * (1 if rng.random() < 0.5 else -1)
            ts = [start + j * (gap + off) for j in range(k)]
            bearer = "SRB"
        elif kind == 1:
            ts = [start + j * gap for j in range(k - 1)]
            ts.append(ts[-1] + gap + int(rng.integers(tol + 1, 3000)))
            bearer = "DRB1"
        elif kind == 2:
            ts = [start + j * gap for j in range(k)]
            bearer = "DRB2"
        else:
            ts = [start + j * gap for j in range(k)]
            bearer = "SRB"
        r1 = pool.take()
        r2 = pool.take() if kind == 3 else r1
        half = k // 2
        for j, t in enumerate(ts):
            obs.append(DownlinkObservation(r1 if j < half else r2, bearer, int(t)))
    obs.sort(key=lambda o: (o.timestamp, o.rnti))
    return obs, victim_rnti
