"""Evaluation and analysis: rolling statistics, hit/crash rates, exploration,
per-segment histograms, design speed and speed-limited evaluation."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .actions import ControlCommand, class_to_control, sample_action
from .autodiff import ParamSet
from .net import Hidden, NetConfig, forward, initial_hidden
from .seeding import rng_for
from .sim.env import Env
from .sim.render import RenderConfig
from .sim.track import Track, TrackPoint

SEGMENT_M = 5.0
KMH_PER_MS = 3.6


def rolling(series: Sequence[float], window: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-window mean and population standard deviation per index.

    The first ``window - 1`` entries use the samples available so far.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0), np.zeros(0)
    c1 = np.concatenate([[0.0], np.cumsum(x)])
    c2 = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - window)
    n = idx - lo
    mean = (c1[idx] - c1[lo]) / n
    var = (c2[idx] - c2[lo]) / n - mean * mean
    return mean, np.sqrt(np.maximum(var, 0.0))


class RollingStats:
    """Streaming version of :func:`rolling`."""

    def __init__(self, window: int = 1000):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self._buf: deque[float] = deque(maxlen=window)

    def push(self, value: float) -> tuple[float, float]:
        self._buf.append(float(value))
        return self.mean, self.deviation

    @property
    def count(self) -> int:
        return len(self._buf)

    @property
    def mean(self) -> float:
        if not self._buf:
            raise ValueError("no samples yet")
        return float(np.mean(self._buf))

    @property
    def deviation(self) -> float:
        if not self._buf:
            raise ValueError("no samples yet")
        return float(np.std(self._buf))


def _get(ep, key: str):
    return ep[key] if isinstance(ep, Mapping) else getattr(ep, key)


def total_km(episodes: Iterable) -> float:
    return sum(float(_get(e, "distance_m")) for e in episodes) / 1000.0


def hits_per_km(episodes: Sequence) -> float:
    km = total_km(episodes)
    if km <= 0:
        raise ValueError("hits per km is undefined for zero total distance")
    return sum(int(_get(e, "hits")) for e in episodes) / km


CRASH_REASONS = ("stalled", "wrong_way", "off_road")


def crashes_per_km(episodes: Sequence) -> float:
    km = total_km(episodes)
    if km <= 0:
        raise ValueError("crashes per km is undefined for zero total distance")
    return sum(1 for e in episodes if _get(e, "crash_reason") in CRASH_REASONS) / km


def num_segments(length: float) -> int:
    return int(math.ceil(length / SEGMENT_M))


def _length(track: Track | float) -> float:
    return track.length if isinstance(track, Track) else float(track)


def visited_segments(episodes: Iterable, track: Track | float) -> np.ndarray:
    """Boolean mask of 5 m segments reached by any episode.

    A car moves less than one segment per step, so an episode's visited set is
    the contiguous span between its lowest and highest arc-length position.
    """
    n = num_segments(_length(track))
    mask = np.zeros(n, dtype=bool)
    for e in episodes:
        lo = int(np.clip(float(_get(e, "s_min")) // SEGMENT_M, 0, n - 1))
        hi = int(np.clip(float(_get(e, "s_max")) // SEGMENT_M, 0, n - 1))
        mask[lo:hi + 1] = True
    return mask


def exploration_pct(episodes: Iterable, track: Track | float) -> float:
    mask = visited_segments(episodes, track)
    return 100.0 * float(mask.mean()) if mask.size else 0.0


@dataclass
class SegmentHistogram:
    """Crash / hit / visit counts per 5 m segment of one track."""

    length: float
    crashes: np.ndarray = field(init=False)
    hits: np.ndarray = field(init=False)
    visits: np.ndarray = field(init=False)

    def __post_init__(self):
        n = num_segments(self.length)
        self.crashes = np.zeros(n, dtype=np.int64)
        self.hits = np.zeros(n, dtype=np.int64)
        self.visits = np.zeros(n, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.crashes.size

    def segment(self, s: float) -> int:
        return int(np.clip(s // SEGMENT_M, 0, self.size - 1))

    def add_visit(self, s_min: float, s_max: float) -> None:
        self.visits[self.segment(s_min):self.segment(s_max) + 1] += 1

    def add_crash(self, s: float) -> None:
        self.crashes[self.segment(s)] += 1

    def add_hit(self, s: float) -> None:
        self.hits[self.segment(s)] += 1

    def add_episode(self, ep) -> None:
        self.add_visit(float(_get(ep, "s_min")), float(_get(ep, "s_max")))
        if _get(ep, "crash_reason") in CRASH_REASONS:
            self.add_crash(float(_get(ep, "s_end")))

    @classmethod
    def from_episodes(cls, episodes: Iterable, track: Track | float) -> "SegmentHistogram":
        h = cls(_length(track))
        for e in episodes:
            h.add_episode(e)
        return h


def design_speed(point: TrackPoint, f: float = 0.15, v_max: float = 130.0) -> float:
    """Safe curve speed in km/h from radius, superelevation and side friction."""
    if f <= 0:
        raise ValueError(f"side friction factor must be positive, got {f}")
    if point.kappa == 0:
        return v_max
    if point.e + f <= 0:
        raise ValueError(f"superelevation {point.e} plus friction {f} is not positive; curve cannot be banked")
    radius = 1.0 / abs(point.kappa)
    return min(v_max, math.sqrt(127.0 * radius * (point.e + f)))


def limit_speed(cmd: ControlCommand, speed_kmh: float, cap_kmh: float) -> ControlCommand:
    """Gas cut above the cap, brake (steering kept) above 110% of it."""
    if speed_kmh > 1.1 * cap_kmh:
        return ControlCommand(cmd.steering, 0.0, 1.0, 0.0)
    if speed_kmh > cap_kmh:
        return ControlCommand(cmd.steering, 0.0, cmd.brake, cmd.handbrake)
    return cmd


DESIGN = "design"


@dataclass
class EvalEpisode:
    episode: int
    steps: int
    distance_m: float
    mean_speed_kmh: float
    hits: int
    crash_reason: str
    s_start: float
    s_min: float
    s_max: float
    s_end: float
    hit_positions: list[float] = field(default_factory=list)


@dataclass
class EvalResult:
    cap: float | str
    episodes: list[EvalEpisode]

    @property
    def distance_km(self) -> float:
        return total_km(self.episodes)

    @property
    def crashes(self) -> int:
        return sum(1 for e in self.episodes if e.crash_reason in CRASH_REASONS)

    @property
    def hits(self) -> int:
        return sum(e.hits for e in self.episodes)

    @property
    def crashes_per_km(self) -> float:
        return crashes_per_km(self.episodes)

    @property
    def hits_per_km(self) -> float:
        return hits_per_km(self.episodes)

    @property
    def mean_speed_kmh(self) -> float:
        steps = sum(e.steps for e in self.episodes)
        return sum(e.mean_speed_kmh * e.steps for e in self.episodes) / steps if steps else 0.0


def track_point(track: Track, i: int) -> TrackPoint:
    return TrackPoint(float(track.s[i]), float(track.x[i]), float(track.y[i]), float(track.width[i]),
                      float(track.kappa[i]), float(track.e[i]), float(track.mu[i]))


def design_caps(track: Track, f: float = 0.15, v_max: float = 130.0) -> np.ndarray:
    """Design speed of every 5 m segment, taken at the segment's tightest sample."""
    n = num_segments(track.length)
    caps = np.full(n, float(v_max))
    seg = np.minimum((track.s // SEGMENT_M).astype(int), n - 1)
    for i in range(track.s.size):
        caps[seg[i]] = min(caps[seg[i]], design_speed(track_point(track, i), f, v_max))
    return caps


def evaluate(net: NetConfig, params: ParamSet, track: Track, episodes: int, seed: int,
             cap: float | str = math.inf, *, step_cap: int = 9000, start_checkpoint: int = 0,
             friction: float = 0.15, v_max: float = 130.0) -> EvalResult:
    """Run the policy for ``episodes`` episodes under a speed cap (km/h, ``inf`` or ``"design"``)."""
    if cap != DESIGN:
        cap = float(cap)
        if not cap > 0:
            raise ValueError(f"speed cap must be positive, got {cap}")
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    _, h, w = net.input_shape
    env = Env(track, RenderConfig(h, w))
    caps = design_caps(track, friction, v_max) if cap == DESIGN else None
    out = []
    for ep in range(episodes):
        rng = rng_for(seed, "eval", ep)
        obs = env.reset(start_checkpoint)
        hidden: Hidden = initial_hidden(net)
        s0 = obs.s
        rec = EvalEpisode(ep, 0, 0.0, 0.0, 0, "", s0, s0, s0, s0)
        speed_sum = 0.0
        while True:
            res = forward(net, params, obs.frame, obs.speed, obs.prev_action, hidden)
            hidden = res.hidden
            action = sample_action(res.policy, rng)
            override = None
            limit = caps[min(int(obs.s // SEGMENT_M), caps.size - 1)] if caps is not None else cap
            if math.isfinite(limit):
                cmd = class_to_control(action)
                limited = limit_speed(cmd, obs.speed * KMH_PER_MS, limit)
                override = None if limited == cmd else limited
            obs = env.step(action, override)
            rec.steps += 1
            speed_sum += obs.speed
            rec.distance_m += obs.s - rec.s_end
            rec.s_end = obs.s
            rec.s_min = min(rec.s_min, obs.s)
            rec.s_max = max(rec.s_max, obs.s)
            if obs.events.hit:
                rec.hits += 1
                rec.hit_positions.append(obs.s)
            ev = obs.events
            if ev.terminal:
                rec.crash_reason = "finished" if ev.finished else ev.crash_reason.value
                break
            if rec.steps >= step_cap:
                rec.crash_reason = "step_cap"
                break
        rec.mean_speed_kmh = KMH_PER_MS * speed_sum / rec.steps
        out.append(rec)
    return EvalResult(cap, out)


def speed_limited_eval(net: NetConfig, params: ParamSet, track: Track, caps: Sequence[float],
                       episodes: int = 5, seed: int = 0, include_design: bool = True,
                       **kwargs) -> list[EvalResult]:
    """Evaluate one checkpoint under each cap, plus the per-segment design-speed limit."""
    for c in caps:
        if not float(c) > 0:
            raise ValueError(f"speed cap must be positive, got {c}")
    results = [evaluate(net, params, track, episodes, seed, c, **kwargs) for c in caps]
    if include_design:
        results.append(evaluate(net, params, track, episodes, seed, DESIGN, **kwargs))
    return results
