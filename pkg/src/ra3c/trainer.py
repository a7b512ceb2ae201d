"""Asynchronous advantage actor-critic: rollouts, n-step targets, loss, workers.

A worker is a generator.  It pulls the shared weights, acts for up to
``t_max`` steps while recording the forward passes on a tape, bootstraps the
value of the last state, backpropagates the summed per-step loss through the
rollout, clips the gradient and pushes it.  It yields after every rollout
(``None``) and whenever an episode ends (an :class:`EpisodeRecord`), which
lets :func:`run_workers` either drive the generators round-robin in one thread
(fully deterministic) or give each one its own thread.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .actions import sample_action
from .autodiff import ParamSet, Tape, backward, clip_by_global_norm, ops
from .distributed.client import EnvClient, ParamClient
from .distributed.protocol import ObsPayload
from .net import EncoderVariant, Hidden, NetConfig, forward, initial_hidden
from .reward import FrameSignal, RewardKind, compute_reward
from .seeding import rng_for
from .sim.physics import CrashReason

log = logging.getLogger(__name__)

CSV_HEADER = ("worker", "episode", "start_checkpoint", "steps", "distance_m", "mean_speed_kmh", "hits",
              "crash_reason")
EXTENT_HEADER = ("worker", "episode", "s_start", "s_min", "s_max", "s_end")
SEGMENT_M = 5.0

_CRASH_NAMES = {1: CrashReason.STALLED.value, 2: CrashReason.WRONG_WAY.value, 3: CrashReason.OFF_ROAD.value}


class RespawnStrategy(enum.Enum):
    START = "start"
    RANDOM_CHECKPOINT = "random_checkpoint"

    @classmethod
    def parse(cls, text: "str | RespawnStrategy") -> "RespawnStrategy":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {"randomcheckpoint": "random_checkpoint", "random": "random_checkpoint"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown respawn strategy {text!r}; expected one of "
                         f"{', '.join(m.value for m in cls)}")


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    t_max: int = 5
    beta: float = 0.01
    value_coef: float = 0.5
    clip_norm: float = 40.0
    respawn: RespawnStrategy = RespawnStrategy.START
    reward: RewardKind = RewardKind.CENTER
    encoder: EncoderVariant = EncoderVariant.OURS
    max_steps: int = 100_000
    reward_scale: float = 0.005
    episode_step_cap: int = 9000
    lr: float = 7e-4
    rms_decay: float = 0.99
    rms_eps: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "respawn", RespawnStrategy.parse(self.respawn))
        object.__setattr__(self, "reward", RewardKind.parse(self.reward))
        object.__setattr__(self, "encoder", EncoderVariant.parse(self.encoder))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must satisfy 0 <= gamma < 1, got {self.gamma}")
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        if self.beta < 0 or self.value_coef < 0:
            raise ValueError("beta and value_coef must be non-negative")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.reward_scale <= 0:
            raise ValueError(f"reward_scale must be positive, got {self.reward_scale}")
        if self.episode_step_cap < 1:
            raise ValueError(f"episode_step_cap must be >= 1, got {self.episode_step_cap}")
        if self.lr <= 0 or not 0 <= self.rms_decay < 1 or self.rms_eps <= 0:
            raise ValueError("RMSProp needs lr > 0, 0 <= decay < 1 and eps > 0")


@dataclass
class Transition:
    observation: object
    action: int
    reward: float
    value: float
    prob: float
    terminal: bool = False

    def __post_init__(self):
        if not 0.0 < self.prob <= 1.0:
            raise ValueError(f"action probability must be in (0, 1], got {self.prob}")
        if not math.isfinite(self.value):
            raise ValueError("value estimate must be finite")


@dataclass
class RolloutBatch:
    transitions: list[Transition]
    bootstrap: float = 0.0

    def __post_init__(self):
        if self.transitions and self.transitions[-1].terminal and self.bootstrap != 0.0:
            raise ValueError("bootstrap value must be 0 after a terminal transition")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def rewards(self) -> list[float]:
        return [t.reward for t in self.transitions]


def n_step_targets(batch: RolloutBatch, gamma: float) -> list[float]:
    """Discounted targets R_t = r_t + gamma * R_{t+1}, seeded with the bootstrap value."""
    if len(batch) == 0:
        raise ValueError("cannot compute targets for an empty rollout")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must satisfy 0 <= gamma < 1, got {gamma}")
    ret = 0.0 if batch.transitions[-1].terminal else float(batch.bootstrap)
    out = [0.0] * len(batch)
    for i in range(len(batch) - 1, -1, -1):
        ret = batch.transitions[i].reward + gamma * ret
        out[i] = ret
    return out


def compute_loss(batch: RolloutBatch, targets: Sequence[float], logits: Sequence, values: Sequence,
                 beta: float = 0.01, value_coef: float = 0.5):
    """Summed actor-critic loss node over the rollout.

    ``logits`` / ``values`` are the tape nodes from the forward passes that
    chose each action.
    """
    n = len(batch)
    if not (len(targets) == len(logits) == len(values) == n):
        raise ValueError(f"misaligned rollout: {n} transitions, {len(targets)} targets, "
                         f"{len(logits)} logits, {len(values)} values")
    if n == 0:
        raise ValueError("cannot compute a loss for an empty rollout")
    terms = [ops.a3c_step_loss(lg, v, tr.action, float(R), beta, value_coef)
             for tr, R, lg, v in zip(batch.transitions, targets, logits, values)]
    return ops.add_n(terms)


def respawn_choice(strategy: RespawnStrategy, num_checkpoints: int, rng: np.random.Generator) -> int:
    if num_checkpoints < 1:
        raise ValueError("track has no checkpoints")
    if RespawnStrategy.parse(strategy) is RespawnStrategy.START:
        return 0
    return int(rng.integers(num_checkpoints))


@dataclass
class EpisodeRecord:
    worker: int
    episode: int
    start_checkpoint: int
    steps: int = 0
    distance_m: float = 0.0
    speed_sum: float = 0.0
    hits: int = 0
    crash_reason: str = ""
    s_start: float = 0.0
    s_min: float = 0.0
    s_max: float = 0.0
    s_end: float = 0.0

    @property
    def mean_speed_kmh(self) -> float:
        return 3.6 * self.speed_sum / self.steps if self.steps else 0.0

    @property
    def crashed(self) -> bool:
        return self.crash_reason in _CRASH_NAMES.values()

    def csv_row(self) -> list[str]:
        return [str(self.worker), str(self.episode), str(self.start_checkpoint), str(self.steps),
                f"{self.distance_m:.3f}", f"{self.mean_speed_kmh:.3f}", str(self.hits), self.crash_reason]

    def extent_row(self) -> list[str]:
        return [str(self.worker), str(self.episode)] + [f"{v:.3f}" for v in
                                                        (self.s_start, self.s_min, self.s_max, self.s_end)]


def crash_name(obs: ObsPayload) -> str:
    if obs.finished:
        return "finished"
    return _CRASH_NAMES.get(obs.crash_code, "")


class StepBudget:
    """Global env-step budget shared by all workers."""

    def __init__(self, total: int):
        self.total = int(total)
        self.used = 0
        self.stop = threading.Event()
        self._lock = threading.Lock()

    def claim(self, n: int) -> int:
        with self._lock:
            if self.stop.is_set():
                return 0
            take = max(0, min(n, self.total - self.used))
            self.used += take
            return take

    def release(self, n: int) -> None:
        """Return claimed steps that a rollout cut short by an episode end did not use."""
        if n > 0:
            with self._lock:
                self.used -= n

    @property
    def exhausted(self) -> bool:
        return self.stop.is_set() or self.used >= self.total


def obs_frame(obs: ObsPayload, dtype=np.float32) -> np.ndarray:
    return np.ascontiguousarray(obs.frame.transpose(2, 0, 1), dtype=dtype) / np.asarray(255.0, dtype=dtype)


def obs_signal(obs: ObsPayload) -> FrameSignal:
    return FrameSignal(v=obs.speed, alpha=obs.alpha, d=obs.d, road_width=obs.road_width)


@dataclass
class WorkerStats:
    rollouts: int = 0
    pushes: int = 0
    steps: int = 0
    last_version: int = -1
    grad_norms: list[float] = field(default_factory=list)


def _with_retry(env: EnvClient, fn, *args, attempts: int = 3):
    """Run an env call; on a dropped TCP connection reconnect and signal a fresh episode."""
    for attempt in range(attempts):
        try:
            return fn(*args), False
        except (ConnectionError, OSError) as exc:
            reconnect = getattr(env, "reconnect", None)
            if reconnect is None or attempt == attempts - 1:
                raise ConnectionError(f"env connection lost and not recoverable: {exc}") from exc
            log.warning("env connection lost (%s); reconnecting", exc)
            reconnect()
            return None, True
    raise AssertionError("unreachable")


def worker_loop(worker_id: int, env: EnvClient, params: ParamClient, config: TrainerConfig,
                net_config: NetConfig, template: ParamSet, budget: StepBudget, seed: int,
                track: int = 0, stats: WorkerStats | None = None) -> Iterator[Optional[EpisodeRecord]]:
    """One actor-learner.  ``template`` supplies the parameter layout for unflattening."""
    stats = stats if stats is not None else WorkerStats()
    rng_act = rng_for(seed, "worker", worker_id, "actions")
    rng_spawn = rng_for(seed, "worker", worker_id, "respawn")
    _, height, width = net_config.input_shape
    hello = env.hello(height, width, track)
    track_length = float(hello.track_length)
    num_cp = int(hello.checkpoints)

    episode_no = 0
    rec: EpisodeRecord | None = None
    obs: ObsPayload | None = None
    hidden: Hidden = initial_hidden(net_config)
    prev_action: int | None = None

    def new_episode() -> None:
        nonlocal rec, obs, hidden, prev_action, episode_no
        cp = respawn_choice(config.respawn, num_cp, rng_spawn)
        obs = env.reset(cp)
        episode_no += 1
        s0 = obs.progress * track_length
        rec = EpisodeRecord(worker_id, episode_no, cp, s_start=s0, s_min=s0, s_max=s0, s_end=s0)
        hidden = initial_hidden(net_config)
        prev_action = None

    if budget.exhausted:
        return
    new_episode()
    while True:
        n = budget.claim(config.t_max)
        if n == 0:
            break
        version, flat = params.get()
        local = template.unflatten(flat, version)
        tape = Tape()
        watched = tape.watch(local)
        transitions: list[Transition] = []
        logits_nodes, value_nodes = [], []
        ended: str | None = None
        for _ in range(n):
            out = forward(net_config, watched, obs_frame(obs), obs.speed, prev_action, hidden, tape)
            action = sample_action(out.policy, rng_act)
            nxt, broken = _with_retry(env, env.act, action)
            if broken:
                ended = "disconnected"
                break
            sig = obs_signal(nxt)
            reward = config.reward_scale * compute_reward(config.reward, sig)
            s_now = nxt.progress * track_length
            rec.steps += 1
            rec.speed_sum += nxt.speed
            rec.hits += int(nxt.hit)
            rec.distance_m += s_now - rec.s_end
            rec.s_end = s_now
            rec.s_min = min(rec.s_min, s_now)
            rec.s_max = max(rec.s_max, s_now)
            terminal = nxt.crash or nxt.finished
            transitions.append(Transition(obs.episode, action, reward, out.value,
                                          float(max(out.policy[action], np.finfo(np.float64).tiny)), terminal))
            logits_nodes.append(out.logits)
            value_nodes.append(out.value_node)
            hidden = Hidden(out.h_node, out.c_node)
            prev_action = action
            obs = nxt
            stats.steps += 1
            if terminal:
                ended = crash_name(nxt) or "crash"
                break
            if rec.steps >= config.episode_step_cap:
                ended = "step_cap"
                break
        budget.release(n - len(transitions))
        if not transitions:
            break
        if transitions[-1].terminal:
            bootstrap = 0.0
        else:
            boot = forward(net_config, local, obs_frame(obs), obs.speed, prev_action,
                           Hidden(hidden[0].data, hidden[1].data))
            bootstrap = boot.value
        batch = RolloutBatch(transitions, bootstrap)
        targets = n_step_targets(batch, config.gamma)
        loss = compute_loss(batch, targets, logits_nodes, value_nodes, config.beta, config.value_coef)
        grads = backward(tape, loss, local)
        grads, norm = clip_by_global_norm(grads, config.clip_norm)
        stats.grad_norms.append(norm)
        stats.last_version = params.push(version, grads.flatten(np.float32))
        stats.pushes += 1
        stats.rollouts += 1
        # carry the recurrent state forward, detached from this rollout's tape
        hidden = Hidden(hidden[0].data, hidden[1].data)
        if ended is not None:
            rec.crash_reason = ended
            yield rec
            if budget.exhausted:
                return
            new_episode()
        else:
            yield None
    if rec is not None and rec.steps > 0:
        rec.crash_reason = "budget"
        yield rec


class EpisodeLog:
    """Writes the episode CSV and the per-episode track-extent sidecar."""

    def __init__(self, out_dir: str | Path | None):
        self.records: list[EpisodeRecord] = []
        self._fh = self._xfh = None
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            self._fh = open(out / "episodes.csv", "w", newline="")
            self._xfh = open(out / "extents.csv", "w", newline="")
            self._w = csv.writer(self._fh, lineterminator="\n")
            self._xw = csv.writer(self._xfh, lineterminator="\n")
            self._w.writerow(CSV_HEADER)
            self._xw.writerow(EXTENT_HEADER)
            self._fh.flush()
            self._xfh.flush()
        self._lock = threading.Lock()

    def append(self, rec: EpisodeRecord) -> None:
        with self._lock:
            self.records.append(rec)
            if self._fh is not None:
                self._w.writerow(rec.csv_row())
                self._xw.writerow(rec.extent_row())
                self._fh.flush()
                self._xfh.flush()

    def close(self) -> None:
        for fh in (self._fh, self._xfh):
            if fh is not None:
                fh.close()


def read_episodes(path: str | Path) -> list[dict]:
    """Parse an episode CSV (plus the extent sidecar if present next to it)."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({"worker": int(row["worker"]), "episode": int(row["episode"]),
                         "start_checkpoint": int(row["start_checkpoint"]), "steps": int(row["steps"]),
                         "distance_m": float(row["distance_m"]), "mean_speed_kmh": float(row["mean_speed_kmh"]),
                         "hits": int(row["hits"]), "crash_reason": row["crash_reason"]})
    extents = path.with_name("extents.csv")
    if extents.exists():
        index = {(r["worker"], r["episode"]): r for r in rows}
        with open(extents, newline="") as fh:
            for row in csv.DictReader(fh):
                r = index.get((int(row["worker"]), int(row["episode"])))
                if r is not None:
                    r.update({k: float(row[k]) for k in ("s_start", "s_min", "s_max", "s_end")})
    return rows


def run_workers(workers: Sequence[Iterator[Optional[EpisodeRecord]]], log_sink: EpisodeLog,
                schedule: str = "interleaved", on_rollout=None) -> None:
    """Drive worker generators to completion.

    ``interleaved`` steps them round-robin, one rollout each, in the calling
    thread; ``threads`` runs each in its own thread.  ``on_rollout`` is called
    after every rollout from the interleaved driver (used for checkpointing).
    """
    if schedule == "interleaved":
        live = list(workers)
        while live:
            still = []
            for gen in live:
                try:
                    item = next(gen)
                except StopIteration:
                    continue
                if item is not None:
                    log_sink.append(item)
                still.append(gen)
                if on_rollout is not None:
                    on_rollout()
            live = still
    elif schedule == "threads":
        errors: list[BaseException] = []

        def drive(gen):
            try:
                for item in gen:
                    if item is not None:
                        log_sink.append(item)
                    if on_rollout is not None:
                        on_rollout()
            except BaseException as exc:  # surfaced to the caller below
                errors.append(exc)

        threads = [threading.Thread(target=drive, args=(g,), name=f"worker-{i}", daemon=True)
                   for i, g in enumerate(workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
    else:
        raise ValueError(f"unknown schedule {schedule!r}; expected 'interleaved' or 'threads'")


__all__ = [
    "CSV_HEADER", "EpisodeLog", "EpisodeRecord", "RespawnStrategy", "RolloutBatch", "StepBudget", "TrainerConfig",
    "Transition", "WorkerStats", "compute_loss", "n_step_targets", "read_episodes", "respawn_choice",
    "run_workers", "worker_loop",
]
