"""Single-machine training orchestration over the in-process or TCP transport."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .autodiff import ParamSet, load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config
from .distributed.client import LocalEnvClient, LocalParamClient, TcpEnvClient, TcpParamClient
from .distributed.param_server import ParameterStore
from .net import NetConfig, build
from .seeding import derive_seed
from .sim.track import Track, generate_track
from .trainer import EpisodeLog, EpisodeRecord, StepBudget, WorkerStats, run_workers, worker_loop

log = logging.getLogger(__name__)


def load_track(spec: str) -> Track:
    """A track file path, or ``gen:seed:length:difficulty[:hairpin_at]``."""
    if spec.startswith("gen:"):
        parts = spec.split(":")[1:]
        if len(parts) not in (3, 4):
            raise ValueError(f"generator spec {spec!r} must be gen:seed:length:difficulty[:hairpin_at]")
        hairpin = float(parts[3]) if len(parts) == 4 else None
        return generate_track(int(parts[0]), float(parts[1]), float(parts[2]), hairpin_at=hairpin)
    return Track.load(spec)


def load_tracks(config: RunConfig) -> list[Track]:
    return [load_track(s) for s in config.track_specs()]


def checkpoint_meta(net: NetConfig, extra: dict[str, str] | None = None) -> dict[str, str]:
    return {"net": net.to_json(), **(extra or {})}


def load_policy(path: str | Path) -> tuple[NetConfig, ParamSet]:
    params, meta = load_checkpoint(path)
    if "net" not in meta:
        raise ValueError(f"checkpoint {path} carries no network configuration")
    return NetConfig.from_json(meta["net"]), params


@dataclass
class TrainResult:
    records: list[EpisodeRecord]
    store: ParameterStore
    stats: list[WorkerStats] = field(default_factory=list)
    wall_seconds: float = 0.0
    checkpoint: Path | None = None


def initial_params(config: RunConfig) -> ParamSet:
    params, _ = build(config.net(), derive_seed(config.seed, "net"))
    return params


def train(config: RunConfig, out_dir: str | Path | None = None, *, tracks: list[Track] | None = None,
          env_clients=None, param_client_factory=None, store: ParameterStore | None = None) -> TrainResult:
    """Train ``config.workers`` actor-learners against one shared parameter store.

    By default everything runs in-process.  ``env_clients`` (one per worker)
    and ``param_client_factory`` substitute other transports, e.g. TCP.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(config))
    trainer_cfg = config.trainer()
    net_cfg = config.net()
    if store is None:
        store = ParameterStore(initial_params(config), trainer_cfg.lr, trainer_cfg.rms_decay, trainer_cfg.rms_eps)
    template = store.snapshot()
    if env_clients is None:
        tracks = tracks if tracks is not None else load_tracks(config)
        env_clients = [LocalEnvClient(tracks, jitter_seed=derive_seed(config.seed, "env", w) if config.jitter else None)
                       for w in range(config.workers)]
        num_tracks = len(tracks)
    else:
        num_tracks = len(config.track_specs())
    if param_client_factory is None:
        param_client_factory = lambda: LocalParamClient(store)  # noqa: E731
    budget = StepBudget(trainer_cfg.max_steps)
    sink = EpisodeLog(out)
    stats = [WorkerStats() for _ in range(config.workers)]
    param_clients = [param_client_factory() for _ in range(config.workers)]
    gens = [worker_loop(w, env_clients[w], param_clients[w], trainer_cfg, net_cfg, template, budget,
                        config.seed, track=w % num_tracks, stats=stats[w])
            for w in range(config.workers)]
    next_ckpt = [config.checkpoint_interval or 0]

    def maybe_checkpoint():
        if next_ckpt[0] and budget.used >= next_ckpt[0]:
            snap = store.snapshot()
            save_checkpoint(out / f"step{next_ckpt[0]}.ckpt", snap, checkpoint_meta(net_cfg))
            next_ckpt[0] += config.checkpoint_interval

    t0 = time.perf_counter()
    try:
        run_workers(gens, sink, config.schedule, on_rollout=maybe_checkpoint)
    finally:
        sink.close()
        for c in list(env_clients) + param_clients:
            c.close()
    final = out / "final.ckpt"
    save_checkpoint(final, store.snapshot(), checkpoint_meta(net_cfg))
    return TrainResult(sink.records, store, stats, time.perf_counter() - t0, final)


def tcp_clients(config: RunConfig, env_address: tuple[str, int], params_address: tuple[str, int]):
    envs = [TcpEnvClient(env_address) for _ in range(config.workers)]
    return envs, (lambda: TcpParamClient(params_address))
