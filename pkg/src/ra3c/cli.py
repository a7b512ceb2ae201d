"""``ra3c`` command line: track generation, serving, training, evaluation, saliency, plots.

Exit status: 0 on success, 1 on a validation error (bad flag, bad config,
bad input file), 2 on a runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import signal
import sys
import threading
from pathlib import Path

from .autodiff import CheckpointError, save_checkpoint
from .config import ConfigError, describe_defaults, load_config
from .distributed.client import (DEFAULT_ENV_PORT, DEFAULT_PARAMS_PORT, TcpEnvClient, TcpParamClient,
                                 bind_address, parse_address)
from .distributed.env_server import EnvServer
from .distributed.param_server import ParameterStore, ParamServer
from .runner import checkpoint_meta, initial_params, load_policy, load_track, train
from .sim.track import TrackError, generate_track
from .trainer import EpisodeLog, StepBudget, read_episodes, worker_loop

log = logging.getLogger("ra3c")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config(p, required: bool = True):
    p.add_argument("--config", required=required, help="run configuration file (key = value lines)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ra3c", description="Asynchronous actor-critic rally driving from pixels.",
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-track", help="generate a procedural track file")
    p.add_argument("--seed", type=int, required=True, help="generator seed")
    p.add_argument("--length", type=float, required=True, help="track length in meters (>= 200)")
    p.add_argument("--difficulty", type=float, required=True, help="0 (easy) .. 1 (hard)")
    p.add_argument("--width", type=float, default=None, help="road width in meters (default from difficulty)")
    p.add_argument("--hairpin-at", type=float, default=None, help="force a hairpin at this fraction of the track")
    p.add_argument("--out", required=True, help="output track file")

    p = sub.add_parser("serve-env", help="serve simulator sessions over TCP")
    p.add_argument("--tracks", required=True, help="comma-separated track files or gen:seed:length:difficulty")
    p.add_argument("--port", type=int, default=DEFAULT_ENV_PORT, help=f"listen port (default {DEFAULT_ENV_PORT})")
    p.add_argument("--jitter-seed", type=int, default=None, help="enable per-episode palette/physics jitter")

    p = sub.add_parser("serve-params", help="serve the shared parameters over TCP")
    _add_config(p)
    p.add_argument("--port", type=int, default=DEFAULT_PARAMS_PORT,
                   help=f"listen port (default {DEFAULT_PARAMS_PORT})")
    p.add_argument("--checkpoint", default=None, help="initial weights (default: fresh network from the seed)")
    p.add_argument("--out", default=None, help="where to write the final checkpoint on shutdown")

    p = sub.add_parser("worker", help="run one actor-learner against remote servers")
    _add_config(p)
    p.add_argument("--env", default=f"127.0.0.1:{DEFAULT_ENV_PORT}", help="env server host:port")
    p.add_argument("--params", default=f"127.0.0.1:{DEFAULT_PARAMS_PORT}", help="parameter server host:port")
    p.add_argument("--id", type=int, required=True, help="worker index (selects seeds and track)")
    p.add_argument("--steps", type=int, default=None, help="env steps for this worker (default max_steps/workers)")
    p.add_argument("--out", default=None, help="output directory (default <out_dir>/worker<id>)")

    p = sub.add_parser("train", help="single-machine training (in-process servers and workers)",
                       epilog="config keys and defaults:\n" + describe_defaults(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_config(p)
    p.add_argument("--out", default=None, help="output directory (default: out_dir from the config)")
    p.add_argument("--max-steps", type=int, default=None, help="override max_steps")

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally under a speed limit")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--track", required=True, help="track file or gen:seed:length:difficulty")
    p.add_argument("--episodes", type=int, default=5, help="evaluation episodes (default 5)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--speed-cap", type=float, default=None, help="speed cap in km/h")
    g.add_argument("--design-speed", action="store_true", help="cap each 5 m segment at its design speed")
    p.add_argument("--seed", type=int, default=0, help="evaluation seed")
    p.add_argument("--step-cap", type=int, default=9000, help="max steps per episode")
    p.add_argument("--out", default="eval", help="output directory for metrics.csv and episodes.csv")

    p = sub.add_parser("saliency", help="export guided-backpropagation maps along a rollout")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--track", required=True, help="track file or gen:seed:length:difficulty")
    p.add_argument("--frames", type=int, default=8, help="number of frames to export")
    p.add_argument("--every", type=int, default=30, help="steps between exported frames")
    p.add_argument("--seed", type=int, default=0, help="rollout seed")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("plot", help="training curves and crash heatmap from an episode log")
    p.add_argument("--log", required=True, help="episodes.csv written by train/worker")
    p.add_argument("--track", default=None, help="track for the crash heatmap (needs extents.csv)")
    p.add_argument("--window", type=int, default=100, help="rolling window in episodes")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _serve_until_signal(server, name: str) -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    server.serve_in_background()
    log.info("%s listening on %s:%d", name, *server.server_address[:2])
    print(f"{name} listening on {server.server_address[0]}:{server.server_address[1]}", flush=True)
    stop.wait()
    server.shutdown()
    server.server_close()


def cmd_gen_track(args) -> int:
    track = generate_track(args.seed, args.length, args.difficulty, road_width=args.width,
                           hairpin_at=args.hairpin_at)
    track.save(args.out)
    print(f"wrote {args.out}: {track.length:.0f} m, {len(track.checkpoints)} checkpoints")
    return 0


def cmd_serve_env(args) -> int:
    tracks = [load_track(s.strip()) for s in args.tracks.split(",") if s.strip()]
    server = EnvServer(tracks, bind_address(args.port), args.jitter_seed)
    _serve_until_signal(server, "env server")
    return 0


def cmd_serve_params(args) -> int:
    config = load_config(args.config)
    cfg = config.trainer()
    if args.checkpoint:
        net, params = load_policy(args.checkpoint)
    else:
        net, params = config.net(), initial_params(config)
    store = ParameterStore(params, cfg.lr, cfg.rms_decay, cfg.rms_eps)
    server = ParamServer(store, bind_address(args.port))
    _serve_until_signal(server, "parameter server")
    out = Path(args.out) if args.out else Path(config.out_dir) / "params.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, store.snapshot(), checkpoint_meta(net))
    print(f"parameter server stopped at version {store.version}; wrote {out}")
    return 0


def cmd_worker(args) -> int:
    config = load_config(args.config)
    cfg = config.trainer()
    steps = args.steps if args.steps is not None else cfg.max_steps // config.workers
    out = Path(args.out) if args.out else Path(config.out_dir) / f"worker{args.id}"
    env = TcpEnvClient(parse_address(args.env, DEFAULT_ENV_PORT))
    params = TcpParamClient(parse_address(args.params, DEFAULT_PARAMS_PORT))
    template = initial_params(config)
    sink = EpisodeLog(out)
    try:
        for rec in worker_loop(args.id, env, params, cfg, config.net(), template, StepBudget(steps),
                               config.seed, track=args.id % len(config.track_specs())):
            if rec is not None:
                sink.append(rec)
    finally:
        sink.close()
        env.close()
        params.close()
    print(f"worker {args.id}: {len(sink.records)} episodes written to {out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.max_steps is not None:
        config = config.replace(max_steps=args.max_steps)
    out = Path(args.out) if args.out else Path(config.out_dir)
    result = train(config, out)
    print(f"trained {sum(s.steps for s in result.stats)} steps, {len(result.records)} episodes, "
          f"{result.store.version} updates in {result.wall_seconds:.1f} s; wrote {out}")
    return 0


METRIC_FIELDS = ("cap", "episodes", "distance_km", "crashes", "hits", "crashes_per_km", "hits_per_km",
                 "mean_speed_kmh")
EVAL_EPISODE_FIELDS = ("cap", "episode", "steps", "distance_m", "mean_speed_kmh", "hits", "crash_reason",
                       "s_start", "s_min", "s_max", "s_end")


def metric_row(result) -> dict:
    km = result.distance_km
    return {"cap": result.cap, "episodes": len(result.episodes), "distance_km": round(km, 6),
            "crashes": result.crashes, "hits": result.hits,
            "crashes_per_km": round(result.crashes / km, 6) if km > 0 else "",
            "hits_per_km": round(result.hits / km, 6) if km > 0 else "",
            "mean_speed_kmh": round(result.mean_speed_kmh, 3)}


def cmd_eval(args) -> int:
    from .metrics import DESIGN, evaluate
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if args.speed_cap is not None and not args.speed_cap > 0:
        raise UsageError("--speed-cap must be positive (a car capped at 0 km/h cannot move)")
    net, params = load_policy(args.checkpoint)
    track = load_track(args.track)
    cap = DESIGN if args.design_speed else (args.speed_cap if args.speed_cap is not None else math.inf)
    result = evaluate(net, params, track, args.episodes, args.seed, cap, step_cap=args.step_cap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(metric_row(result))
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, EVAL_EPISODE_FIELDS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for e in result.episodes:
            w.writerow({"cap": cap, **{k: getattr(e, k) for k in EVAL_EPISODE_FIELDS[1:]}})
    row = metric_row(result)
    print(f"cap {cap}: {row['episodes']} episodes, {row['distance_km']} km, "
          f"{row['crashes_per_km']} crashes/km, {row['hits_per_km']} hits/km")
    return 0


def cmd_saliency(args) -> int:
    from .saliency import export_saliency
    if args.frames < 1 or args.every < 1:
        raise UsageError("--frames and --every must be >= 1")
    net, params = load_policy(args.checkpoint)
    track = load_track(args.track)
    rows = export_saliency(net, params, track, args.frames, args.every, args.seed, args.out)
    print(f"wrote {len(rows)} saliency maps to {args.out}")
    return 0


def cmd_plot(args) -> int:
    from .metrics import SegmentHistogram
    from .plots import crash_heatmap, training_curves
    episodes = read_episodes(args.log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not episodes:
        raise UsageError(f"{args.log} holds no episodes")
    training_curves(episodes, out / "training.svg", args.window)
    written = ["training.svg"]
    if args.track:
        if "s_end" not in episodes[0]:
            raise UsageError("crash heatmap needs extents.csv next to the episode log")
        track = load_track(args.track)
        crash_heatmap(track, SegmentHistogram.from_episodes(episodes, track), out / "crashes.svg")
        written.append("crashes.svg")
    print(f"wrote {', '.join(written)} to {out}")
    return 0


COMMANDS = {
    "gen-track": cmd_gen_track, "serve-env": cmd_serve_env, "serve-params": cmd_serve_params,
    "worker": cmd_worker, "train": cmd_train, "eval": cmd_eval, "saliency": cmd_saliency, "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ra3c: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, TrackError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"ra3c: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        print(f"ra3c: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
