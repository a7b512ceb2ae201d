"""Run configuration: a line-oriented ``key = value`` file.

Blank lines and ``#`` comments are ignored.  Unknown keys are errors.  The
environment variable ``RA3C_SEED`` overrides ``seed``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .net import EncoderVariant, NetConfig
from .reward import RewardKind
from .trainer import RespawnStrategy, TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # learning
    gamma: float = 0.99
    t_max: int = 5
    beta: float = 0.01
    value_coef: float = 0.5
    clip_norm: float = 40.0
    respawn: str = "start"
    reward: str = "center"
    encoder: str = "ours"
    max_steps: int = 100_000
    reward_scale: float = 0.005
    episode_step_cap: int = 9000
    lr: float = 7e-4
    rms_decay: float = 0.99
    rms_eps: float = 0.1
    # network
    input_size: int = 84
    lstm_size: int = 256
    fc_size: int = 256
    # tracks: comma-separated paths or generator specs ``gen:seed:length:difficulty``
    tracks: str = "gen:0:2000:0.5"
    # 1 = per-episode palette and physics-constant jitter in the in-process simulators
    jitter: int = 0
    # run layout
    workers: int = 4
    schedule: str = "interleaved"
    env_address: str = "127.0.0.1:7801"
    params_address: str = "127.0.0.1:7802"
    seed: int = 0
    checkpoint_interval: int = 50_000
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers: worker count must be >= 1")
        if self.schedule not in ("interleaved", "threads"):
            raise ConfigError("schedule: must be 'interleaved' or 'threads'")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval: must be >= 0 (0 disables periodic checkpoints)")
        if not 8 <= self.input_size <= 512:
            raise ConfigError("input_size: must be within 8..512")
        if self.lstm_size < 1 or self.fc_size < 1:
            raise ConfigError("lstm_size / fc_size: must be >= 1")
        if self.jitter not in (0, 1):
            raise ConfigError("jitter: must be 0 or 1")
        if not self.tracks.strip():
            raise ConfigError("tracks: at least one track is required")
        try:
            self.trainer()
        except ValueError as exc:
            raise ConfigError(_blame(str(exc))) from exc

    def trainer(self) -> TrainerConfig:
        return TrainerConfig(
            gamma=self.gamma, t_max=self.t_max, beta=self.beta, value_coef=self.value_coef,
            clip_norm=self.clip_norm, respawn=RespawnStrategy.parse(self.respawn),
            reward=RewardKind.parse(self.reward), encoder=EncoderVariant.parse(self.encoder),
            max_steps=self.max_steps, reward_scale=self.reward_scale, episode_step_cap=self.episode_step_cap,
            lr=self.lr, rms_decay=self.rms_decay, rms_eps=self.rms_eps)

    def net(self) -> NetConfig:
        return NetConfig(EncoderVariant.parse(self.encoder), (3, self.input_size, self.input_size),
                         lstm_size=self.lstm_size, fc_size=self.fc_size)

    def track_specs(self) -> list[str]:
        return [t.strip() for t in self.tracks.split(",") if t.strip()]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _blame(message: str) -> str:
    """Prefix a validation message with the key it concerns, when recognisable."""
    for f in fields(RunConfig):
        if message.lower().startswith(f.name) or f" {f.name} " in f" {message} ":
            return f"{f.name}: {message}"
    return message


_DEFAULTS = RunConfig.__dataclass_fields__


def _coerce(key: str, raw: str, lineno: int | None):
    typ = _DEFAULTS[key].type
    where = f"line {lineno}: " if lineno is not None else ""
    try:
        if typ == "int":
            return int(raw.replace("_", ""))
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}{key}: expected {typ}, got {raw!r}") from None


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, raw = body.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        if key not in _DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, lineno)
    env = os.environ if env is None else env
    if env.get("RA3C_SEED"):
        values["seed"] = _coerce("seed", env["RA3C_SEED"], None)
    return RunConfig(**values)


def load_config(path: str | Path, env: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), env)


def dump_config(config: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(config, f.name)}\n" for f in fields(RunConfig))


def describe_defaults() -> str:
    """One line per key with its default; used in ``--help``."""
    return "\n".join(f"  {f.name} = {f.default}" for f in fields(RunConfig))
