"""CNN+LSTM actor-critic state encoders.

Two encoders share the same recurrent core and heads:

* ``ours``: three stride-1 convolutions, each followed by ReLU and 2x2 max
  pooling (trailing rows/columns are dropped when a map is odd), then FC.
* ``mnih``: conv 16@8x8/4 and conv 32@4x4/2 with ReLU, then FC.

The FC output goes through ReLU and, concatenated with the normalized speed
and the one-hot previous action, feeds one LSTM cell.  The policy logits and
the scalar value are the only unshared parameters.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import ops
from .autodiff.params import ParamSet
from .autodiff.tape import ShapeError, Tape, Tensor, backward_all

SPEED_NORM_KMH = 150.0


class EncoderVariant(enum.Enum):
    OURS = "ours"
    MNIH = "mnih"

    @classmethod
    def parse(cls, text: "str | EncoderVariant") -> "EncoderVariant":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"unknown encoder {text!r}; expected 'ours' or 'mnih'") from None


# (filters, kernel, stride, pool window) per convolution
CONV_STACKS = {
    EncoderVariant.OURS: ((32, 8, 1, 4), (32, 4, 1, 2), (64, 3, 1, 2)),
    EncoderVariant.MNIH: ((16, 8, 4, 1), (32, 4, 2, 1)),
}


@dataclass(frozen=True)
class NetConfig:
    variant: EncoderVariant = EncoderVariant.OURS
    input_shape: tuple[int, int, int] = (3, 84, 84)
    num_actions: int = 32
    lstm_size: int = 256
    fc_size: int = 256
    aux_inputs: bool = True

    def __post_init__(self):
        if self.num_actions < 2:
            raise ValueError("num_actions must be >= 2")
        if self.lstm_size < 1 or self.fc_size < 1:
            raise ValueError("layer sizes must be positive")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input shape must be (C, H, W), got {self.input_shape}")

    def feature_shape(self) -> tuple[int, int, int]:
        """Shape of the last conv block's output; raises if the input is too small."""
        c, h, w = self.input_shape
        for filters, k, stride, pool in CONV_STACKS[self.variant]:
            if h < k or w < k:
                raise ShapeError(f"{self.variant.value} encoder: {h}x{w} map is smaller than {k}x{k} kernel")
            h, w = ops.conv_output_size(h, k, stride), ops.conv_output_size(w, k, stride)
            if pool > 1:
                h, w = h // pool, w // pool
                if h < 1 or w < 1:
                    raise ShapeError(f"{self.variant.value} encoder: input {self.input_shape} too small to pool")
            c = filters
        return c, h, w

    @property
    def lstm_input_size(self) -> int:
        return self.fc_size + (1 + self.num_actions if self.aux_inputs else 0)

    def to_json(self) -> str:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["input_shape"] = list(self.input_shape)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        d = json.loads(text)
        d["variant"] = EncoderVariant.parse(d["variant"])
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


class Hidden(NamedTuple):
    h: np.ndarray
    c: np.ndarray


class NetOutput(NamedTuple):
    policy: np.ndarray
    value: float
    hidden: Hidden
    logits: Tensor
    value_node: Tensor
    h_node: Tensor
    c_node: Tensor


def initial_hidden(config: NetConfig, dtype=np.float32) -> Hidden:
    return Hidden(np.zeros(config.lstm_size, dtype=dtype), np.zeros(config.lstm_size, dtype=dtype))


def param_layout(config: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    layout: list[tuple[str, tuple[int, ...]]] = []
    c = config.input_shape[0]
    for i, (filters, k, _, _) in enumerate(CONV_STACKS[config.variant], start=1):
        layout += [(f"conv{i}.w", (filters, c, k, k)), (f"conv{i}.b", (filters,))]
        c = filters
    flat = int(np.prod(config.feature_shape()))
    M = config.lstm_size
    layout += [
        ("fc.w", (config.fc_size, flat)), ("fc.b", (config.fc_size,)),
        ("lstm.w_ih", (4 * M, config.lstm_input_size)), ("lstm.w_hh", (4 * M, M)), ("lstm.b", (4 * M,)),
        ("policy.w", (config.num_actions, M)), ("policy.b", (config.num_actions,)),
        ("value.w", (1, M)), ("value.b", (1,)),
    ]
    return layout


HEAD_SEGMENTS = {"policy": ("policy.w", "policy.b"), "value": ("value.w", "value.b")}


def build(config: NetConfig, seed: int) -> tuple[ParamSet, Hidden]:
    """Initialize weights uniformly in +-1/sqrt(fan_in); biases zero, forget-gate bias one."""
    rng = np.random.default_rng(seed)
    segments: dict[str, np.ndarray] = {}
    layout = param_layout(config)
    fan_ins = {}
    for name, shape in layout:
        if name.endswith(".w") or name.endswith("w_ih") or name.endswith("w_hh"):
            fan_ins[name] = int(np.prod(shape[1:]))
    M = config.lstm_size
    for name, shape in layout:
        if name in fan_ins:
            bound = 1.0 / np.sqrt(fan_ins[name])
            arr = rng.uniform(-bound, bound, size=shape)
        else:
            arr = np.zeros(shape)
            if name == "lstm.b":
                arr[M:2 * M] = 1.0
        segments[name] = arr.astype(np.float32)
    return ParamSet(segments), initial_hidden(config)


def encode_aux(config: NetConfig, speed_ms: float, prev_action: int | None, dtype=np.float32) -> np.ndarray:
    aux = np.zeros(1 + config.num_actions, dtype=dtype)
    aux[0] = speed_ms * 3.6 / SPEED_NORM_KMH
    if prev_action is not None and prev_action >= 0:
        aux[1 + int(prev_action)] = 1.0
    return aux


def _weights(params: ParamSet | dict[str, Tensor], tape: Tape | None) -> dict[str, Tensor]:
    if isinstance(params, dict):
        return params
    if tape is not None and tape.record:
        return tape.watch(params)
    return {k: Tensor(v) for k, v in params.segments.items()}


def check_frame(config: NetConfig, frame: np.ndarray) -> None:
    if frame.shape != tuple(config.input_shape):
        raise ShapeError(f"frame shape {frame.shape} does not match configured input {config.input_shape}")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite pixels")


def encode_frame(config: NetConfig, w: dict[str, Tensor], frame: Tensor) -> Tensor:
    x = frame
    for i, (_, _, stride, pool) in enumerate(CONV_STACKS[config.variant], start=1):
        x = ops.relu(ops.conv2d(x, w[f"conv{i}.w"], w[f"conv{i}.b"], stride))
        if pool > 1:
            _, h, wd = x.shape
            x = ops.maxpool2d(ops.crop(x, h - h % pool, wd - wd % pool), pool)
    return ops.relu(ops.linear(ops.flatten(x), w["fc.w"], w["fc.b"]))


def forward(config: NetConfig, params: ParamSet | dict[str, Tensor], frame: np.ndarray | Tensor,
            speed_ms: float, prev_action: int | None, hidden: Hidden | tuple[Tensor, Tensor],
            tape: Tape | None = None) -> NetOutput:
    """Run one step of the encoder, LSTM and heads.

    ``tape=None`` is inference mode.  With a recording tape the parameters are
    watched on first use (or pass the dict returned by ``tape.watch``) and the
    returned nodes can be fed into a loss.
    """
    w = _weights(params, tape)
    dtype = w["fc.w"].data.dtype
    if isinstance(frame, Tensor):
        check_frame(config, frame.data)
        x = frame
    else:
        check_frame(config, frame)
        x = Tensor(np.asarray(frame, dtype=dtype))
    feat = encode_frame(config, w, x)
    if config.aux_inputs:
        feat = ops.concat([feat, Tensor(encode_aux(config, speed_ms, prev_action, dtype))])
    h0, c0 = hidden
    h0 = h0 if isinstance(h0, Tensor) else Tensor(np.asarray(h0, dtype=dtype))
    c0 = c0 if isinstance(c0, Tensor) else Tensor(np.asarray(c0, dtype=dtype))
    h, c = ops.lstm_step(feat, h0, c0, w["lstm.w_ih"], w["lstm.w_hh"], w["lstm.b"])
    logits = ops.linear(h, w["policy.w"], w["policy.b"])
    value = ops.linear(h, w["value.w"], w["value.b"])
    policy = ops.softmax_array(logits.data)
    v = float(value.data[0])
    if not np.isfinite(v):
        raise FloatingPointError("value head produced a non-finite estimate")
    return NetOutput(policy, v, Hidden(h.data, c.data), logits, value, h, c)


def guided_backprop(config: NetConfig, params: ParamSet, frame: np.ndarray, speed_ms: float,
                    prev_action: int | None, hidden: Hidden, action: int) -> np.ndarray:
    """Per-pixel saliency [H, W] for the chosen class's pre-softmax logit.

    Every ReLU passes gradient only where both the forward activation and the
    incoming gradient are positive; the result is the channel-wise max of the
    positive part of the input gradient.
    """
    if not 0 <= action < config.num_actions:
        raise ValueError(f"action {action} outside 0..{config.num_actions - 1}")
    tape = Tape(record=True, guided=True)
    x = tape.leaf(np.asarray(frame, dtype=np.float32), "frame")
    out = forward(config, params, x, speed_ms, prev_action, hidden, tape)
    logit = ops.take(out.logits, action)
    grads = backward_all(tape, logit)
    g = grads[x.index]
    if g is None:
        g = np.zeros_like(x.data)
    return np.maximum(g, 0.0).max(axis=0)
