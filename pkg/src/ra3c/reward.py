"""Per-frame driving rewards and discounted returns."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence


class RewardKind(enum.Enum):
    ANGLE_ONLY = "angle_only"
    CENTER = "center"
    MARGIN = "margin"
    SIGMOID = "sigmoid"

    @classmethod
    def parse(cls, text: "str | RewardKind") -> "RewardKind":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown reward kind {text!r}; expected one of {names}") from None


@dataclass(frozen=True)
class FrameSignal:
    """Speed (m/s), heading error (rad), signed lateral offset (m), road width (m)."""

    v: float
    alpha: float
    d: float
    road_width: float

    def validate(self) -> None:
        if not all(math.isfinite(x) for x in (self.v, self.alpha, self.d, self.road_width)):
            raise ValueError(f"non-finite frame signal: {self}")
        if self.road_width <= 0:
            raise ValueError("road width must be positive")
        if not -math.pi - 1e-6 <= self.alpha <= math.pi + 1e-6:  # slack for float32 transport
            raise ValueError(f"alpha {self.alpha} outside [-pi, pi]")


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def compute_reward(kind: RewardKind, s: FrameSignal) -> float:
    s.validate()
    heading = math.cos(s.alpha)
    dist = abs(s.d)
    half = 0.5 * s.road_width
    if kind is RewardKind.ANGLE_ONLY:
        return s.v * heading
    if kind is RewardKind.CENTER:
        # offset in half-road-width units: 0 on the centre line, 1 at the edge
        return s.v * (heading - dist / half)
    if kind is RewardKind.MARGIN:
        return s.v * (heading - max(dist - half, 0.0))
    if kind is RewardKind.SIGMOID:
        return s.v * (heading - _logistic(4.0 * (dist - half)))
    raise ValueError(f"unknown reward kind {kind!r}")


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    total = 0.0
    for r in reversed(rewards):
        total = r + gamma * total
    return total
