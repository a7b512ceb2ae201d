"""The 32 discrete control classes and stochastic action selection.

Class layout:

* 0..26   driving: index = 3*s + g, steering -1 + 0.25*s (s = 0..8), gas (0, 0.5, 1)[g]
* 27..30  hand brake with steering -1, -0.5, 0.5, 1
* 31      straight brake
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

NUM_ACTIONS = 32
STEERING_LEVELS = tuple(-1.0 + 0.25 * s for s in range(9))
GAS_LEVELS = (0.0, 0.5, 1.0)
HANDBRAKE_STEERING = (-1.0, -0.5, 0.5, 1.0)
BRAKE_CLASS = 31


@dataclass(frozen=True)
class ControlCommand:
    steering: float
    gas: float
    brake: int = 0
    handbrake: int = 0

    def __post_init__(self):
        if not -1.0 <= self.steering <= 1.0 or not 0.0 <= self.gas <= 1.0:
            raise ValueError(f"control out of range: {self}")
        if self.brake not in (0, 1) or self.handbrake not in (0, 1):
            raise ValueError("brake and handbrake are binary")
        if self.brake and self.handbrake:
            raise ValueError("brake and handbrake cannot both be engaged")


def class_to_control(index: int) -> ControlCommand:
    if not isinstance(index, (int, np.integer)) or not 0 <= index < NUM_ACTIONS:
        raise ValueError(f"action class must be in 0..{NUM_ACTIONS - 1}, got {index!r}")
    index = int(index)
    if index < 27:
        s, g = divmod(index, 3)
        return ControlCommand(STEERING_LEVELS[s], GAS_LEVELS[g])
    if index < 31:
        return ControlCommand(HANDBRAKE_STEERING[index - 27], 0.0, 0, 1)
    return ControlCommand(0.0, 0.0, 1, 0)


@lru_cache(maxsize=1)
def enumerate_table() -> tuple[tuple[int, ControlCommand], ...]:
    return tuple((i, class_to_control(i)) for i in range(NUM_ACTIONS))


def control_to_class(cmd: ControlCommand) -> int:
    for index, c in enumerate_table():
        if c == cmd:
            return index
    raise ValueError(f"{cmd} is not one of the {NUM_ACTIONS} control classes")


def sample_action(policy: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of a class index from a probability vector."""
    p = np.asarray(policy, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("policy must be a finite non-negative vector")
    total = p.sum()
    if abs(total - 1.0) > 1e-4:
        raise ValueError(f"policy sums to {total}, expected 1")
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    index = int(np.searchsorted(cdf, u, side="right"))
    # guard float round-off at the top end and skip zero-mass classes
    index = min(index, p.size - 1)
    while p[index] == 0.0 and index > 0:
        index -= 1
    return index
