"""A single-car episode wrapper: spawn, step with a control class, render, observe."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..actions import ControlCommand, class_to_control
from ..reward import FrameSignal
from .physics import CarParams, CarState, StepEvents, heading_error, physics_step, spawn
from .render import RenderConfig, frame_to_float, palette_for, render_frontview_u8
from .track import Track


def frame_signal(state: CarState, track: Track) -> FrameSignal:
    return FrameSignal(v=state.speed, alpha=heading_error(state, track), d=state.d, road_width=track.width_at(state.s))


@dataclass
class Observation:
    frame_u8: np.ndarray            # [H, W, 3]
    speed: float
    prev_action: Optional[int]
    signal: FrameSignal
    progress: float
    s: float
    events: StepEvents = field(default_factory=StepEvents)
    episode: int = 0
    step: int = 0

    @property
    def frame(self) -> np.ndarray:
        return frame_to_float(self.frame_u8)


class Env:
    """Lockstep simulator for one car on one track.

    ``jitter_seed`` turns on per-episode palette and physics-constant jitter.
    """

    def __init__(self, track: Track, render: RenderConfig = RenderConfig(), car: CarParams = CarParams(),
                 jitter_seed: int | None = None):
        self.track = track
        self.render_cfg = render
        self.base_car = car
        self.car = car
        self.jitter_seed = jitter_seed
        self.palette = palette_for(track)
        self.state: CarState | None = None
        self.episode = 0
        self.steps = 0
        self.prev_action: Optional[int] = None

    @property
    def num_checkpoints(self) -> int:
        return len(self.track.checkpoints)

    def _observe(self, events: StepEvents) -> Observation:
        st = self.state
        return Observation(
            frame_u8=render_frontview_u8(st, self.track, self.render_cfg, self.palette),
            speed=st.speed,
            prev_action=self.prev_action,
            signal=frame_signal(st, self.track),
            progress=st.s / self.track.length,
            s=st.s,
            events=events,
            episode=self.episode,
            step=self.steps,
        )

    def reset(self, checkpoint: int = 0) -> Observation:
        self.state = spawn(self.track, checkpoint)
        self.episode += 1
        self.steps = 0
        self.prev_action = None
        if self.jitter_seed is not None:
            rng = np.random.default_rng([self.jitter_seed, self.episode])
            self.car = self.base_car.jittered(rng)
            self.palette = palette_for(self.track, rng)
        return self._observe(StepEvents())

    @property
    def done(self) -> bool:
        return self.state is None or self.state.terminal

    def step(self, action: int | ControlCommand, override: ControlCommand | None = None) -> Observation:
        """Apply one control for 1/30 s.  ``override`` replaces the command but keeps ``action`` as history."""
        if self.state is None:
            raise RuntimeError("reset the environment before stepping")
        if self.state.terminal:
            raise RuntimeError("episode is over; reset before stepping")
        if isinstance(action, ControlCommand):
            cmd = action
            self.prev_action = None
        else:
            cmd = class_to_control(action)
            self.prev_action = int(action)
        if override is not None:
            cmd = override
        self.state, events = physics_step(self.state, cmd, self.track, params=self.car)
        self.steps += 1
        return self._observe(events)

    @property
    def speed_kmh(self) -> float:
        return 0.0 if self.state is None else self.state.speed * 3.6

