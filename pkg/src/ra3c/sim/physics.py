"""Kinematic bicycle car with an adherence-limited friction circle.

The car keeps two directions: its body heading and the direction its velocity
points (the path).  Their difference is the slip angle.  While the tires have
grip both directions follow the kinematic bicycle yaw rate; once the lateral
demand exceeds ``mu * g * (1 + k_e * e)`` the path turns at the grip limit and
the body drifts away from it.  The hand brake cuts rear adherence, which both
lowers the limit and lets the body over-rotate into a drift.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..actions import ControlCommand
from .track import Track

GRAVITY = 9.81


@dataclass(frozen=True)
class CarParams:
    engine_accel: float = 6.0         # A, m/s^2 at full gas
    linear_drag: float = 0.06         # B, 1/s
    quadratic_drag: float = 0.0015    # C, 1/m
    brake_decel: float = 12.0         # D, m/s^2
    max_steer_deg: float = 35.0
    wheelbase: float = 2.6
    handbrake_rear_grip: float = 0.35  # rho
    handbrake_yaw_gain: float = 1.8
    superelevation_gain: float = 1.0   # k_e
    max_speed: float = 55.0
    slip_relax: float = 0.25           # s, slip-angle recovery time constant
    understeer_share: float = 0.3      # fraction of excess yaw demand the body still takes without hand brake
    max_slip: float = 1.2              # rad
    slide_scrub: float = 0.5           # fraction of mu*g lost to sideways sliding per unit sin(slip)
    hit_speed_factor: float = 0.6
    stall_time: float = 5.0
    stall_distance: float = 1.0
    wrong_way_time: float = 2.0
    offroad_margin: float = 3.0
    dt: float = 1.0 / 30.0

    def jittered(self, rng: np.random.Generator, amount: float = 0.02) -> "CarParams":
        keys = ("engine_accel", "linear_drag", "quadratic_drag", "brake_decel", "handbrake_rear_grip")
        return replace(self, **{k: getattr(self, k) * float(1.0 + rng.uniform(-amount, amount)) for k in keys})


class CrashReason(enum.Enum):
    STALLED = "stalled"
    WRONG_WAY = "wrong_way"
    OFF_ROAD = "off_road"


CRASH_CODES = {None: 0, CrashReason.STALLED: 1, CrashReason.WRONG_WAY: 2, CrashReason.OFF_ROAD: 3}


@dataclass(frozen=True)
class StepEvents:
    hit: bool = False
    crash: bool = False
    crash_reason: Optional[CrashReason] = None
    checkpoint: Optional[int] = None
    finished: bool = False

    @property
    def terminal(self) -> bool:
        return self.crash or self.finished


@dataclass(frozen=True)
class CarState:
    x: float
    y: float
    heading: float
    speed: float
    slip_angle: float
    s: float
    d: float
    time: float = 0.0
    in_contact: bool = False
    wrong_way_time: float = 0.0
    progress_log: tuple = field(default=(), repr=False)
    terminal: bool = False

    @property
    def slip(self) -> float:
        """Lateral velocity in the body frame (m/s), positive towards the right."""
        return self.speed * math.sin(self.slip_angle)


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def heading_error(state: CarState, track: Track) -> float:
    return wrap_angle(state.heading - track.tangent_at(state.s))


def spawn(track: Track, checkpoint: int) -> CarState:
    cps = track.checkpoints
    if not isinstance(checkpoint, (int, np.integer)) or not 0 <= checkpoint < len(cps):
        raise ValueError(f"checkpoint {checkpoint!r} outside 0..{len(cps) - 1}")
    s = cps[int(checkpoint)]
    x, y = track.point_at(s, 0.0)
    return CarState(x, y, track.tangent_at(s), 0.0, 0.0, s, 0.0, progress_log=(s,))


def physics_step(state: CarState, cmd: ControlCommand, track: Track, dt: float | None = None,
                 params: CarParams = CarParams()) -> tuple[CarState, StepEvents]:
    """Advance the car by one tick; rejects terminal or non-finite states."""
    dt = params.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.terminal:
        raise RuntimeError("episode is over; respawn before stepping")
    if not all(math.isfinite(v) for v in (state.x, state.y, state.heading, state.speed, state.slip_angle, state.s, state.d)):
        raise ValueError("non-finite car state")

    mu = track.mu_at(state.s)
    e = track.e_at(state.s)
    v = state.speed
    beta = state.slip_angle
    handbrake = bool(cmd.handbrake)

    accel = (params.engine_accel * cmd.gas - params.linear_drag * v - params.quadratic_drag * v * v
             - (params.brake_decel * cmd.brake if v > 0 else 0.0))
    accel -= params.slide_scrub * mu * GRAVITY * abs(math.sin(beta)) if v > 0 else 0.0
    v_new = min(max(v + accel * dt, 0.0), params.max_speed)

    grip = mu * GRAVITY * (1.0 + params.superelevation_gain * e)
    if handbrake:
        grip *= 0.5 * (1.0 + params.handbrake_rear_grip)
    delta = -math.radians(params.max_steer_deg) * cmd.steering  # positive steering turns right (clockwise)
    yaw_cmd = v_new * math.tan(delta) / params.wheelbase
    limit = grip / max(v_new, 0.1)
    yaw_path = min(max(yaw_cmd + beta / params.slip_relax, -limit), limit)
    body_target = yaw_cmd * params.handbrake_yaw_gain if handbrake else yaw_cmd
    share = 1.0 if handbrake else params.understeer_share
    yaw_body = yaw_path + share * (body_target - yaw_path) - beta / params.slip_relax

    heading = state.heading + yaw_body * dt
    path_dir = state.heading - beta + yaw_path * dt
    beta_new = min(max(wrap_angle(heading - path_dir), -params.max_slip), params.max_slip)
    if v_new == 0.0:
        beta_new = 0.0
    path_dir = heading - beta_new

    x = state.x + v_new * math.cos(path_dir) * dt
    y = state.y + v_new * math.sin(path_dir) * dt
    s, d_raw = track.project(x, y, state.s)

    half = 0.5 * track.width_at(s)
    hit = False
    crash_reason: Optional[CrashReason] = None
    in_contact = False
    d = d_raw
    if abs(d_raw) > half + params.offroad_margin:
        crash_reason = CrashReason.OFF_ROAD
    if abs(d_raw) > half:
        d = math.copysign(half, d_raw)
        in_contact = True
        if not state.in_contact:
            hit = True
            v_new *= params.hit_speed_factor
    x, y = track.point_at(s, d)

    time = state.time + dt
    alpha = wrap_angle(heading - track.tangent_at(s))
    wrong = state.wrong_way_time + dt if math.cos(alpha) < 0 else 0.0
    window = max(int(round(params.stall_time / dt)), 1)
    log = (state.progress_log + (s,))[-(window + 1):]
    if crash_reason is None:
        if wrong >= params.wrong_way_time - 1e-9:
            crash_reason = CrashReason.WRONG_WAY
        elif len(log) == window + 1 and log[-1] - log[0] < params.stall_distance:
            crash_reason = CrashReason.STALLED

    checkpoint = None
    for k, cs in enumerate(track.checkpoints):
        if state.s < cs <= s:
            checkpoint = k
    finished = crash_reason is None and s >= track.length - 0.5
    events = StepEvents(hit, crash_reason is not None, crash_reason, checkpoint, finished)
    new_state = CarState(x, y, heading, v_new, beta_new, s, d, time, in_contact, wrong, log, events.terminal)
    return new_state, events
