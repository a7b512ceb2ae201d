from .env import Env, Observation, frame_signal
from .physics import CarParams, CarState, CrashReason, StepEvents, heading_error, physics_step, spawn, wrap_angle
from .render import RenderConfig, render_frontview, render_frontview_u8
from .track import Track, TrackError, TrackPoint, arc_track, generate_track, straight_track

__all__ = [
    "CarParams", "CarState", "CrashReason", "Env", "Observation", "RenderConfig", "StepEvents", "Track",
    "TrackError", "TrackPoint", "arc_track", "frame_signal", "generate_track", "heading_error", "physics_step",
    "render_frontview", "render_frontview_u8", "spawn", "straight_track", "wrap_angle",
]
