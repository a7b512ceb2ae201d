"""Schematic front-camera rasterizer.

Every pixel below the horizon is cast onto the flat ground plane through a
pinhole camera mounted on the car; the hit point is classified as road,
guard rail or off-road ground by its distance to the centerline.  Colors come
from a per-track palette (season/location) and fade into the sky color with
distance.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .physics import CarState
from .track import Track

# (sky, ground, road, rail) as 8-bit RGB
PALETTES = (
    ((150, 190, 235), (70, 120, 45), (95, 95, 100), (230, 230, 220)),     # summer forest
    ((200, 210, 225), (235, 238, 245), (120, 125, 140), (200, 40, 40)),  # snow
    ((175, 205, 240), (200, 170, 110), (150, 120, 90), (240, 240, 240)),  # dry gravel
    ((120, 170, 220), (90, 140, 80), (70, 70, 75), (250, 210, 60)),      # coast
)


@dataclass(frozen=True)
class RenderConfig:
    height: int = 84
    width: int = 84
    fov_deg: float = 100.0
    camera_height: float = 2.5
    horizon: float = 0.3
    max_distance: float = 150.0
    rail_width: float = 0.35
    fog: float = 0.45


@lru_cache(maxsize=16)
def _ground_grid(cfg: RenderConfig):
    """Camera-frame ground coordinates (forward, right) for every pixel below the horizon."""
    focal = 0.5 * cfg.width / np.tan(np.radians(0.5 * cfg.fov_deg))
    rows = np.arange(cfg.height) + 0.5 - cfg.horizon * cfg.height
    cols = np.arange(cfg.width) + 0.5 - 0.5 * cfg.width
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    with np.errstate(divide="ignore"):
        forward = np.where(rr > 0, cfg.camera_height * focal / np.where(rr > 0, rr, 1.0), np.inf)
    ground = forward <= cfg.max_distance
    fwd = forward[ground]
    right = cc[ground] * fwd / focal
    footprint = fwd / focal
    return ground, fwd, right, footprint


def palette_for(track: Track, jitter: np.random.Generator | None = None) -> np.ndarray:
    pal = np.asarray(PALETTES[int(track.seed) % len(PALETTES)], dtype=np.float64)
    if jitter is not None:
        pal = np.clip(pal * jitter.uniform(0.9, 1.1, size=(4, 1)), 0, 255)
    return pal


SKY, GROUND, ROAD, RAIL = 0, 1, 2, 3


def _classify(state: CarState, track: Track, cfg: RenderConfig):
    ground, fwd, right, footprint = _ground_grid(cfg)
    c, s = np.cos(state.heading), np.sin(state.heading)
    px = state.x + fwd * c + right * s
    py = state.y + fwd * s - right * c
    dist, width = track.distance_to_centerline(px, py)
    half = 0.5 * width
    band = np.maximum(cfg.rail_width, 0.6 * footprint)
    cls = np.where(dist < half - 0.5 * band, ROAD, GROUND)
    cls = np.where(np.abs(dist - half) <= 0.5 * band, RAIL, cls)
    return ground, fwd, cls


def render_labels(state: CarState, track: Track, cfg: RenderConfig) -> np.ndarray:
    """[H, W] class map: 0 sky, 1 off-road ground, 2 road, 3 guard rail."""
    ground, _, cls = _classify(state, track, cfg)
    labels = np.full((cfg.height, cfg.width), SKY, dtype=np.int8)
    labels[ground] = cls
    return labels


def render_frontview_u8(state: CarState, track: Track, cfg: RenderConfig,
                        palette: np.ndarray | None = None) -> np.ndarray:
    """Render an [H, W, 3] uint8 image."""
    pal = palette_for(track) if palette is None else palette
    sky = pal[SKY]
    img = np.empty((cfg.height, cfg.width, 3), dtype=np.float64)
    img[:] = sky
    ground, fwd, cls = _classify(state, track, cfg)
    colors = pal[cls]
    fade = (cfg.fog * fwd / cfg.max_distance)[:, None]
    img[ground] = (1.0 - fade) * colors + fade * sky
    return np.rint(img).astype(np.uint8)


def frame_to_float(frame_u8: np.ndarray) -> np.ndarray:
    """[H, W, 3] uint8 -> [3, H, W] float32 in [0, 1]."""
    return np.ascontiguousarray(frame_u8.transpose(2, 0, 1), dtype=np.float32) / np.float32(255.0)


def render_frontview(state: CarState, track: Track, cfg: RenderConfig, palette: np.ndarray | None = None) -> np.ndarray:
    """Render a [3, H, W] float32 frame with values in [0, 1]."""
    return frame_to_float(render_frontview_u8(state, track, cfg, palette))
