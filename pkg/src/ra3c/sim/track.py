"""Rally stage geometry: a sampled centerline with per-point road attributes.

Lateral offsets are signed with positive values to the right of the driving
direction, so a car displaced to the left has ``d < 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER = "track-v1"
DEFAULT_CHECKPOINT_SPACING = 200.0
POINT_SPACING = 1.0
MAX_POINT_SPACING = 2.0
HAIRPIN_CURVATURE = 1.0 / 15.0


class TrackError(ValueError):
    pass


@dataclass(frozen=True)
class TrackPoint:
    s: float
    x: float
    y: float
    width: float
    kappa: float
    e: float
    mu: float


@dataclass(eq=False)
class Track:
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    width: np.ndarray
    kappa: np.ndarray
    e: np.ndarray
    mu: np.ndarray
    checkpoint_spacing: float = DEFAULT_CHECKPOINT_SPACING
    seed: int = 0
    _tree: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.float64) for a in (self.s, self.x, self.y, self.width, self.kappa, self.e, self.mu)]
        self.s, self.x, self.y, self.width, self.kappa, self.e, self.mu = arrays
        n = self.s.size
        if n < 2 or any(a.size != n for a in arrays):
            raise TrackError("track needs at least two points with matching attribute arrays")
        ds = np.diff(self.s)
        if np.any(ds <= 0) or np.any(ds > MAX_POINT_SPACING + 1e-9):
            raise TrackError("arclength must increase with spacing at most 2 m")
        if np.any(self.width < 3) or np.any(self.width > 12):
            raise TrackError("road width must lie in [3, 12] m")
        if np.any(self.mu <= 0) or np.any(self.mu > 1):
            raise TrackError("adherence must lie in (0, 1]")
        if np.any(np.abs(self.e) > 0.12):
            raise TrackError("superelevation must satisfy |e| <= 0.12")
        if self.checkpoint_spacing <= 0:
            raise TrackError("checkpoint spacing must be positive")
        count = int(math.floor(self.length / self.checkpoint_spacing - 1e-9)) + 1
        self._checkpoints = [k * float(self.checkpoint_spacing) for k in range(count)]
        if count < 2:
            raise TrackError("track needs at least two checkpoints")
        seg = np.stack([np.diff(self.x), np.diff(self.y)], axis=1)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise TrackError("consecutive points coincide")
        self._seg_dir = seg / seg_len[:, None]
        self._seg_len = seg_len
        # right-hand normal of each segment
        self._seg_normal = np.stack([self._seg_dir[:, 1], -self._seg_dir[:, 0]], axis=1)
        prev = np.concatenate([[0], np.arange(n - 1)])
        nxt = np.concatenate([np.arange(1, n), [n - 1]])
        heading = np.arctan2(self.y[nxt] - self.y[prev], self.x[nxt] - self.x[prev])
        self._heading = np.unwrap(heading)

    # -- geometry -------------------------------------------------------
    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def checkpoints(self) -> list[float]:
        return self._checkpoints

    @property
    def num_points(self) -> int:
        return int(self.s.size)

    def point(self, i: int) -> TrackPoint:
        return TrackPoint(*(float(a[i]) for a in (self.s, self.x, self.y, self.width, self.kappa, self.e, self.mu)))

    def segment_index(self, s: float) -> int:
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        return min(max(i, 0), self.s.size - 2)

    def _interp(self, arr: np.ndarray, s: float) -> float:
        return float(np.interp(s, self.s, arr))

    def width_at(self, s: float) -> float:
        return self._interp(self.width, s)

    def mu_at(self, s: float) -> float:
        return self._interp(self.mu, s)

    def e_at(self, s: float) -> float:
        return self._interp(self.e, s)

    def kappa_at(self, s: float) -> float:
        return self._interp(self.kappa, s)

    def tangent_at(self, s: float) -> float:
        return self._interp(self._heading, s)

    def point_at(self, s: float, d: float = 0.0) -> tuple[float, float]:
        """World position of arclength ``s`` shifted ``d`` meters to the right."""
        i = self.segment_index(s)
        t = s - self.s[i]
        frac = t / (self.s[i + 1] - self.s[i])
        px = self.x[i] + frac * (self.x[i + 1] - self.x[i])
        py = self.y[i] + frac * (self.y[i + 1] - self.y[i])
        nx, ny = self._seg_normal[i]
        return float(px + d * nx), float(py + d * ny)

    def project(self, x: float, y: float, s_hint: float | None = None, window: float = 25.0) -> tuple[float, float]:
        """Closest-point projection onto the centerline, searched near ``s_hint``."""
        if s_hint is None:
            lo, hi = 0, self.s.size - 1
        else:
            lo = max(int(np.searchsorted(self.s, s_hint - window)) - 1, 0)
            hi = min(int(np.searchsorted(self.s, s_hint + window)) + 1, self.s.size - 1)
        x0, y0 = self.x[lo:hi], self.y[lo:hi]
        dirs = self._seg_dir[lo:hi]
        lens = self._seg_len[lo:hi]
        rx, ry = x - x0, y - y0
        t = np.clip(rx * dirs[:, 0] + ry * dirs[:, 1], 0.0, lens)
        qx, qy = x0 + t * dirs[:, 0], y0 + t * dirs[:, 1]
        dist2 = (x - qx) ** 2 + (y - qy) ** 2
        k = int(np.argmin(dist2))
        i = lo + k
        s = float(self.s[i] + t[k] / lens[k] * (self.s[i + 1] - self.s[i]))
        nx, ny = self._seg_normal[i]
        d = float((x - qx[k]) * nx + (y - qy[k]) * ny)
        return s, d

    def tree(self):
        if self._tree is None:
            from scipy.spatial import cKDTree
            self._tree = cKDTree(np.stack([self.x, self.y], axis=1))
        return self._tree

    def distance_to_centerline(self, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unsigned distance of many points to the centerline, plus the local road width."""
        _, idx = self.tree().query(np.stack([px, py], axis=-1))
        best = np.full(px.shape, np.inf)
        for seg in (np.maximum(idx - 1, 0), np.minimum(idx, self.s.size - 2)):
            dirs = self._seg_dir[seg]
            rx, ry = px - self.x[seg], py - self.y[seg]
            t = np.clip(rx * dirs[..., 0] + ry * dirs[..., 1], 0.0, self._seg_len[seg])
            dist = np.hypot(rx - t * dirs[..., 0], ry - t * dirs[..., 1])
            best = np.minimum(best, dist)
        return best, self.width[idx]

    # -- serialization ----------------------------------------------------
    def to_text(self) -> str:
        lines = [f"{HEADER} {self.length!r} {float(self.checkpoint_spacing)!r} {int(self.seed)}"]
        for row in zip(self.s, self.x, self.y, self.width, self.kappa, self.e, self.mu):
            lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Track":
        rows = text.strip().splitlines()
        if not rows:
            raise TrackError("empty track file")
        head = rows[0].split()
        if len(head) != 4 or head[0] != HEADER:
            raise TrackError(f"bad track header: {rows[0]!r}")
        try:
            length, spacing, seed = float(head[1]), float(head[2]), int(head[3])
            data = np.array([[float(v) for v in r.split()] for r in rows[1:]], dtype=np.float64)
        except ValueError as exc:
            raise TrackError(f"malformed track file: {exc}") from exc
        if data.ndim != 2 or data.shape[1] != 7:
            raise TrackError("each track point needs 7 values: s x y r_w kappa e mu")
        track = cls(*data.T, checkpoint_spacing=spacing, seed=seed)
        if track.length != length:
            raise TrackError(f"header length {length} disagrees with last point {track.length}")
        return track

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "Track":
        return cls.from_text(Path(path).read_text())


# -- construction -----------------------------------------------------------

def _integrate(kappa: np.ndarray, ds: np.ndarray, heading0: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    heading = np.concatenate([[heading0], heading0 + np.cumsum(0.5 * (kappa[1:] + kappa[:-1]) * ds)])
    mid = 0.5 * (heading[1:] + heading[:-1])
    x = np.concatenate([[0.0], np.cumsum(ds * np.cos(mid))])
    y = np.concatenate([[0.0], np.cumsum(ds * np.sin(mid))])
    return x, y, heading


def _arclength(length: float) -> np.ndarray:
    s = np.arange(0.0, length, POINT_SPACING)
    if length - s[-1] < 0.25 * POINT_SPACING and s.size > 1:
        s = s[:-1]
    return np.append(s, length)


def _checkpoint_spacing(length: float, spacing: float) -> float:
    return spacing if length / spacing > 1.0 + 1e-9 else length / 2.0


def straight_track(length: float = 600.0, width: float = 8.0, mu: float = 1.0,
                   checkpoint_spacing: float = DEFAULT_CHECKPOINT_SPACING, seed: int = 0) -> Track:
    s = _arclength(length)
    zeros = np.zeros_like(s)
    return Track(s, s.copy(), zeros, np.full_like(s, width), zeros, zeros.copy(), np.full_like(s, mu),
                 checkpoint_spacing=_checkpoint_spacing(length, checkpoint_spacing), seed=seed)


def arc_track(radius: float, length: float = 600.0, width: float = 8.0, lead_in: float = 30.0,
              mu: float = 1.0, e: float = 0.0, seed: int = 0) -> Track:
    """A straight lead-in followed by a constant-curvature left turn (negative radius turns right)."""
    s = _arclength(length)
    kappa = np.where(s < lead_in, 0.0, 1.0 / radius)
    x, y, _ = _integrate(kappa, np.diff(s))
    return Track(s, x, y, np.full_like(s, width), kappa, np.where(s < lead_in, 0.0, e), np.full_like(s, mu),
                 checkpoint_spacing=_checkpoint_spacing(length, DEFAULT_CHECKPOINT_SPACING), seed=seed)


def superelevation_for(kappa: np.ndarray) -> np.ndarray:
    return np.minimum(0.12, 6.0 * np.abs(kappa))


def min_radius_for(difficulty: float) -> float:
    """Tightest curve radius: 200 m when easy down to 12 m (hairpins) when hard."""
    return 200.0 * (12.0 / 200.0) ** difficulty


def base_width_for(difficulty: float) -> float:
    return 10.0 - 3.0 * difficulty


def _profile(rng: np.random.Generator, length: float, difficulty: float, min_radius: float,
             hairpin_at: float | None) -> list[tuple[float, float, float]]:
    """Curvature pieces (length, kappa_start, kappa_end) covering ``length`` meters."""
    pieces: list[tuple[float, float, float]] = [(60.0, 0.0, 0.0)]
    total = 60.0
    heading = 0.0
    kmax = 1.0 / min_radius
    placed_hairpin = hairpin_at is None
    while total < length:
        straight = float(rng.uniform(40.0, 160.0) * (1.2 - 0.6 * difficulty))
        if not placed_hairpin and total + straight >= hairpin_at:
            straight = max(hairpin_at - total, 10.0)
        pieces.append((straight, 0.0, 0.0))
        total += straight
        hairpin = not placed_hairpin and total >= hairpin_at
        if hairpin:
            placed_hairpin = True
            kappa = kmax
            turn = float(rng.uniform(0.9, 1.0) * math.pi)
        else:
            kappa = float(rng.uniform(0.25, 1.0) ** 2 * (kmax - 1.0 / 400.0) + 1.0 / 400.0)
            if difficulty < 0.75:
                kappa = min(kappa, kmax)
            turn = float(rng.uniform(math.radians(15), math.radians(100)))
        toward_zero = -1.0 if heading > 0 else 1.0
        lean = min(1.0, abs(heading) / (math.pi / 2))
        sign = toward_zero if (abs(heading) > math.pi / 2 or rng.random() < 0.5 + 0.45 * lean) else -toward_zero
        if hairpin:
            sign = toward_zero if abs(heading) > 0.3 else (1.0 if rng.random() < 0.5 else -1.0)
        ramp = min(max(15.0, 0.25 * turn / kappa), 0.5 * turn / kappa)
        arc = max(turn / kappa - ramp, 0.0)
        k = sign * kappa
        pieces += [(ramp, 0.0, k), (arc, k, k), (ramp, k, 0.0)]
        total += 2 * ramp + arc
        heading += sign * (kappa * ramp + kappa * arc)
    return pieces


def _sample_profile(pieces: list[tuple[float, float, float]], s: np.ndarray) -> np.ndarray:
    starts = np.cumsum([0.0] + [p[0] for p in pieces])
    kappa = np.zeros_like(s)
    idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(pieces) - 1)
    for j, (ln, k0, k1) in enumerate(pieces):
        m = idx == j
        if ln > 0:
            kappa[m] = k0 + (k1 - k0) * np.clip((s[m] - starts[j]) / ln, 0.0, 1.0)
    return kappa


def _self_intersects(x: np.ndarray, y: np.ndarray, s: np.ndarray, width: np.ndarray) -> bool:
    from scipy.spatial import cKDTree
    pts = np.stack([x, y], axis=1)
    reach = float(width.max()) + 4.0
    pairs = cKDTree(pts).query_pairs(reach, output_type="ndarray")
    if pairs.size == 0:
        return False
    i, j = pairs[:, 0], pairs[:, 1]
    far_along = np.abs(s[i] - s[j]) > 3.0 * reach + 20.0
    gap = np.hypot(x[i] - x[j], y[i] - y[j])
    return bool(np.any(far_along & (gap < 0.5 * (width[i] + width[j]) + 4.0)))


def generate_track(seed: int, length: float, difficulty: float, *, road_width: float | None = None,
                   checkpoint_spacing: float = DEFAULT_CHECKPOINT_SPACING, hairpin_at: float | None = None,
                   max_attempts: int = 64) -> Track:
    """Procedural stage built from straights and clothoid-ramped arcs.

    Curvature, adherence and width all tighten with ``difficulty``.  From
    difficulty 0.75 upward a hairpin (curvature >= 1/15 per meter) is always
    inserted, at fraction ``hairpin_at`` of the stage (default one third).
    """
    if length < 200:
        raise TrackError("track length must be at least 200 m")
    if not 0.0 <= difficulty <= 1.0:
        raise TrackError("difficulty must lie in [0, 1]")
    width = base_width_for(difficulty) if road_width is None else float(road_width)
    if not 3.0 <= width <= 12.0:
        raise TrackError("road width must lie in [3, 12] m")
    min_radius = min_radius_for(difficulty)
    if difficulty >= 0.75 or hairpin_at is not None:
        min_radius = min(min_radius, 1.0 / HAIRPIN_CURVATURE)
        hairpin_at = length * (1.0 / 3.0 if hairpin_at is None else float(hairpin_at))
        if not 60.0 <= hairpin_at < length - 100.0:
            raise TrackError("hairpin position must leave room before and after it")
    if 0.5 * width + 1.0 >= min_radius:
        raise TrackError(f"curve radius {min_radius:.1f} m too tight for a {width:.1f} m wide road")
    s = _arclength(length)
    ds = np.diff(s)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(round(length * 1000)), int(round(difficulty * 1e6))])
    for _ in range(max_attempts):
        pieces = _profile(rng, length, difficulty, min_radius, hairpin_at)
        kappa = _sample_profile(pieces, s)
        x, y, _ = _integrate(kappa, ds)
        wave = 0.5 * difficulty * np.sin(2 * math.pi * s / 320.0 + rng.uniform(0, 2 * math.pi))
        widths = np.clip(width + wave, 3.0, 12.0)
        if not _self_intersects(x, y, s, widths):
            break
    else:
        raise TrackError("could not lay out a non-overlapping track; try another seed or a lower difficulty")
    mu = np.ones_like(s)
    if difficulty > 0:
        # slippery patches: piecewise-constant adherence over 100-300 m stretches
        pos = 0.0
        while pos < length:
            span = float(rng.uniform(100.0, 300.0))
            level = 1.0 - 0.7 * difficulty * float(rng.random())
            mu[(s >= pos) & (s < pos + span)] = level
            pos += span
        mu[s < 60.0] = 1.0
    e = superelevation_for(kappa)
    return Track(s, x, y, widths, kappa, e, mu, checkpoint_spacing=_checkpoint_spacing(length, checkpoint_spacing),
                 seed=int(seed))
