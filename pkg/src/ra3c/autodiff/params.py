from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamSet:
    """Ordered named parameter arrays plus an update counter."""

    segments: dict[str, np.ndarray]
    version: int = 0

    @property
    def names(self) -> list[str]:
        return list(self.segments)

    @property
    def size(self) -> int:
        return sum(int(a.size) for a in self.segments.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.segments.items()}

    def flatten(self, dtype=np.float32) -> np.ndarray:
        if not self.segments:
            return np.zeros(0, dtype=dtype)
        return np.concatenate([a.reshape(-1) for a in self.segments.values()]).astype(dtype, copy=False)

    def unflatten(self, flat: np.ndarray, version: int | None = None) -> "ParamSet":
        """Build a ParamSet with this set's layout from a flat vector."""
        flat = np.asarray(flat)
        if flat.ndim != 1 or flat.size != self.size:
            raise ValueError(f"flat vector has {flat.size} values, layout needs {self.size}")
        out: dict[str, np.ndarray] = {}
        offset = 0
        for name, arr in self.segments.items():
            n = arr.size
            out[name] = flat[offset:offset + n].reshape(arr.shape).astype(arr.dtype, copy=True)
            offset += n
        return ParamSet(out, self.version if version is None else version)

    def unflatten_views(self, flat: np.ndarray, version: int | None = None) -> "ParamSet":
        """Like :meth:`unflatten` but the segments alias ``flat`` (no copy)."""
        if flat.ndim != 1 or flat.size != self.size:
            raise ValueError(f"flat vector has {flat.size} values, layout needs {self.size}")
        out: dict[str, np.ndarray] = {}
        offset = 0
        for name, arr in self.segments.items():
            out[name] = flat[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size
        return ParamSet(out, self.version if version is None else version)

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.segments.items()}, self.version)

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: v.astype(dtype) for k, v in self.segments.items()}, self.version)

    def zeros_like(self) -> "ParamSet":
        return ParamSet({k: np.zeros_like(v) for k, v in self.segments.items()}, 0)

    def same_layout(self, other: "ParamSet") -> bool:
        return self.shapes() == other.shapes() and list(self.segments) == list(other.segments)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(np.square(a, dtype=np.float64))) for a in self.segments.values())))


def clip_by_global_norm(grads: ParamSet, max_norm: float) -> tuple[ParamSet, float]:
    """Scale ``grads`` so their global L2 norm is at most ``max_norm``.

    Returns the (possibly scaled) gradients and the norm before clipping.
    """
    norm = grads.global_norm()
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-6)
    return ParamSet({k: (v * scale).astype(v.dtype) for k, v in grads.segments.items()}, grads.version), norm


@dataclass
class OptState:
    """RMSProp hyperparameters and per-segment squared-gradient averages."""

    accumulators: dict[str, np.ndarray] = field(default_factory=dict)
    lr: float = 7e-4
    decay: float = 0.99
    eps: float = 0.1

    @classmethod
    def for_params(cls, params: ParamSet, lr: float = 7e-4, decay: float = 0.99, eps: float = 0.1) -> "OptState":
        return cls({k: np.zeros_like(v) for k, v in params.segments.items()}, lr, decay, eps)


def rmsprop_apply(params: ParamSet, grads: ParamSet, opt: OptState) -> ParamSet:
    """One RMSProp step, in place; returns ``params`` with version + 1.

    acc <- decay * acc + (1 - decay) * g**2
    p   <- p - lr * g / sqrt(acc + eps)
    """
    if not params.same_layout(grads):
        raise ValueError("gradient layout does not match parameter layout")
    if set(opt.accumulators) != set(params.segments) or any(
        opt.accumulators[k].shape != v.shape for k, v in params.segments.items()
    ):
        raise ValueError("optimizer accumulators do not match parameter layout")
    for name, p in params.segments.items():
        g = grads.segments[name]
        acc = opt.accumulators[name]
        acc *= opt.decay
        acc += (1.0 - opt.decay) * np.square(g)
        p -= (opt.lr * g / np.sqrt(acc + opt.eps)).astype(p.dtype)
    params.version += 1
    return params


def contiguous(params: ParamSet) -> tuple[ParamSet, np.ndarray]:
    """Copy ``params`` into one float32 buffer; the returned segments are views of it."""
    buf = params.flatten(np.float32).copy()
    return params.unflatten_views(buf), buf
