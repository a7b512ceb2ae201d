"""Differentiable layers over unbatched tensors.

Every op computes in the dtype of its inputs, so a float64 parameter set gives
a float64 "shadow" pass suitable for finite-difference checks.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tape import ShapeError, Tape, Tensor, tape_of


def _push(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward, saved: tuple = ()) -> Tensor:
    tape = tape_of(*inputs)
    if tape is None:
        return Tensor(data)
    return tape.push(op, data, inputs, backward, saved)


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2D cross-correlation of a [C,H,W] input."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects input [C,H,W] and kernels [F,C,kh,kw], got {x.shape} and {w.shape}")
    C, H, W = x.shape
    F, Ck, kh, kw = w.shape
    if Ck != C:
        raise ShapeError(f"conv2d: input has {C} channels but kernels expect {Ck}")
    if b.shape != (F,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {F} filters")
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")
    if H < kh or W < kw:
        raise ShapeError(f"conv2d: input {H}x{W} smaller than kernel {kh}x{kw}")
    Ho, Wo = conv_output_size(H, kh, stride), conv_output_size(W, kw, stride)
    win = sliding_window_view(x.data, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(F, C * kh * kw)
    out = (wmat @ cols.T).reshape(F, Ho, Wo) + b.data[:, None, None]
    need_x = x.requires_grad

    def back(g):
        g2 = g.reshape(F, Ho * Wo)
        dw = (g2 @ cols).reshape(w.shape)
        db = g2.sum(axis=1)
        dx = None
        if need_x:
            dcols = (g2.T @ wmat).reshape(Ho, Wo, C, kh, kw).transpose(2, 0, 1, 3, 4)
            dx = np.zeros_like(x.data)
            hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    dx[:, i:i + hs:stride, j:j + ws:stride] += dcols[:, :, :, i, j]
        return dx, dw, db

    return _push("conv2d", out.astype(x.data.dtype, copy=False), (x, w, b), back, (stride,))


def maxpool2d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling; ties go to the first cell in row-major order."""
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2d expects [C,H,W], got {x.shape}")
    C, H, W = x.shape
    if window < 1 or H % window or W % window:
        raise ShapeError(f"maxpool2d: {H}x{W} is not divisible by window {window}")
    Ho, Wo = H // window, W // window
    blocks = x.data.reshape(C, Ho, window, Wo, window).transpose(0, 1, 3, 2, 4).reshape(C, Ho, Wo, window * window)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        d = np.zeros((C, Ho, Wo, window * window), dtype=g.dtype)
        np.put_along_axis(d, arg[..., None], g[..., None], axis=-1)
        return (d.reshape(C, Ho, Wo, window, window).transpose(0, 1, 3, 2, 4).reshape(C, H, W),)

    return _push("maxpool2d", out, (x,), back, (window,))


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height`` x ``width`` window of a [C,H,W] tensor."""
    C, H, W = x.shape
    if height > H or width > W:
        raise ShapeError(f"crop {height}x{width} larger than input {H}x{W}")
    if (height, width) == (H, W):
        return x
    out = x.data[:, :height, :width].copy()

    def back(g):
        d = np.zeros_like(x.data)
        d[:, :height, :width] = g
        return (d,)

    return _push("crop", out, (x,), back)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 1 or w.data.ndim != 2 or w.shape[1] != x.shape[0] or b.shape != (w.shape[0],):
        raise ShapeError(f"linear: input {x.shape}, weight {w.shape}, bias {b.shape} do not agree")
    out = w.data @ x.data + b.data
    need_x = x.requires_grad

    def back(g):
        return (w.data.T @ g if need_x else None), np.outer(g, x.data), g

    return _push("linear", out, (x, w, b), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask
    tape = tape_of(x)
    guided = tape is not None and tape.guided

    def back(g):
        if guided:
            return (g * mask * (g > 0),)
        return (g * mask,)

    return _push("relu", out, (x,), back)


def flatten(x: Tensor) -> Tensor:
    shape = x.shape

    def back(g):
        return (g.reshape(shape),)

    return _push("flatten", x.data.reshape(-1), (x,), back)


def concat(parts: Sequence[Tensor]) -> Tensor:
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("concat expects 1-D tensors")
    sizes = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([p.data for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _push("concat", out, tuple(parts), back)


def slice1d(x: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        d = np.zeros_like(x.data)
        d[start:stop] = g
        return (d,)

    return _push("slice", x.data[start:stop].copy(), (x,), back)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_step(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell step with gate order (input, forget, candidate, output)."""
    M = h.shape[0]
    if (x.data.ndim != 1 or h.data.ndim != 1 or c.shape != (M,) or w_ih.shape != (4 * M, x.shape[0])
            or w_hh.shape != (4 * M, M) or b.shape != (4 * M,)):
        raise ShapeError(
            f"lstm_step: x {x.shape}, h {h.shape}, c {c.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {b.shape}")
    z = w_ih.data @ x.data + w_hh.data @ h.data + b.data
    i = _sigmoid(z[:M])
    f = _sigmoid(z[M:2 * M])
    gc = np.tanh(z[2 * M:3 * M])
    o = _sigmoid(z[3 * M:])
    c_new = f * c.data + i * gc
    tc = np.tanh(c_new)
    h_new = o * tc
    need_x, need_h = x.requires_grad, h.requires_grad

    def back(g):
        dh, dc_out = g[:M], g[M:]
        dc = dc_out + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gc * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - gc * gc),
            dh * tc * o * (1.0 - o),
        ])
        return (
            w_ih.data.T @ dz if need_x else None,
            w_hh.data.T @ dz if need_h else None,
            dc * f,
            np.outer(dz, x.data),
            np.outer(dz, h.data),
            dz,
        )

    both = _push("lstm_step", np.concatenate([h_new, c_new]), (x, h, c, w_ih, w_hh, b), back)
    if both.index < 0:
        return Tensor(h_new, both.tape), Tensor(c_new, both.tape)
    return slice1d(both, 0, M), slice1d(both, M, 2 * M)


def softmax_array(logits: np.ndarray) -> np.ndarray:
    if logits.ndim != 1 or logits.size < 1:
        raise ShapeError("softmax expects a non-empty 1-D tensor")
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax: non-finite logit")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def softmax(logits: Tensor) -> Tensor:
    p = softmax_array(logits.data)

    def back(g):
        return (p * (g - np.dot(g, p)),)

    return _push("softmax", p, (logits,), back)


def add_n(terms: Sequence[Tensor]) -> Tensor:
    if not terms:
        raise ShapeError("add_n needs at least one term")
    shape = terms[0].shape
    if any(t.shape != shape for t in terms):
        raise ShapeError("add_n: shapes differ")
    out = terms[0].data.copy()
    for t in terms[1:]:
        out = out + t.data

    def back(g):
        return tuple(g for _ in terms)

    return _push("add_n", out, tuple(terms), back)


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a 1-element tensor."""

    def back(g):
        return (np.full(x.shape, g.reshape(-1)[0], dtype=x.data.dtype),)

    return _push("sum", np.asarray([x.data.sum()], dtype=x.data.dtype), (x,), back)


def scale(x: Tensor, k: float) -> Tensor:
    def back(g):
        return (g * k,)

    return _push("scale", x.data * x.data.dtype.type(k), (x,), back)


def take(x: Tensor, index: int) -> Tensor:
    """Select one element of a 1-D tensor as a 1-element tensor."""
    def back(g):
        d = np.zeros_like(x.data)
        d[index] = g[0]
        return (d,)

    return _push("take", x.data[index:index + 1].copy(), (x,), back)


def a3c_step_loss(logits: Tensor, value: Tensor, action: int, target: float,
                  beta: float, value_coef: float) -> Tensor:
    """Per-step actor-critic loss.

    -log pi(a) * (target - V) - beta * H(pi) + value_coef * (target - V)**2,
    with the advantage in the first term held constant.
    """
    p = softmax_array(logits.data)
    if not 0 <= action < p.size:
        raise ValueError(f"action {action} outside 0..{p.size - 1}")
    if p[action] <= 0:
        raise ValueError("taken action has probability 0; log-probability is undefined")
    z = logits.data - logits.data.max()
    logp = z - np.log(np.exp(z).sum())
    v = value.data[0]
    adv = target - v
    entropy = -float(np.sum(p * logp))
    loss = -logp[action] * adv - beta * entropy + value_coef * adv * adv
    dtype = logits.data.dtype

    def back(g):
        g0 = g.reshape(-1)[0]
        onehot = np.zeros_like(p)
        onehot[action] = 1.0
        dlogits = adv * (p - onehot) + beta * p * (logp + entropy)
        dvalue = np.asarray([-2.0 * value_coef * adv], dtype=dtype)
        return (g0 * dlogits).astype(dtype), g0 * dvalue

    return _push("a3c_loss", np.asarray([loss], dtype=dtype), (logits, value), back)


__all__ = [
    "Tape", "Tensor", "conv2d", "maxpool2d", "crop", "linear", "relu", "flatten", "concat",
    "slice1d", "lstm_step", "softmax", "softmax_array", "add_n", "total", "scale", "take",
    "a3c_step_loss", "conv_output_size",
]
