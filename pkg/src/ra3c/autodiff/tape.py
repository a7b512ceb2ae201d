"""Tape-based reverse-mode differentiation.

A :class:`Tape` records one :class:`TapeNode` per operation.  Tensors carry
the index of the node that produced them; constants carry ``-1``.  Calling
:func:`backward` walks the tape once in reverse creation order, which is a
valid reverse topological order because nodes can only consume earlier nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .params import ParamSet


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an operation."""


class Tensor:
    """A dense array plus its position on a tape (if any)."""

    __slots__ = ("data", "tape", "index")

    def __init__(self, data: np.ndarray, tape: Optional["Tape"] = None, index: int = -1):
        self.data = data
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.index >= 0

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, index={self.index})"


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    op: str
    inputs: tuple[int, ...]
    backward: Optional[BackwardFn]
    shape: tuple[int, ...]
    saved: tuple = ()


@dataclass
class Tape:
    """Records operations for a later backward pass.

    With ``record=False`` operations run eagerly and nothing is stored, which
    is the inference mode used while acting.  ``guided=True`` switches every
    ReLU backward to the guided-backpropagation rule.
    """

    record: bool = True
    guided: bool = False
    nodes: list[TapeNode] = field(default_factory=list)
    watched: dict[str, int] = field(default_factory=dict)

    def leaf(self, data: np.ndarray, name: str | None = None) -> Tensor:
        if not self.record:
            return Tensor(data)
        index = len(self.nodes)
        self.nodes.append(TapeNode("leaf", (), None, data.shape))
        if name is not None:
            self.watched[name] = index
        return Tensor(data, self, index)

    def watch(self, params: ParamSet) -> dict[str, Tensor]:
        """Register every parameter segment as a named leaf."""
        return {name: self.leaf(arr, name) for name, arr in params.segments.items()}

    def push(self, op: str, data: np.ndarray, inputs: Sequence[Tensor],
             backward: BackwardFn, saved: tuple = ()) -> Tensor:
        if not self.record or not any(t.index >= 0 for t in inputs):
            return Tensor(data, self if self.record else None)
        index = len(self.nodes)
        self.nodes.append(TapeNode(op, tuple(t.index for t in inputs), backward, data.shape, saved))
        return Tensor(data, self, index)


def tape_of(*tensors: Tensor) -> Optional[Tape]:
    for t in tensors:
        if t.tape is not None:
            return t.tape
    return None


def backward_all(tape: Tape, root: Tensor, seed: np.ndarray | None = None) -> list[Optional[np.ndarray]]:
    """Propagate from ``root`` and return the gradient of every tape node."""
    if root.tape is not tape or root.index < 0:
        raise ValueError("root tensor is not recorded on this tape")
    grads: list[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[root.index] = np.ones_like(root.data) if seed is None else seed.astype(root.data.dtype)
    for i in range(root.index, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.backward is None:
            continue
        in_grads = node.backward(g)
        for j, gi in zip(node.inputs, in_grads):
            if j < 0 or gi is None:
                continue
            if grads[j] is None:
                grads[j] = gi
            else:
                grads[j] = grads[j] + gi
    return grads


def backward(tape: Tape, loss: Tensor, params: ParamSet | None = None) -> ParamSet:
    """Gradient of a scalar ``loss`` with respect to every watched parameter.

    Parameters that do not influence the loss receive zeros.  When ``params``
    is given its segment order and dtypes are used for the result.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.data.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("non-finite loss")
    grads = backward_all(tape, loss)
    out: dict[str, np.ndarray] = {}
    names = list(params.segments) if params is not None else list(tape.watched)
    for name in names:
        index = tape.watched.get(name)
        shape = tape.nodes[index].shape if index is not None else params.segments[name].shape
        dtype = params.segments[name].dtype if params is not None else loss.data.dtype
        g = grads[index] if index is not None else None
        if g is None:
            out[name] = np.zeros(shape, dtype=dtype)
        else:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
            out[name] = np.asarray(g, dtype=dtype)
    return ParamSet(out, version=0)
