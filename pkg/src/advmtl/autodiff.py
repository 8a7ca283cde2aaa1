"""Dense float64 tensors and a reverse-mode differentiation tape.

Values are plain C-order ``numpy`` arrays; the tape records one node per
operation with the ids of its inputs and a closure computing the
vector-Jacobian product. A tape is single-use: build a forward graph,
call :func:`backward` once, throw it away.

Everything runs in double precision so finite-difference checks are
meaningful. No broadcasting beyond adding a bias vector to matrix rows;
all other shape mismatches raise :class:`~advmtl.errors.ShapeError`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

Tensor = np.ndarray

LOG_CLAMP = 1e-12


def tensor(data) -> Tensor:
    """Coerce ``data`` to a finite, C-ordered float64 array (0-d allowed)."""
    arr = np.asarray(data, dtype=np.float64, order="C")
    if not np.all(np.isfinite(arr)):
        raise ContractError("tensor contains non-finite values")
    return arr


class Node:
    """Handle to one recorded value on a tape."""

    __slots__ = ("tape", "idx", "value", "parents", "is_leaf")

    def __init__(self, tape: "Tape", idx: int, value: Tensor,
                 parents: tuple[int, ...], is_leaf: bool):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.parents = parents
        self.is_leaf = is_leaf

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        kind = "leaf" if self.is_leaf else "node"
        return f"<{kind} {self.idx} shape={self.value.shape}>"


# A vjp takes the upstream gradient and returns one gradient per parent
# (None for parents that do not need one).
Vjp = Callable[[Tensor], tuple]


class Tape:
    """Append-only record of operations for one forward/backward pair."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._vjps: list[Vjp | None] = []
        self._leaf_ids: list[int] = []
        self.clamp_events = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, value: Tensor, parents: tuple[int, ...],
                vjp: Vjp | None, is_leaf: bool) -> Node:
        node = Node(self, len(self.nodes), value, parents, is_leaf)
        self.nodes.append(node)
        self._vjps.append(vjp)
        if is_leaf:
            self._leaf_ids.append(node.idx)
        return node

    def leaf(self, value, validate: bool = True) -> Node:
        """Register a trainable parameter; it will appear in gradient maps.

        ``validate=False`` skips the finiteness check for values already
        known to be finite float64 arrays (hot path when re-binding model
        parameters every minibatch).
        """
        v = tensor(value) if validate else np.asarray(value, dtype=np.float64)
        return self._append(v, (), None, True)

    def constant(self, value, validate: bool = True) -> Node:
        """Register a non-trainable input; gradients stop here silently."""
        v = tensor(value) if validate else np.asarray(value, dtype=np.float64)
        return self._append(v, (), None, False)

    def record(self, value: Tensor, parents: Sequence[Node], vjp: Vjp) -> Node:
        """Append an operation result; ``vjp`` maps upstream grad to parent grads."""
        for p in parents:
            if p.tape is not self:
                raise ContractError("operands recorded on different tapes")
        return self._append(value, tuple(p.idx for p in parents), vjp, False)

    @property
    def leaves(self) -> list[Node]:
        return [self.nodes[i] for i in self._leaf_ids]


def _same_tape(*nodes: Node) -> Tape:
    t = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not t:
            raise ContractError("operands recorded on different tapes")
    return t


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    """Elementwise sum; also accepts matrix + row-vector (bias broadcast)."""
    tape = _same_tape(a, b)
    va, vb = a.value, b.value
    if va.shape == vb.shape:
        return tape.record(va + vb, (a, b), lambda g: (g, g))
    if va.ndim == 2 and vb.ndim == 1 and va.shape[1] == vb.shape[0]:
        return tape.record(va + vb, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add: incompatible shapes {va.shape} and {vb.shape}")


def mul(a: Node, b: Node) -> Node:
    """Elementwise (Hadamard) product of same-shaped operands."""
    tape = _same_tape(a, b)
    va, vb = a.value, b.value
    if va.shape != vb.shape:
        raise ShapeError(f"mul: incompatible shapes {va.shape} and {vb.shape}")
    return tape.record(va * vb, (a, b), lambda g: (g * vb, g * va))


def scale(a: Node, c: float) -> Node:
    """Multiply by a non-differentiated scalar constant."""
    c = float(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def add_n(nodes: Sequence[Node]) -> Node:
    """Sum of same-shaped nodes; one tape entry regardless of count."""
    if not nodes:
        raise ContractError("add_n of zero nodes")
    tape = _same_tape(*nodes)
    shape = nodes[0].value.shape
    for n in nodes[1:]:
        if n.value.shape != shape:
            raise ShapeError(f"add_n: mixed shapes {shape} and {n.value.shape}")
    total = nodes[0].value.copy()
    for n in nodes[1:]:
        total += n.value
    k = len(nodes)
    return tape.record(total, nodes, lambda g: (g,) * k)


def matmul(a: Node, b: Node) -> Node:
    """Matrix product: [m,k]@[k,n] -> [m,n] or [m,k]@[k] -> [m]."""
    tape = _same_tape(a, b)
    va, vb = a.value, b.value
    if va.ndim == 2 and vb.ndim == 2:
        if va.shape[1] != vb.shape[0]:
            raise ShapeError(
                f"matmul: inner dimensions disagree for {va.shape} and {vb.shape}")
        return tape.record(va @ vb, (a, b),
                           lambda g: (g @ vb.T, va.T @ g))
    if va.ndim == 2 and vb.ndim == 1:
        if va.shape[1] != vb.shape[0]:
            raise ShapeError(
                f"matmul: inner dimensions disagree for {va.shape} and {vb.shape}")
        return tape.record(va @ vb, (a, b),
                           lambda g: (np.outer(g, vb), va.T @ g))
    raise ShapeError(f"matmul: unsupported ranks {va.shape} and {vb.shape}")


def transpose(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.value.shape}")
    return a.tape.record(a.value.T.copy(), (a,), lambda g: (g.T,))


def _stable_sigmoid(x: Tensor) -> Tensor:
    # overflow-free logistic via the tanh identity
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(a: Node) -> Node:
    y = _stable_sigmoid(a.value)
    return a.tape.record(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return a.tape.record(y, (a,), lambda g: (g * (1.0 - y * y),))


def log(a: Node) -> Node:
    """Natural log, clamped below at LOG_CLAMP; clamps are counted on the tape."""
    v = a.value
    clamped = np.maximum(v, LOG_CLAMP)
    n_clamped = int(np.count_nonzero(v < LOG_CLAMP))
    if n_clamped:
        a.tape.clamp_events += n_clamped
    return a.tape.record(np.log(clamped), (a,), lambda g: (g / clamped,))


def softmax(a: Node) -> Node:
    """Stable softmax over a vector of logits."""
    if a.value.ndim != 1:
        raise ShapeError(f"softmax: expected a vector, got shape {a.value.shape}")
    z = a.value - a.value.max()
    e = np.exp(z)
    y = e / e.sum()

    def vjp(g):
        return (y * (g - float(g @ y)),)

    return a.tape.record(y, (a,), vjp)


def concat(parts: Sequence[Node], axis: int = 0) -> Node:
    """Concatenate vectors (axis 0) or matrices (axis 0 or 1)."""
    if not parts:
        raise ContractError("concat of zero nodes")
    tape = _same_tape(*parts)
    vals = [p.value for p in parts]
    ndim = vals[0].ndim
    for v in vals[1:]:
        if v.ndim != ndim:
            raise ShapeError(
                f"concat: mixed ranks {vals[0].shape} and {v.shape}")
    if axis >= ndim:
        raise ShapeError(f"concat: axis {axis} out of range for rank {ndim}")
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        slicer = [slice(None)] * ndim
        grads = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return tape.record(out, parts, vjp)


def stack_rows(rows: Sequence[Node]) -> Node:
    """Stack T same-length vectors into a [T, d] matrix."""
    if not rows:
        raise ContractError("stack_rows of zero nodes")
    tape = _same_tape(*rows)
    d = rows[0].value.shape
    for r in rows[1:]:
        if r.value.shape != d:
            raise ShapeError(f"stack_rows: mixed shapes {d} and {r.value.shape}")
    out = np.stack([r.value for r in rows])
    k = len(rows)
    return tape.record(out, rows, lambda g: tuple(g[i] for i in range(k)))


def row(a: Node, i: int) -> Node:
    """Extract row ``i`` of a matrix as a vector."""
    if a.value.ndim != 2:
        raise ShapeError(f"row: expected a matrix, got shape {a.value.shape}")

    def vjp(g):
        out = np.zeros_like(a.value)
        out[i] = g
        return (out,)

    return a.tape.record(a.value[i].copy(), (a,), vjp)


def take_rows(a: Node, indices: Sequence[int]) -> Node:
    """Gather rows by index (embedding lookup); duplicates accumulate."""
    if a.value.ndim != 2:
        raise ShapeError(f"take_rows: expected a matrix, got shape {a.value.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_rows: indices must be a flat sequence")
    if len(idx) == 0:
        raise ContractError("take_rows: empty index list")
    if idx.min() < 0 or idx.max() >= a.value.shape[0]:
        raise ShapeError(
            f"take_rows: index out of range for {a.value.shape[0]} rows")

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return a.tape.record(a.value[idx], (a,), vjp)


def sum_all(a: Node) -> Node:
    """Reduce to a scalar by summing every element."""
    shape = a.value.shape
    return a.tape.record(np.asarray(a.value.sum()), (a,),
                         lambda g: (np.broadcast_to(g, shape).copy() if shape else g,))


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


def mean_of(nodes: Sequence[Node]) -> Node:
    """Mean of scalar nodes (per-sample batch reduction)."""
    return scale(add_n(nodes), 1.0 / len(nodes))


@dataclass(frozen=True)
class GradReversalSpec:
    """Backward-pass scale of a gradient reversal node (the adversarial weight)."""

    scale: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale < 0:
            raise ConfigError(f"gradient reversal scale must be >= 0, got {self.scale}")


def gradient_reversal(a: Node, spec: GradReversalSpec) -> Node:
    """Identity in the forward pass; multiplies the gradient by -scale going back."""
    s = float(spec.scale)
    return a.tape.record(a.value, (a,), lambda g: (-s * g,))


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Node) -> dict[int, Tensor]:
    """Reverse sweep from ``loss``; returns grads for every leaf by node id.

    Unused leaves get zero tensors of matching shape. Multiple uses of a
    node accumulate by summation.
    """
    if loss.tape is not tape:
        raise ContractError("loss node does not belong to this tape")
    if loss.value.shape != ():
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.value.shape}")

    grads: list[Tensor | None] = [None] * len(tape.nodes)
    grads[loss.idx] = np.asarray(1.0)
    for idx in range(loss.idx, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        vjp = tape._vjps[idx]
        if vjp is None:
            continue
        node = tape.nodes[idx]
        for parent_idx, pg in zip(node.parents, vjp(g)):
            if pg is None:
                continue
            if grads[parent_idx] is None:
                grads[parent_idx] = np.array(pg, dtype=np.float64, copy=True)
            else:
                grads[parent_idx] += pg

    out: dict[int, Tensor] = {}
    for i in tape._leaf_ids:
        g = grads[i]
        out[i] = np.zeros_like(tape.nodes[i].value) if g is None else g
    return out


def finite_difference_check(loss_fn: Callable[[Mapping[str, Tensor], bool], tuple],
                            params: Mapping[str, Tensor],
                            eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(params, with_grads)`` must return ``(loss_value, grads_by_name)``
    when ``with_grads`` is true and ``(loss_value, None)`` otherwise, and must
    be deterministic in ``params``. The relative error for one coordinate is
    ``|a - f| / max(|a|, |f|, 1e-6)``; NaN on either side counts as failure
    (returned as inf).
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    _, grads = loss_fn(params, True)
    worst = 0.0
    work = {name: np.array(v, dtype=np.float64, copy=True) for name, v in params.items()}
    for name in params:
        arr = work[name]
        analytic = grads[name]
        flat = arr.reshape(-1)
        a_flat = np.asarray(analytic).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up, _ = loss_fn(work, False)
            flat[j] = orig - eps
            down, _ = loss_fn(work, False)
            flat[j] = orig
            fd = (up - down) / (2.0 * eps)
            a = float(a_flat[j])
            if not (np.isfinite(fd) and np.isfinite(a)):
                return float("inf")
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            if err > worst:
                worst = err
    return worst
