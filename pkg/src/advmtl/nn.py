"""Neural layers: embedding lookup, LSTM cell/encoder, softmax classifier.

The LSTM is the peephole-free variant: one affine map produces all four
gate pre-activations, stacked in the fixed row-block order
(candidate, output, input, forget):

    [cbar; o; i; f] = [tanh; sigm; sigm; sigm](W @ [x; h_prev] + b)
    c = cbar * i + c_prev * f
    h = o * tanh(c)

The block order and the [x; h_prev] column order are part of the
checkpoint format and must not change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape, Tensor
from .errors import DataFormatError, InputError, ShapeError

INIT_RANGE = 0.1
GATE_BLOCK_ORDER = "cbar,o,i,f"
INPUT_ORDER = "x,h"


def uniform_init(rng: np.random.Generator, shape) -> Tensor:
    """Draw one parameter tensor i.i.d. uniform on [-INIT_RANGE, INIT_RANGE]."""
    return rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)


@dataclass
class LstmParams:
    """Weights of one LSTM layer: W is [4d, d+e], b is [4d]."""

    W: Tensor
    b: Tensor

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1:
            raise ShapeError(
                f"lstm params: want matrix W and vector b, got {self.W.shape}, {self.b.shape}")
        if self.W.shape[0] != self.b.shape[0] or self.W.shape[0] % 4 != 0:
            raise ShapeError(
                f"lstm params: W rows {self.W.shape[0]} must equal len(b) "
                f"{self.b.shape[0]} and be divisible by 4")
        if self.W.shape[1] <= self.W.shape[0] // 4:
            raise ShapeError(
                f"lstm params: W of shape {self.W.shape} leaves no input columns")

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1] - self.hidden_size


def init_lstm(rng: np.random.Generator, hidden: int, embed: int) -> LstmParams:
    return LstmParams(W=uniform_init(rng, (4 * hidden, hidden + embed)),
                      b=uniform_init(rng, 4 * hidden))


def lstm_step(x: Node, h_prev: Node, c_prev: Node, W: Node, b: Node) -> tuple[Node, Node]:
    """One LSTM transition; returns (h, c) nodes.

    Recorded as a single fused tape node (plus two row extractions) with a
    hand-derived backward rule; cheaper than composing a dozen primitives
    per timestep.
    """
    d = b.value.shape[0] // 4
    e = W.value.shape[1] - d
    if x.value.shape != (e,):
        raise ShapeError(f"lstm_step: input shape {x.value.shape}, expected ({e},)")
    if h_prev.value.shape != (d,) or c_prev.value.shape != (d,):
        raise ShapeError(
            f"lstm_step: state shapes {h_prev.value.shape}/{c_prev.value.shape}, "
            f"expected ({d},)")

    Wv, bv = W.value, b.value
    z = np.concatenate([x.value, h_prev.value])
    pre = Wv @ z + bv
    cbar = np.tanh(pre[:d])
    gates = ad._stable_sigmoid(pre[d:])
    o, i, f = gates[:d], gates[d:2 * d], gates[2 * d:]
    c = cbar * i + c_prev.value * f
    tc = np.tanh(c)
    h = o * tc
    c_prev_v = c_prev.value

    def vjp(g):
        gh, gc_in = g[0], g[1]
        go = gh * tc
        gc = gc_in + gh * o * (1.0 - tc * tc)
        ga = np.empty(4 * d)
        ga[:d] = gc * i * (1.0 - cbar * cbar)       # candidate block
        ga[d:2 * d] = go * o * (1.0 - o)            # output gate
        ga[2 * d:3 * d] = gc * cbar * i * (1.0 - i)  # input gate
        ga[3 * d:] = gc * c_prev_v * f * (1.0 - f)   # forget gate
        gz = Wv.T @ ga
        return (gz[:e], gz[e:], gc * f, np.outer(ga, z), ga)

    pair = x.tape.record(np.stack([h, c]), (x, h_prev, c_prev, W, b), vjp)
    return ad.row(pair, 0), ad.row(pair, 1)


def lstm_encode(xs: Node, W: Node, b: Node,
                h0: Node | None = None, c0: Node | None = None) -> tuple[Node, Node]:
    """Fold the LSTM over the rows of ``xs`` ([T, e]); returns (h_T, all_h [T, d]).

    Initial states default to zeros. The whole unrolled sequence is one
    fused tape node whose backward rule runs the usual truncated-free BPTT
    loop; per-timestep gates are cached from the forward pass and the
    weight gradient is accumulated as a single matrix product. Gradients
    agree with chaining :func:`lstm_step` (both are finite-difference
    checked).
    """
    if xs.value.ndim != 2:
        raise ShapeError(f"lstm_encode: expected [T, e] inputs, got {xs.value.shape}")
    T = xs.value.shape[0]
    if T < 1:
        raise InputError("lstm_encode: empty sequence")
    d = b.value.shape[0] // 4
    e = W.value.shape[1] - d
    if xs.value.shape[1] != e:
        raise ShapeError(
            f"lstm_encode: input width {xs.value.shape[1]}, expected {e}")
    tape = xs.tape
    h0 = h0 if h0 is not None else tape.constant(np.zeros(d))
    c0 = c0 if c0 is not None else tape.constant(np.zeros(d))
    if h0.value.shape != (d,) or c0.value.shape != (d,):
        raise ShapeError(
            f"lstm_encode: initial state shapes {h0.value.shape}/{c0.value.shape}, "
            f"expected ({d},)")

    Wv, bv = W.value, b.value
    W_h = Wv[:, e:]
    pre_x = xs.value @ Wv[:, :e].T + bv  # x-side of all gate pre-activations

    zs = np.empty((T, d + e))
    cbar = np.empty((T, d))
    gates = np.empty((T, 3 * d))  # o, i, f per row
    cs = np.empty((T, d))
    tcs = np.empty((T, d))
    all_h = np.empty((T, d))
    h, c = h0.value, c0.value
    for t in range(T):
        zs[t, :e] = xs.value[t]
        zs[t, e:] = h
        pre = pre_x[t] + W_h @ h
        cbar[t] = np.tanh(pre[:d])
        gates[t] = ad._stable_sigmoid(pre[d:])
        o, i, f = gates[t, :d], gates[t, d:2 * d], gates[t, 2 * d:]
        c = cbar[t] * i + c * f
        cs[t] = c
        tcs[t] = np.tanh(c)
        all_h[t] = gates[t, :d] * tcs[t]
        h = all_h[t]
    c_prevs = np.empty((T, d))
    c_prevs[0] = c0.value
    c_prevs[1:] = cs[:-1]

    def vjp(g):
        ga_all = np.empty((T, 4 * d))
        dxs = np.empty((T, e))
        dh = np.zeros(d)
        dc = np.zeros(d)
        for t in range(T - 1, -1, -1):
            dh = dh + g[t]
            o, i, f = gates[t, :d], gates[t, d:2 * d], gates[t, 2 * d:]
            tc = tcs[t]
            gc = dc + dh * o * (1.0 - tc * tc)
            ga = ga_all[t]
            ga[:d] = gc * i * (1.0 - cbar[t] * cbar[t])
            ga[d:2 * d] = dh * tc * o * (1.0 - o)
            ga[2 * d:3 * d] = gc * cbar[t] * i * (1.0 - i)
            ga[3 * d:] = gc * c_prevs[t] * f * (1.0 - f)
            gz = Wv.T @ ga
            dxs[t] = gz[:e]
            dh = gz[e:]
            dc = gc * f
        dW = ga_all.T @ zs
        db = ga_all.sum(axis=0)
        return (dxs, dW, db, dh, dc)

    all_h_node = tape.record(all_h, (xs, W, b, h0, c0), vjp)
    return ad.row(all_h_node, T - 1), all_h_node


@dataclass
class SoftmaxHead:
    """Affine-softmax output layer: W is [C, d_in], b is [C]."""

    W: Tensor
    b: Tensor

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(
                f"softmax head: incompatible W {self.W.shape} and b {self.b.shape}")

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]


def init_head(rng: np.random.Generator, n_classes: int, d_in: int) -> SoftmaxHead:
    return SoftmaxHead(W=uniform_init(rng, (n_classes, d_in)),
                       b=uniform_init(rng, n_classes))


def softmax_classify(h: Node, W: Node, b: Node) -> Node:
    """Class probabilities softmax(W h + b); stabilized by max subtraction."""
    if h.value.shape != (W.value.shape[1],):
        raise ShapeError(
            f"softmax_classify: feature shape {h.value.shape} does not match "
            f"head input width {W.value.shape[1]}")
    return ad.softmax(ad.add(ad.matmul(W, h), b))


@dataclass
class EmbeddingTable:
    """Token vectors, one row per vocabulary id."""

    matrix: Tensor
    trainable: bool = True

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError(f"embedding table must be 2-D, got {self.matrix.shape}")

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def init_embeddings(rng: np.random.Generator, vocab_size: int, dim: int) -> EmbeddingTable:
    return EmbeddingTable(matrix=uniform_init(rng, (vocab_size, dim)))


def embed_sequence(table_node: Node, token_ids) -> Node:
    """Look up token vectors; returns a [T, e] node."""
    ids = list(token_ids)
    if not ids:
        raise InputError("embed_sequence: empty sentence")
    if min(ids) < 0 or max(ids) >= table_node.value.shape[0]:
        raise InputError(
            f"embed_sequence: token id out of range for vocabulary of "
            f"{table_node.value.shape[0]}")
    return ad.take_rows(table_node, ids)


def load_embeddings_text(path, token_to_id: dict[str, int], matrix: Tensor) -> int:
    """Overwrite rows of ``matrix`` with vectors from a text embedding file.

    Format: one token per line followed by ``dim`` whitespace-separated
    floats. Lines whose token is not in ``token_to_id`` are skipped.
    Returns the number of rows loaded.
    """
    dim = matrix.shape[1]
    loaded = 0
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token = parts[0]
            idx = token_to_id.get(token)
            if idx is None:
                continue
            if len(parts) != dim + 1:
                raise DataFormatError(
                    f"{path}:{ln}: expected {dim} values for '{token}', "
                    f"got {len(parts) - 1}")
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{ln}: {exc}") from None
            matrix[idx] = vec
            loaded += 1
    return loaded
