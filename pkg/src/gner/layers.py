"""Parameterized layers on top of the autodiff core.

All layers accept either single-sequence inputs (1-D vectors per position)
or batched inputs (2-D ``(batch, dim)`` matrices per position); the same
graph operations cover both.  Parameters are immutable during inference and
mutated only by the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node

__all__ = [
    "LayerError",
    "LstmParams",
    "Conv1dParams",
    "EmbeddingTable",
    "init_lstm_params",
    "init_conv1d_params",
    "init_embedding_table",
    "init_dense_params",
    "lstm_cell_step",
    "bilstm_sequence",
    "conv1d_globalmaxpool",
    "dense",
    "dropout",
    "dropout_mask",
    "embed_lookup",
]


class LayerError(Exception):
    pass


# Gate slices of the fused LSTM weight matrices, in order:
# input gate, forget gate, cell candidate, output gate.
GATE_ORDER = ("input", "forget", "candidate", "output")


@dataclass
class LstmParams:
    """Fused LSTM weights: ``w_input`` is (input_dim, 4*cells), ``w_recurrent``
    is (cells, 4*cells), ``bias`` is (4*cells,).  The forget-gate bias slice
    is initialized to 1.0."""

    w_input: Node
    w_recurrent: Node
    bias: Node
    cells: int

    def __post_init__(self):
        four = 4 * self.cells
        if self.w_input.value.shape[1] != four or self.w_recurrent.value.shape != (self.cells, four) or self.bias.value.shape != (four,):
            raise LayerError(
                f"inconsistent LSTM shapes for cells={self.cells}: "
                f"{self.w_input.value.shape}, {self.w_recurrent.value.shape}, {self.bias.value.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.w_input.value.shape[0]


@dataclass
class Conv1dParams:
    """1-D convolution kernels (kernel_size, in_dim, filters) plus bias."""

    kernels: Node
    bias: Node
    kernel_size: int
    filters: int

    def __post_init__(self):
        k, _, f = self.kernels.value.shape
        if k != self.kernel_size or f != self.filters or self.bias.value.shape != (self.filters,):
            raise LayerError(f"inconsistent conv shapes: kernels {self.kernels.value.shape}, bias {self.bias.value.shape}")

    @property
    def in_dim(self) -> int:
        return self.kernels.value.shape[1]


@dataclass
class EmbeddingTable:
    """Lookup table of row vectors.  ``frozen_rows`` (e.g. the padding row)
    receive no parameter updates."""

    rows: Node
    trainable: bool = True
    frozen_rows: tuple[int, ...] = ()

    @property
    def vocab_size(self) -> int:
        return self.rows.value.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.value.shape[1]


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def init_lstm_params(input_dim: int, cells: int, rng: np.random.Generator) -> LstmParams:
    """Glorot-uniform input weights, per-gate orthogonal recurrent weights,
    zero bias except the forget gate at 1.0."""
    w_in = _glorot(rng, (input_dim, 4 * cells))
    w_rec = np.concatenate([_orthogonal(rng, cells) for _ in range(4)], axis=1)
    bias = np.zeros(4 * cells)
    bias[cells : 2 * cells] = 1.0
    return LstmParams(
        w_input=ad.leaf(w_in, requires_grad=True),
        w_recurrent=ad.leaf(w_rec, requires_grad=True),
        bias=ad.leaf(bias, requires_grad=True),
        cells=cells,
    )


def init_conv1d_params(kernel_size: int, in_dim: int, filters: int, rng: np.random.Generator) -> Conv1dParams:
    kernels = _glorot(rng, (kernel_size * in_dim, filters)).reshape(kernel_size, in_dim, filters)
    return Conv1dParams(
        kernels=ad.leaf(kernels, requires_grad=True),
        bias=ad.leaf(np.zeros(filters), requires_grad=True),
        kernel_size=kernel_size,
        filters=filters,
    )


def init_embedding_table(
    vocab_size: int, dim: int, rng: np.random.Generator, trainable: bool = True, pad_row: int | None = 0
) -> EmbeddingTable:
    rows = rng.uniform(-np.sqrt(3.0 / dim), np.sqrt(3.0 / dim), size=(vocab_size, dim))
    frozen: tuple[int, ...] = ()
    if pad_row is not None:
        rows[pad_row] = 0.0
        frozen = (pad_row,)
    return EmbeddingTable(rows=ad.leaf(rows, requires_grad=trainable), trainable=trainable, frozen_rows=frozen)


def init_dense_params(in_dim: int, out_dim: int, rng: np.random.Generator) -> tuple[Node, Node]:
    """Weights (in_dim, out_dim) and bias for a linearly activated layer."""
    return ad.leaf(_glorot(rng, (in_dim, out_dim)), requires_grad=True), ad.leaf(np.zeros(out_dim), requires_grad=True)


def _gate_slices(z: Node, cells: int) -> tuple[Node, Node, Node, Node]:
    parts = [ad.slice_(z, (Ellipsis, slice(k * cells, (k + 1) * cells))) for k in range(4)]
    return parts[0], parts[1], parts[2], parts[3]


def lstm_cell_step(params: LstmParams, x_t: Node, h_prev: Node, c_prev: Node) -> tuple[Node, Node]:
    """One LSTM update: sigmoid gates, tanh candidate and output squashing.

    ``x_t`` is (input_dim,) or (batch, input_dim); states follow suit with
    ``cells`` as the trailing dimension.
    """
    if x_t.value.shape[-1] != params.input_dim:
        raise LayerError(f"lstm_cell_step: input dim {x_t.value.shape[-1]} != {params.input_dim}")
    if h_prev.value.shape[-1] != params.cells or c_prev.value.shape[-1] != params.cells:
        raise LayerError(f"lstm_cell_step: state dims {h_prev.value.shape}/{c_prev.value.shape} != cells {params.cells}")
    z = ad.add(ad.add(ad.matmul(x_t, params.w_input), ad.matmul(h_prev, params.w_recurrent)), params.bias)
    zi, zf, zg, zo = _gate_slices(z, params.cells)
    i, f, g, o = ad.sigmoid(zi), ad.sigmoid(zf), ad.tanh(zg), ad.sigmoid(zo)
    c_t = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h_t = ad.mul(o, ad.tanh(c_t))
    return h_t, c_t


def _normalize_mask(mask, length: int):
    if len(mask) != length:
        raise LayerError(f"bilstm_sequence: {length} inputs but {len(mask)} mask entries")
    return list(mask)


def _state_shape(x0: Node, cells: int) -> tuple[int, ...]:
    if x0.value.ndim == 1:
        return (cells,)
    return (x0.value.shape[0], cells)


def _run_direction(
    params: LstmParams,
    xs: Sequence[Node],
    mask,
    order: Sequence[int],
    rec_mask: np.ndarray | None,
) -> list[Node]:
    """Run one LSTM direction over positions in ``order``.

    Masked positions emit zero vectors and leave the state untouched; with a
    batched boolean-vector mask, state rows are blended per sentence.
    Returns per-position hidden outputs indexed like ``xs``.
    """
    shape = _state_shape(xs[0], params.cells)
    h = ad.constant(np.zeros(shape))
    c = ad.constant(np.zeros(shape))
    outputs: list[Node | None] = [None] * len(xs)
    for t in order:
        m = mask[t]
        if isinstance(m, (bool, np.bool_)):
            if not m:
                outputs[t] = ad.constant(np.zeros(shape))
                continue
            h_in = h if rec_mask is None else ad.mul(h, ad.constant(rec_mask))
            h, c = lstm_cell_step(params, xs[t], h_in, c)
            outputs[t] = h
        else:
            m = np.asarray(m, dtype=np.float64)
            keep = ad.constant(np.repeat(m[:, None], params.cells, axis=1))
            drop = ad.constant(np.repeat(1.0 - m[:, None], params.cells, axis=1))
            h_in = h if rec_mask is None else ad.mul(h, ad.constant(rec_mask))
            h_new, c_new = lstm_cell_step(params, xs[t], h_in, c)
            h = ad.add(ad.mul(h_new, keep), ad.mul(h, drop))
            c = ad.add(ad.mul(c_new, keep), ad.mul(c, drop))
            outputs[t] = ad.mul(h, keep)
    return outputs  # type: ignore[return-value]


def bilstm_sequence(
    fwd: LstmParams,
    bwd: LstmParams,
    xs: Sequence[Node],
    mask: Sequence,
    recurrent_dropout: float = 0.0,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> list[Node]:
    """Bidirectional LSTM over a sequence; output_t = concat(h_fwd_t, h_bwd_t).

    ``mask`` entries are booleans (single sequence) or boolean vectors of
    batch size.  The backward pass runs over reversed positions; masked
    positions produce zero vectors and do not advance state.  When training
    with ``recurrent_dropout``, one mask per direction is sampled and reused
    at every timestep.
    """
    xs = list(xs)
    if not xs:
        raise LayerError("bilstm_sequence: empty sequence")
    mask = _normalize_mask(mask, len(xs))
    rec_masks = [None, None]
    if mode == "train" and recurrent_dropout > 0.0:
        if rng is None:
            raise LayerError("bilstm_sequence: recurrent dropout in train mode needs an rng")
        rec_masks = [
            dropout_mask(_state_shape(xs[0], p.cells), recurrent_dropout, rng) for p in (fwd, bwd)
        ]
    out_f = _run_direction(fwd, xs, mask, range(len(xs)), rec_masks[0])
    out_b = _run_direction(bwd, xs, mask, range(len(xs) - 1, -1, -1), rec_masks[1])
    return [ad.concat_last([f, b]) for f, b in zip(out_f, out_b)]


def conv1d_globalmaxpool(params: Conv1dParams, xs: Sequence[Node]) -> Node:
    """Valid (no-pad) convolution with ReLU, then per-filter max over positions.

    The caller guarantees ``len(xs) >= kernel_size`` by pre-padding character
    sequences.
    """
    xs = list(xs)
    k = params.kernel_size
    if len(xs) < k:
        raise LayerError(f"conv1d_globalmaxpool: sequence length {len(xs)} < kernel size {k}")
    w_flat = ad.reshape(params.kernels, (k * params.in_dim, params.filters))
    activations = []
    for p in range(len(xs) - k + 1):
        window = xs[p] if k == 1 else ad.concat_last(xs[p : p + k])
        activations.append(ad.relu(ad.add(ad.matmul(window, w_flat), params.bias)))
    return ad.max_over_axis(ad.stack(activations, axis=0), 0)


def dense(w: Node, b: Node, x: Node) -> Node:
    """Linearly activated layer: w @ x + b."""
    return ad.add(ad.matmul(w, x), b)


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Sample an inverted-dropout mask: kept entries carry 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise LayerError(f"dropout: rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x: Node, rate: float, mode: str, rng: np.random.Generator | None = None) -> Node:
    """Inverted dropout: identity in eval mode, kept values scaled at train time."""
    if not 0.0 <= rate < 1.0:
        raise LayerError(f"dropout: rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise LayerError(f"dropout: unknown mode {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise LayerError("dropout: train mode needs an rng")
    return ad.mul(x, ad.constant(dropout_mask(x.value.shape, rate, rng)))


def embed_lookup(table: EmbeddingTable, indices) -> Node:
    """Look up table rows; gradient w.r.t. a row sums over its occurrences."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.vocab_size):
        bad = int(idx.flat[np.argmax((idx < 0) | (idx >= table.vocab_size))])
        raise IndexError(f"embed_lookup: index {bad} out of range [0, {table.vocab_size})")
    return ad.gather_rows(table.rows, idx.reshape(-1))
