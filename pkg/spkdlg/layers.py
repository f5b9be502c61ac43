"""
Parameterised building blocks: embedding table, LSTM cell, bidirectional LSTM,
CNN sentence encoder and dense layer.

Every layer exposes `named_parameters(prefix)` so the model can address each
weight tensor by a stable dotted name.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from spkdlg import tensor_core as tc
from spkdlg.errors import DimensionError, PreconditionError
from spkdlg.tensor_core import Tensor

logger = logging.getLogger(__name__)

NamedParams = List[Tuple[str, Tensor]]

FORGET_BIAS = 1.0


def init_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    """Glorot-uniform: U(-r, r) with r = sqrt(6 / (fan_in + fan_out))."""
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def _param(data: np.ndarray, trainable: bool = True) -> Tensor:
    return Tensor(data, requires_grad=trainable)


# ---------------------------------------------------------------- embedding


@dataclass
class EmbeddingTable:
    weights: Tensor
    trainable: bool = True
    padding_idx: Optional[int] = 0

    @classmethod
    def create(
        cls, vocab_size: int, dim: int, rng: np.random.Generator, trainable: bool = True
    ) -> "EmbeddingTable":
        data = init_uniform(rng, vocab_size, dim, (vocab_size, dim))
        data[0] = 0.0
        return cls(weights=_param(data, trainable), trainable=trainable, padding_idx=0)

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def named_parameters(self, prefix: str) -> NamedParams:
        return [(f"{prefix}.weights", self.weights)]


def embed(table: EmbeddingTable, token_ids: Sequence[int]) -> Tensor:
    """Look up rows; the padding row never receives gradient."""
    return tc.gather_rows(table.weights, token_ids, padding_idx=table.padding_idx)


# ---------------------------------------------------------------- LSTM


@dataclass
class LSTMCellParams:
    input_dim: int
    hidden_dim: int
    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    @classmethod
    def create(
        cls, input_dim: int, hidden_dim: int, rng: np.random.Generator, forget_bias: float = FORGET_BIAS
    ) -> "LSTMCellParams":
        rows = input_dim + hidden_dim

        def weight() -> Tensor:
            return _param(init_uniform(rng, rows, hidden_dim, (rows, hidden_dim)))

        return cls(
            input_dim=input_dim,
            hidden_dim=hidden_dim,
            W_i=weight(),
            W_f=weight(),
            W_o=weight(),
            W_c=weight(),
            b_i=_param(np.zeros(hidden_dim)),
            b_f=_param(np.full(hidden_dim, forget_bias)),
            b_o=_param(np.zeros(hidden_dim)),
            b_c=_param(np.zeros(hidden_dim)),
        )

    def named_parameters(self, prefix: str) -> NamedParams:
        names = ("W_i", "W_f", "W_o", "W_c", "b_i", "b_f", "b_o", "b_c")
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


def lstm_step(cell: LSTMCellParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> Tuple[Tensor, Tensor]:
    if x_t.shape != (cell.input_dim,):
        raise DimensionError("lstm_step input", x_t.shape, (cell.input_dim,))
    if h_prev.shape != (cell.hidden_dim,) or c_prev.shape != (cell.hidden_dim,):
        raise DimensionError("lstm_step state", h_prev.shape, c_prev.shape, (cell.hidden_dim,))
    xh = tc.concat([x_t, h_prev], axis=0)
    i = tc.sigmoid(tc.matmul(xh, cell.W_i) + cell.b_i)
    f = tc.sigmoid(tc.matmul(xh, cell.W_f) + cell.b_f)
    o = tc.sigmoid(tc.matmul(xh, cell.W_o) + cell.b_o)
    c_tilde = tc.tanh(tc.matmul(xh, cell.W_c) + cell.b_c)
    c_t = f * c_prev + i * c_tilde
    h_t = o * tc.tanh(c_t)
    return h_t, c_t


@dataclass
class BLSTMEncoder:
    forward_cell: LSTMCellParams
    backward_cell: LSTMCellParams

    def __post_init__(self) -> None:
        f, b = self.forward_cell, self.backward_cell
        if f.input_dim != b.input_dim or f.hidden_dim != b.hidden_dim:
            raise DimensionError(
                "BLSTMEncoder cells", (f.input_dim, f.hidden_dim), (b.input_dim, b.hidden_dim)
            )

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "BLSTMEncoder":
        return cls(
            forward_cell=LSTMCellParams.create(input_dim, hidden_dim, rng),
            backward_cell=LSTMCellParams.create(input_dim, hidden_dim, rng),
        )

    @property
    def input_dim(self) -> int:
        return self.forward_cell.input_dim

    @property
    def hidden_dim(self) -> int:
        return self.forward_cell.hidden_dim

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden_dim

    def named_parameters(self, prefix: str) -> NamedParams:
        return self.forward_cell.named_parameters(f"{prefix}.fwd") + self.backward_cell.named_parameters(
            f"{prefix}.bwd"
        )


def _run_direction(
    cell: LSTMCellParams,
    seq: Tensor,
    order: Sequence[int],
    h0: Optional[Tensor],
    step_input: Optional[Tensor],
) -> Tensor:
    zeros = Tensor(np.zeros(cell.hidden_dim))
    h = h0 if h0 is not None else zeros
    c = zeros
    for t in order:
        x_t = tc.take_row(seq, t)
        if step_input is not None:
            x_t = tc.concat([x_t, step_input], axis=0)
        h, c = lstm_step(cell, x_t, h, c)
    return h


def blstm_encode(
    enc: BLSTMEncoder,
    seq: Tensor,
    init_fwd: Optional[Tensor] = None,
    init_bwd: Optional[Tensor] = None,
    step_input: Optional[Tensor] = None,
) -> Tensor:
    """
    Concatenation of the final forward and final backward hidden states.

    `init_fwd` / `init_bwd` seed each direction's h_0 (c_0 stays zero).
    `step_input`, when given, is appended to every timestep's input.
    """
    if seq.data.ndim != 2:
        raise DimensionError("blstm_encode", seq.shape)
    T = seq.shape[0]
    if T < 1:
        raise PreconditionError("blstm_encode needs a non-empty sequence")
    h_fwd = _run_direction(enc.forward_cell, seq, range(T), init_fwd, step_input)
    h_bwd = _run_direction(enc.backward_cell, seq, range(T - 1, -1, -1), init_bwd, step_input)
    return tc.concat([h_fwd, h_bwd], axis=0)


# ---------------------------------------------------------------- CNN


@dataclass
class CNNEncoder:
    input_dim: int
    widths: Tuple[int, ...]
    filters_per_width: int
    filters: List[Tuple[Tensor, Tensor]]
    activation: str = "relu"

    @classmethod
    def create(
        cls,
        input_dim: int,
        widths: Sequence[int],
        filters_per_width: int,
        rng: np.random.Generator,
        activation: str = "relu",
    ) -> "CNNEncoder":
        filters = []
        for w in widths:
            fan_in = w * input_dim
            weight = _param(init_uniform(rng, fan_in, filters_per_width, (fan_in, filters_per_width)))
            bias = _param(np.zeros(filters_per_width))
            filters.append((weight, bias))
        return cls(
            input_dim=input_dim,
            widths=tuple(widths),
            filters_per_width=filters_per_width,
            filters=filters,
            activation=activation,
        )

    @property
    def out_dim(self) -> int:
        return self.filters_per_width * len(self.widths)

    @property
    def max_width(self) -> int:
        return max(self.widths)

    def named_parameters(self, prefix: str) -> NamedParams:
        named: NamedParams = []
        for w, (weight, bias) in zip(self.widths, self.filters):
            named.append((f"{prefix}.w{w}.W", weight))
            named.append((f"{prefix}.w{w}.b", bias))
        return named


def cnn_encode(enc: CNNEncoder, seq: Tensor, valid_length: Optional[int] = None) -> Tensor:
    """
    conv per width -> activation -> max over time -> concatenation across widths.

    Sequences shorter than the widest filter are right-padded with zero rows.
    With `valid_length`, windows that start inside the trailing padding are
    left out of the pooling.
    """
    T, d = seq.shape
    if d != enc.input_dim:
        raise DimensionError("cnn_encode", seq.shape, (T, enc.input_dim))
    if T < enc.max_width:
        seq = tc.concat([seq, Tensor(np.zeros((enc.max_width - T, d)))], axis=0)
    maps = tc.conv1d_bank(seq, enc.filters, enc.widths, enc.activation)
    pooled = []
    for feature_map in maps:
        length = None
        if valid_length is not None:
            length = max(1, min(feature_map.shape[0], valid_length))
        pooled.append(tc.max_over_time(feature_map, length))
    return tc.concat(pooled, axis=0)


# ---------------------------------------------------------------- dense


@dataclass
class DenseLayer:
    W: Tensor
    b: Tensor

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        return cls(W=_param(init_uniform(rng, in_dim, out_dim, (in_dim, out_dim))), b=_param(np.zeros(out_dim)))

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    def named_parameters(self, prefix: str) -> NamedParams:
        return [(f"{prefix}.W", self.W), (f"{prefix}.b", self.b)]


def dense(layer: DenseLayer, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.in_dim:
        raise DimensionError("dense", x.shape, layer.W.shape)
    return tc.matmul(x, layer.W) + layer.b
