"""
Dense float64 tensors with reverse-mode automatic differentiation.

Operations record themselves on the active `Tape` (one per execution context, see
`Tape.__enter__`). Outside a tape they only compute values, which is how the
evaluation path runs. `backward(loss, tape)` replays the recorded nodes in reverse
and accumulates gradients into every reachable tensor that requires them;
unreachable tensors keep `grad is None`.
"""

from __future__ import annotations

import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from spkdlg.errors import ContractError, DimensionError, PreconditionError, TokenIndexError

logger = logging.getLogger(__name__)

DTYPE = np.float64
ELEMENTWISE_OPS = ("add", "sub", "mul", "sigmoid", "tanh", "relu")
ACTIVATIONS = ("relu", "tanh", "identity")

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    """A dense value array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        arr = np.array(data, dtype=DTYPE)
        if arr.size == 0:
            raise PreconditionError(f"tensor dimensions must be positive, got shape {arr.shape}")
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal constructor: takes ownership of `arr` without copying
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE).reshape(self.data.shape)
        else:
            self.grad += g.reshape(self.data.shape)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("spkdlg_active_tape", default=None)


class Tape:
    """
    Ordered record of the operations that built a loss.

    Used as a context manager; nodes are appended in execution order, which is a
    topological order of the graph.
    """

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, node: Node) -> None:
        if self.consumed:
            raise ContractError("cannot record on a tape that has already been differentiated")
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def _as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False)


def _emit(op: str, out: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires)
    tape = _ACTIVE_TAPE.get()
    if requires and tape is not None:
        tape.record(Node(op, inputs, result, backward_fn))
    return result


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate gradients for every requires_grad tensor reachable from `loss`."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("tape already differentiated; backward may run once per tape")
    tape.consumed = True

    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        input_grads = node.backward(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            inp.accumulate_grad(ig)
    logger.debug("backward over %d nodes", len(tape.nodes))


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------- products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a[m×k]·b[k×n]; a 1-D left operand is treated as a single row."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data
    out = a_data @ b_data

    def _backward(g: np.ndarray):
        if a_data.ndim == 1:
            return b_data @ g, np.outer(a_data, g)
        return g @ b_data.T, a_data.T @ g

    return _emit("matmul", out, (a, b), _backward)


# ---------------------------------------------------------------- elementwise


def _broadcast_kind(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    # row broadcast: a (m, n) with b (n,) or the reverse
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.data.ndim == 2 and a.data.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise DimensionError(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.full(shape, g.sum())
    return g.sum(axis=0).reshape(shape)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind("add", a, b)
    sa, sb = a.shape, b.shape
    out = a.data + b.data
    return _emit("add", out, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind("sub", a, b)
    sa, sb = a.shape, b.shape
    out = a.data - b.data
    return _emit("sub", out, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind("mul", a, b)
    a_data, b_data = a.data, b.data
    out = a_data * b_data
    return _emit(
        "mul",
        out,
        (a, b),
        lambda g: (_reduce_to(g * b_data, a_data.shape), _reduce_to(g * a_data, b_data.shape)),
    )


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    s = _stable_sigmoid(x.data)
    return _emit("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    return _emit("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def elementwise(op: str, *args: ArrayLike) -> Tensor:
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ContractError(f"unknown elementwise op {op!r}; expected one of {ELEMENTWISE_OPS}")
    arity = 2 if op in ("add", "sub", "mul") else 1
    if len(args) != arity:
        raise ContractError(f"{op} takes {arity} operand(s), got {len(args)}")
    return fn(*args)


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "identity":
        return x
    raise ContractError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def scale(x: ArrayLike, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


def log(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise PreconditionError("log of a non-positive value; clip probabilities first")
    x_data = x.data
    return _emit("log", np.log(x_data), (x,), lambda g: (g / x_data,))


def clip(x: ArrayLike, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _emit("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions


def sum(x: ArrayLike) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _as_tensor(x)
    shape = x.shape
    return _emit("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    shape, n = x.shape, x.size
    return _emit("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def max_over_time(seq: Tensor, length: Optional[int] = None) -> Tensor:
    """
    Per-column maximum over the first `length` rows (all rows by default).
    Gradient goes to the first maximal row of each column.
    """
    seq = _as_tensor(seq)
    if seq.data.ndim != 2:
        raise DimensionError("max_over_time", seq.shape)
    T, d = seq.shape
    if length is None:
        length = T
    if not 1 <= length <= T:
        raise PreconditionError(f"max_over_time needs 1 <= length <= {T}, got {length}")
    idx = np.argmax(seq.data[:length], axis=0)
    cols = np.arange(d)
    out = seq.data[idx, cols]

    def _backward(g: np.ndarray):
        grad = np.zeros((T, d), dtype=DTYPE)
        grad[idx, cols] = g
        return (grad,)

    return _emit("max_over_time", out, (seq,), _backward)


# ---------------------------------------------------------------- structure


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise PreconditionError("concat of an empty list")
    if len(tensors) == 1:
        return tensors[0]
    ndim = tensors[0].data.ndim
    ax = axis if axis >= 0 else axis + ndim
    if not 0 <= ax < ndim:
        raise DimensionError("concat", *(t.shape for t in tensors))
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise DimensionError("concat", *(t.shape for t in tensors))
    extents = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _emit("concat", out, tensors, lambda g: tuple(np.split(g, extents, axis=ax)))


def stack(vectors: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped 1-D tensors into a T×d matrix."""
    vectors = tuple(_as_tensor(v) for v in vectors)
    if not vectors:
        raise PreconditionError("stack of an empty list")
    shape = vectors[0].shape
    if any(v.shape != shape for v in vectors) or len(shape) != 1:
        raise DimensionError("stack", *(v.shape for v in vectors))
    out = np.stack([v.data for v in vectors])
    return _emit("stack", out, vectors, lambda g: tuple(g[i] for i in range(len(vectors))))


def take_row(m: Tensor, i: int) -> Tensor:
    m = _as_tensor(m)
    if m.data.ndim != 2 or not 0 <= i < m.shape[0]:
        raise DimensionError("take_row", m.shape, (i,))
    shape = m.shape

    def _backward(g: np.ndarray):
        grad = np.zeros(shape, dtype=DTYPE)
        grad[i] = g
        return (grad,)

    return _emit("take_row", m.data[i].copy(), (m,), _backward)


def gather_rows(table: Tensor, ids: Sequence[int], padding_idx: Optional[int] = None) -> Tensor:
    """Row lookup. The padding row, when given, never receives gradient."""
    if table.data.ndim != 2:
        raise DimensionError("gather_rows", table.shape)
    vocab_size = table.shape[0]
    index = np.asarray(list(ids), dtype=np.int64)
    if index.size == 0:
        raise PreconditionError("gather_rows needs at least one id")
    for token_id in index:
        if not 0 <= token_id < vocab_size:
            raise TokenIndexError(int(token_id), vocab_size)
    shape = table.shape

    def _backward(g: np.ndarray):
        grad = np.zeros(shape, dtype=DTYPE)
        np.add.at(grad, index, g)
        if padding_idx is not None:
            grad[padding_idx] = 0.0
        return (grad,)

    return _emit("gather_rows", table.data[index], (table,), _backward)


# ---------------------------------------------------------------- convolution


def conv1d(seq: Tensor, weight: Tensor, bias: Tensor, width: int) -> Tensor:
    """
    Valid 1-D convolution over time.

    seq[T×d], weight[(width·d)×n], bias[n] -> [(T-width+1)×n]
    """
    seq, weight, bias = _as_tensor(seq), _as_tensor(weight), _as_tensor(bias)
    if seq.data.ndim != 2:
        raise DimensionError("conv1d", seq.shape)
    T, d = seq.shape
    if weight.data.ndim != 2 or weight.shape[0] != width * d or bias.shape != (weight.shape[1],):
        raise DimensionError("conv1d", seq.shape, weight.shape, bias.shape)
    if T < width:
        raise PreconditionError(f"conv1d: sequence length {T} shorter than filter width {width}")
    n_pos = T - width + 1
    cols = sliding_window_view(seq.data, (width, d)).reshape(n_pos, width * d)
    w_data = weight.data
    out = cols @ w_data + bias.data

    def _backward(g: np.ndarray):
        g_cols = (g @ w_data.T).reshape(n_pos, width, d)
        g_seq = np.zeros((T, d), dtype=DTYPE)
        for j in range(width):
            g_seq[j : j + n_pos] += g_cols[:, j, :]
        return g_seq, cols.T @ g, g.sum(axis=0)

    return _emit("conv1d", out, (seq, weight, bias), _backward)


def conv1d_bank(
    seq: Tensor,
    filters: Sequence[Tuple[Tensor, Tensor]],
    widths: Sequence[int],
    activation: str = "relu",
) -> List[Tensor]:
    """
    One activated feature map per filter width, each [(T-w+1)×n_filters].

    Maps have different lengths under valid convolution, so they are returned
    separately; callers max-pool each and concatenate the pooled vectors.
    """
    if len(filters) != len(widths):
        raise ContractError(f"{len(filters)} filter sets for {len(widths)} widths")
    seq = _as_tensor(seq)
    if seq.shape[0] < max(widths):
        raise PreconditionError(
            f"sequence length {seq.shape[0]} < widest filter {max(widths)}; pad before convolving"
        )
    return [activate(conv1d(seq, w, b, width), activation) for (w, b), width in zip(filters, widths)]


# ---------------------------------------------------------------- oracle


def numerical_gradient(f: Callable[[], Union[Tensor, float]], tensor: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar `f()` with respect to `tensor`."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = f()
        flat[i] = original - step
        minus = f()
        flat[i] = original
        plus_v = plus.item() if isinstance(plus, Tensor) else float(plus)
        minus_v = minus.item() if isinstance(minus, Tensor) else float(minus)
        gflat[i] = (plus_v - minus_v) / (2.0 * step)
    return grad
