"""Reverse-mode automatic differentiation over dense float64 matrices.

A `Tape` records every operation in execution order (define-by-run). Each
recorded `Node` keeps its value, the ids of its inputs, and a vector-Jacobian
closure. `Tape.backward` walks the tape in strict reverse insertion order and
accumulates d(loss)/d(node) into the adjoints.

Only the operations the structural RNN forward path needs are provided. All
values are 2-D `float64` arrays; scalars are 1x1 matrices.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, ContractError, DimensionError, RowIndexError

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], Tuple[np.ndarray, ...]]


class OpKind(str, Enum):
    CONSTANT = "constant"
    PARAMETER = "parameter"
    MATMUL = "matmul"
    ADD = "add"
    ADD_ROW = "add_row"
    SUB = "sub"
    MUL = "mul"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    CONCAT_COLS = "concat_cols"
    CONCAT_ROWS = "concat_rows"
    SLICE_COLS = "slice_cols"
    ROW_SELECT = "row_select"
    ROW_SUM = "row_sum"
    GATHER_SUM = "gather_sum"
    LINEAR = "linear"
    LSTM_MEMORY = "lstm_memory"
    LSTM_HIDDEN = "lstm_hidden"
    DROPOUT = "dropout"
    MEAN_SQUARE = "mean_square"
    SUM = "sum"


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


def as_matrix(value) -> np.ndarray:
    """Coerce scalars and 1-D sequences to a 2-D float64 matrix (1-D -> row)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got an array of shape {arr.shape}")
    return arr



def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))

@dataclass(eq=False)
class Node:
    id: int
    op: OpKind
    inputs: Tuple[int, ...]
    value: np.ndarray
    name: Optional[str] = None
    _adjoint: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def adjoint(self) -> np.ndarray:
        """d(loss)/d(node) accumulated so far; zeros before any backward."""
        if self._adjoint is None:
            self._adjoint = np.zeros_like(self.value)
        return self._adjoint

    def accumulate(self, g: np.ndarray) -> None:
        if self._adjoint is None:
            self._adjoint = np.array(g, dtype=np.float64, copy=True)
        else:
            self._adjoint += g

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]


@dataclass(frozen=True, eq=False)
class RowGather:
    """Index plan for `Tape.gather_sum`.

    `passes[k]` pairs the output rows that have a k-th source with that source
    row; adding pass by pass sums every output row in ascending source order.
    """
    lists: Tuple[Tuple[int, ...], ...]
    num_source_rows: int
    passes: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    flat_rows: np.ndarray
    flat_src: np.ndarray

    @property
    def num_rows(self) -> int:
        return len(self.lists)

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[int]], num_source_rows: int) -> "RowGather":
        ordered = tuple(tuple(sorted(int(i) for i in rows)) for rows in lists)
        for rows in ordered:
            if rows and not (0 <= rows[0] and rows[-1] < num_source_rows):
                raise RowIndexError(f"gather: index outside {num_source_rows} source rows in {rows}")
        width = max((len(rows) for rows in ordered), default=0)
        passes = []
        for k in range(width):
            out = [r for r, rows in enumerate(ordered) if len(rows) > k]
            passes.append((
                np.asarray(out, dtype=np.intp),
                np.asarray([ordered[r][k] for r in out], dtype=np.intp),
            ))
        flat_rows = np.asarray([r for r, rows in enumerate(ordered) for _ in rows], dtype=np.intp)
        flat_src = np.asarray([i for rows in ordered for i in rows], dtype=np.intp)
        return cls(ordered, int(num_source_rows), tuple(passes), flat_rows, flat_src)


class Tape:
    """Single-threaded record of one forward computation."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.parameter_ids: List[int] = []
        self._grad_fns: List[Optional[GradFn]] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(
        self,
        op: OpKind,
        inputs: Sequence[Node],
        value: np.ndarray,
        grad_fn: Optional[GradFn],
        name: Optional[str] = None,
    ) -> Node:
        for node in inputs:
            if node.id >= len(self.nodes) or self.nodes[node.id] is not node:
                raise ContractError(f"node {node.id} ({node.op.value}) is not on this tape")
        node = Node(
            id=len(self.nodes),
            op=op,
            inputs=tuple(n.id for n in inputs),
            value=value,
            name=name,
        )
        self.nodes.append(node)
        self._grad_fns.append(grad_fn)
        return node

    # -- leaves ----------------------------------------------------------

    def constant(self, value, name: Optional[str] = None) -> Node:
        return self._push(OpKind.CONSTANT, (), as_matrix(value), None, name)

    def parameter(self, name: str, value: np.ndarray) -> Node:
        """Register a trainable matrix. The array is referenced, not copied."""
        node = self._push(OpKind.PARAMETER, (), as_matrix(value), None, name)
        self.parameter_ids.append(node.id)
        return node

    # -- linear algebra --------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.cols != b.rows:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        av, bv = a.value, b.value
        return self._push(
            OpKind.MATMUL, (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g)
        )

    def linear(self, x: Node, w: Node, b: Node) -> Node:
        """x W + b, with the 1 x cols bias row added to every row."""
        if x.cols != w.rows:
            raise DimensionError(f"linear: cannot multiply {x.shape} by {w.shape}")
        if b.rows != 1 or b.cols != w.cols:
            raise DimensionError(f"linear: bias {b.shape} does not fit {w.shape}")
        xv, wv = x.value, w.value
        return self._push(
            OpKind.LINEAR,
            (x, w, b),
            xv @ wv + b.value,
            lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0, keepdims=True)),
        )

    # -- elementwise -----------------------------------------------------

    def elementwise(self, kind: str, a: Node, b: Optional[Node] = None) -> Node:
        unary = {"relu": self.relu, "sigmoid": self.sigmoid, "tanh": self.tanh}
        binary = {"add": self.add, "mul": self.mul, "sub": self.sub}
        if kind in unary:
            return unary[kind](a)
        if kind in binary:
            if b is None:
                raise ContractError(f"elementwise {kind} needs two operands")
            return binary[kind](a, b)
        raise ContractError(f"unknown elementwise kind {kind!r}")

    def _same_shape(self, op: str, a: Node, b: Node) -> None:
        if a.shape != b.shape:
            raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")

    def add(self, a: Node, b: Node) -> Node:
        self._same_shape("add", a, b)
        return self._push(OpKind.ADD, (a, b), a.value + b.value, lambda g: (g, g))

    def sub(self, a: Node, b: Node) -> Node:
        self._same_shape("sub", a, b)
        return self._push(OpKind.SUB, (a, b), a.value - b.value, lambda g: (g, -g))

    def mul(self, a: Node, b: Node) -> Node:
        self._same_shape("mul", a, b)
        av, bv = a.value, b.value
        return self._push(OpKind.MUL, (a, b), av * bv, lambda g: (g * bv, g * av))

    def add_row(self, a: Node, bias: Node) -> Node:
        """Add a 1 x cols bias row to every row of `a`."""
        if bias.rows != 1 or bias.cols != a.cols:
            raise DimensionError(f"add_row: bias {bias.shape} does not fit {a.shape}")
        return self._push(
            OpKind.ADD_ROW,
            (a, bias),
            a.value + bias.value,
            lambda g: (g, g.sum(axis=0, keepdims=True)),
        )

    def relu(self, a: Node) -> Node:
        # subgradient at 0 is 0
        active = a.value > 0.0
        return self._push(
            OpKind.RELU, (a,), np.where(active, a.value, 0.0), lambda g: (g * active,)
        )

    def sigmoid(self, a: Node) -> Node:
        s = _sigmoid(a.value)
        return self._push(OpKind.SIGMOID, (a,), s, lambda g: (g * s * (1.0 - s),))

    def tanh(self, a: Node) -> Node:
        t = np.tanh(a.value)
        return self._push(OpKind.TANH, (a,), t, lambda g: (g * (1.0 - t * t),))

    # -- structural ------------------------------------------------------

    def concat_cols(self, a: Node, b: Node) -> Node:
        if a.rows != b.rows:
            raise DimensionError(f"concat_cols: row counts differ, {a.shape} and {b.shape}")
        split = a.cols
        return self._push(
            OpKind.CONCAT_COLS,
            (a, b),
            np.concatenate([a.value, b.value], axis=1),
            lambda g: (g[:, :split], g[:, split:]),
        )

    def concat_rows(self, parts: Sequence[Node]) -> Node:
        if not parts:
            raise ContractError("concat_rows needs at least one part")
        cols = parts[0].cols
        for p in parts:
            if p.cols != cols:
                raise DimensionError(f"concat_rows: column counts differ, {parts[0].shape} and {p.shape}")
        bounds = np.cumsum([0] + [p.rows for p in parts])
        return self._push(
            OpKind.CONCAT_ROWS,
            tuple(parts),
            np.concatenate([p.value for p in parts], axis=0),
            lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))),
        )

    def slice_cols(self, a: Node, start: int, stop: int) -> Node:
        if not 0 <= start <= stop <= a.cols:
            raise DimensionError(f"slice_cols: [{start}, {stop}) outside {a.shape}")
        shape = a.shape

        def grad(g: np.ndarray) -> Tuple[np.ndarray]:
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)

        return self._push(OpKind.SLICE_COLS, (a,), a.value[:, start:stop], grad)

    def row_select(self, a: Node, indices: Sequence[int]) -> Node:
        idx = np.asarray(list(indices), dtype=np.intp)
        for i in idx:
            if not 0 <= i < a.rows:
                raise RowIndexError(f"row_select: index {int(i)} out of range for {a.rows} rows")
        shape = a.shape

        def grad(g: np.ndarray) -> Tuple[np.ndarray]:
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)

        return self._push(OpKind.ROW_SELECT, (a,), a.value[idx, :], grad)

    def row_sum(self, a: Node) -> Node:
        """Sum rows top to bottom into a 1 x cols row; zero rows give zeros."""
        rows = a.rows
        total = np.zeros((1, a.cols))
        for r in range(rows):
            total = total + a.value[r:r + 1]
        return self._push(
            OpKind.ROW_SUM, (a,), total, lambda g: (np.repeat(g, rows, axis=0),)
        )

    def gather_sum(self, a: Node, plan: RowGather) -> Node:
        """Output row r is the sum of rows `plan.lists[r]` of `a`, ascending.

        Bit-identical to `row_sum(row_select(a, sorted(list)))` per output row;
        an empty list gives a zero row.
        """
        if a.rows != plan.num_source_rows:
            raise DimensionError(f"gather_sum: plan expects {plan.num_source_rows} rows, got {a.shape}")
        av = a.value
        out = np.zeros((plan.num_rows, a.cols))
        for rows, src in plan.passes:
            out[rows] += av[src]
        shape = a.shape

        def grad(g: np.ndarray) -> Tuple[np.ndarray]:
            full = np.zeros(shape)
            np.add.at(full, plan.flat_src, g[plan.flat_rows])
            return (full,)

        return self._push(OpKind.GATHER_SUM, (a,), out, grad)

    def dropout(
        self,
        a: Node,
        rate: float,
        mode: Mode,
        rng: Optional[np.random.Generator] = None,
    ) -> Node:
        """Inverted dropout: survivors are scaled by 1/(1-rate) in train mode.

        Eval mode (or rate 0) is the identity and returns `a` itself.
        """
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        if mode is Mode.EVAL or rate == 0.0:
            return a
        if rng is None:
            raise ContractError("train-mode dropout needs a random generator")
        mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
        return self._push(OpKind.DROPOUT, (a,), a.value * mask, lambda g: (g * mask,))

    # -- fused LSTM step -------------------------------------------------
    #
    # z holds the gate pre-activations [i | f | o | g], N x 4H. Values match
    # the composition of sigmoid, tanh, slice_cols, mul and add exactly.

    def _gates(self, z: Node, cell: Node, op: str) -> int:
        hidden = cell.cols
        if z.rows != cell.rows or z.cols != 4 * hidden:
            raise DimensionError(f"{op}: gates {z.shape} do not fit cell {cell.shape}")
        return hidden

    def lstm_memory(self, z: Node, c_prev: Node) -> Node:
        """c = f * c_prev + i * tanh(g)."""
        hidden = self._gates(z, c_prev, "lstm_memory")
        zv, cv = z.value, c_prev.value
        s = _sigmoid(zv)
        i, f = s[:, :hidden], s[:, hidden:2 * hidden]
        cand = np.tanh(zv[:, 3 * hidden:])

        def grad(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            dz = np.zeros_like(zv)
            dz[:, :hidden] = g * cand * i * (1.0 - i)
            dz[:, hidden:2 * hidden] = g * cv * f * (1.0 - f)
            dz[:, 3 * hidden:] = g * i * (1.0 - cand * cand)
            return (dz, g * f)

        return self._push(OpKind.LSTM_MEMORY, (z, c_prev), f * cv + i * cand, grad)

    def lstm_hidden(self, z: Node, c: Node) -> Node:
        """h = o * tanh(c)."""
        hidden = self._gates(z, c, "lstm_hidden")
        zv = z.value
        o = _sigmoid(zv)[:, 2 * hidden:3 * hidden]
        t = np.tanh(c.value)

        def grad(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            dz = np.zeros_like(zv)
            dz[:, 2 * hidden:3 * hidden] = g * t * o * (1.0 - o)
            return (dz, g * o * (1.0 - t * t))

        return self._push(OpKind.LSTM_HIDDEN, (z, c), o * t, grad)

    # -- reductions ------------------------------------------------------

    def mean_square(self, a: Node, b: Node) -> Node:
        """1x1 mean of squared differences between two equal-shape matrices."""
        self._same_shape("mean_square", a, b)
        diff = a.value - b.value
        n = diff.size
        if n == 0:
            raise DimensionError("mean_square: empty operands")
        scale = 2.0 / n

        def grad(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            d = g[0, 0] * scale * diff
            return (d, -d)

        return self._push(
            OpKind.MEAN_SQUARE, (a, b), np.array([[np.mean(diff * diff)]]), grad
        )

    def sum(self, a: Node) -> Node:
        shape = a.shape
        return self._push(
            OpKind.SUM,
            (a,),
            np.array([[a.value.sum()]]),
            lambda g: (np.full(shape, g[0, 0]),),
        )

    # -- reverse pass ----------------------------------------------------

    def backward(self, loss: Node) -> Dict[str, np.ndarray]:
        """Accumulate d(loss)/d(node) into every adjoint; return parameter grads.

        Intermediate adjoints are computed fresh on every call and added to
        the stored ones, so two calls without `reset` give exactly twice the
        gradients of one call.
        """
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
        pending: List[Optional[np.ndarray]] = [None] * (loss.id + 1)
        pending[loss.id] = np.ones((1, 1))
        for node_id in range(loss.id, -1, -1):
            g = pending[node_id]
            if g is None:
                continue
            node = self.nodes[node_id]
            node.accumulate(g)
            grad_fn = self._grad_fns[node_id]
            if grad_fn is None:
                continue
            for input_id, contribution in zip(node.inputs, grad_fn(g)):
                prev = pending[input_id]
                pending[input_id] = contribution if prev is None else prev + contribution
        return self.gradients()

    def gradients(self) -> Dict[str, np.ndarray]:
        return {self.nodes[i].name: self.nodes[i].adjoint for i in self.parameter_ids}

    def reset(self) -> None:
        for node in self.nodes:
            if node._adjoint is not None:
                node._adjoint.fill(0.0)


def backward(tape: Tape, loss: Node) -> Dict[str, np.ndarray]:
    return tape.backward(loss)


# -- gradient verification ---------------------------------------------------

TapeBuilder = Callable[[Mapping[str, np.ndarray]], Tuple[Tape, Node]]


@dataclass
class GradCheckReport:
    """Per-parameter max relative error between tape and finite differences."""
    errors: Dict[str, float]
    tolerance: float
    step: float
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def relative_error(g_ad: np.ndarray, g_fd: np.ndarray) -> np.ndarray:
    return np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))


def grad_check(
    build: TapeBuilder,
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tolerance: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients with central finite differences.

    `build` must be deterministic (dropout in eval mode, fixed inputs) and read
    the parameter arrays from the mapping it is given; entries are perturbed in
    place and restored.
    """
    tape, loss = build(params)
    analytic = tape.backward(loss)

    errors: Dict[str, float] = {}
    failures: List[str] = []
    for name, arr in params.items():
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            f_plus = build(params)[1].value[0, 0]
            arr[idx] = orig - step
            f_minus = build(params)[1].value[0, 0]
            arr[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * step)
        g_ad = analytic.get(name, np.zeros_like(arr))
        err = relative_error(g_ad, numeric)
        errors[name] = float(err.max()) if err.size else 0.0
        if errors[name] > tolerance:
            failures.append(name)
            logger.warning("grad_check: %s max rel err %.3e > %.1e", name, errors[name], tolerance)
    return GradCheckReport(errors=errors, tolerance=tolerance, step=step, failures=failures)
