"""Structural RNN over a road graph.

Three LSTMs are shared factors: one over all spatial edges, one over all
temporal (self) edges, one over all nodes. Each is preceded by a shared
ReLU embedding; in train mode dropout acts on the context embedding only.
Weight shapes depend only on `Hyperparams`, so a parameter set trained on
one road network runs on any other.

Parameter groups (weights are fan_in x fan_out, biases 1 x fan_out):

    spatial_embed   W_S^E   2 -> embed
    spatial_lstm    W_S^L   embed -> spatial_hidden
    temporal_embed  W_T^E   2 -> embed
    temporal_lstm   W_T^L   embed -> temporal_hidden
    node_embed      W^E     1 -> embed
    context_embed   W_H^E   temporal_hidden + spatial_hidden -> embed
    node_lstm       W^L     2 * embed -> hidden
    output          W^O     hidden -> 1

LSTM weights act on [x, h_prev] and hold the gates in the order
input, forget, output, candidate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import BindingError, DimensionError
from ..models.hyperparams import Hyperparams
from .autodiff import Mode, Node, RowGather, Tape
from .graph import RoadGraph

logger = logging.getLogger(__name__)

LINEAR = "linear"
LSTM = "lstm"

GROUPS: Tuple[str, ...] = (
    "spatial_embed",
    "spatial_lstm",
    "temporal_embed",
    "temporal_lstm",
    "node_embed",
    "context_embed",
    "node_lstm",
    "output",
)


def group_layout(hp: Hyperparams) -> Dict[str, Tuple[str, int, int]]:
    """group -> (kind, input size, output size)."""
    e = hp.embed
    return {
        "spatial_embed": (LINEAR, 2, e),
        "spatial_lstm": (LSTM, e, hp.spatial_hidden),
        "temporal_embed": (LINEAR, 2, e),
        "temporal_lstm": (LSTM, e, hp.temporal_hidden),
        "node_embed": (LINEAR, 1, e),
        "context_embed": (LINEAR, hp.temporal_hidden + hp.spatial_hidden, e),
        "node_lstm": (LSTM, 2 * e, hp.hidden),
        "output": (LINEAR, hp.hidden, 1),
    }


def param_shapes(hp: Hyperparams) -> Dict[str, Tuple[int, int]]:
    """Flat name (`<group>.weight` / `<group>.bias`) -> shape, in group order."""
    shapes: Dict[str, Tuple[int, int]] = {}
    for group, (kind, fan_in, fan_out) in group_layout(hp).items():
        if kind == LSTM:
            shapes[f"{group}.weight"] = (fan_in + fan_out, 4 * fan_out)
            shapes[f"{group}.bias"] = (1, 4 * fan_out)
        else:
            shapes[f"{group}.weight"] = (fan_in, fan_out)
            shapes[f"{group}.bias"] = (1, fan_out)
    return shapes


def param_count(hp: Hyperparams) -> int:
    """Closed-form number of trainable scalars; independent of any graph."""
    def lstm(i: int, h: int) -> int:
        return 4 * ((i + h) * h + h)

    e = hp.embed
    return (
        (2 * e + e) + lstm(e, hp.spatial_hidden)
        + (2 * e + e) + lstm(e, hp.temporal_hidden)
        + (e + e)
        + ((hp.temporal_hidden + hp.spatial_hidden) * e + e)
        + lstm(2 * e, hp.hidden)
        + (hp.hidden + 1)
    )


@dataclass
class SrnnParams:
    hyperparams: Hyperparams
    arrays: Dict[str, np.ndarray]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def group(self, name: str) -> Dict[str, np.ndarray]:
        return {
            "weight": self.arrays[f"{name}.weight"],
            "bias": self.arrays[f"{name}.bias"],
        }

    def num_scalars(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "SrnnParams":
        return SrnnParams(self.hyperparams, {k: v.copy() for k, v in self.arrays.items()})


def group_of(param_name: str) -> str:
    return param_name.split(".", 1)[0]


def init_params(hp: Hyperparams, seed: int = 0) -> SrnnParams:
    """Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases 0, forget bias 1."""
    hp.validate()
    rng = np.random.default_rng(seed)
    layout = group_layout(hp)
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(hp).items():
        group, part = name.split(".")
        if part == "weight":
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            bias = np.zeros(shape)
            kind, _, hidden = layout[group]
            if kind == LSTM:
                bias[:, hidden:2 * hidden] = 1.0
            arrays[name] = bias
    return SrnnParams(hp, arrays)


# -- building blocks -----------------------------------------------------------

Layer = Mapping[str, Node]


def embed(
    tape: Tape,
    x: Node,
    layer: Layer,
    rate: float,
    mode: Mode,
    rng: Optional[np.random.Generator] = None,
) -> Node:
    """dropout(relu(x W + b)), one shared W for every row."""
    w = layer["weight"]
    if x.cols != w.rows:
        raise DimensionError(f"embed: input {x.shape} does not fit weight {w.shape}")
    pre = tape.linear(x, w, layer["bias"])
    return tape.dropout(tape.relu(pre), rate, mode, rng)


def lstm_cell(tape: Tape, x: Node, h_prev: Node, c_prev: Node, layer: Layer) -> Tuple[Node, Node]:
    """One LSTM step applied row-wise with shared weights."""
    if not x.rows == h_prev.rows == c_prev.rows:
        raise DimensionError(
            f"lstm_cell: row counts differ, x {x.shape}, h {h_prev.shape}, c {c_prev.shape}"
        )
    hidden = h_prev.cols
    if c_prev.cols != hidden or layer["weight"].rows != x.cols + hidden:
        raise DimensionError(
            f"lstm_cell: weight {layer['weight'].shape} does not fit x {x.shape}, h {h_prev.shape}"
        )
    z = tape.linear(tape.concat_cols(x, h_prev), layer["weight"], layer["bias"])
    c = tape.lstm_memory(z, c_prev)
    h = tape.lstm_hidden(z, c)
    return h, c


def spatial_context(tape: Tape, h_spatial: Node, incidence: Sequence[Sequence[int]]) -> Node:
    """Per node, the sum of its incident spatial-edge hidden rows.

    Rows are summed in ascending edge index whatever order `incidence` lists
    them in; an empty incidence set gives a zero row.
    """
    return tape.gather_sum(h_spatial, RowGather.from_lists(incidence, h_spatial.rows))


@dataclass(frozen=True, eq=False)
class GraphIndex:
    """Edge endpoints and incidence plan of `copies` disjoint copies of a graph.

    Copy k owns node rows k*N .. k*N+N-1 and edge rows k*E .. k*E+E-1, so a
    stack of windows runs as one forward pass.
    """
    n: int
    num_spatial_edges: int
    src: np.ndarray
    dst: np.ndarray
    context: RowGather


@lru_cache(maxsize=32)
def graph_index(g: RoadGraph, copies: int = 1) -> GraphIndex:
    n, e = g.n, g.num_spatial_edges
    src = np.asarray([u for u, _ in g.spatial_edges], dtype=np.intp)
    dst = np.asarray([v for _, v in g.spatial_edges], dtype=np.intp)
    incidence = [
        tuple(k * e + edge for edge in edges) for k in range(copies) for edges in g.incidence
    ]
    offsets = np.repeat(np.arange(copies, dtype=np.intp) * n, e)
    return GraphIndex(
        n=copies * n,
        num_spatial_edges=copies * e,
        src=np.tile(src, copies) + offsets,
        dst=np.tile(dst, copies) + offsets,
        context=RowGather.from_lists(incidence, copies * e),
    )


GraphLike = Union[RoadGraph, GraphIndex]


def _index(g: GraphLike) -> GraphIndex:
    return g if isinstance(g, GraphIndex) else graph_index(g)


@dataclass
class SrnnState:
    h_spatial: Node
    c_spatial: Node
    h_temporal: Node
    c_temporal: Node
    h_node: Node
    c_node: Node


@dataclass
class ForwardCache:
    a_spatial: Node
    a_temporal: Node
    a_node: Node
    a_context: Node
    context: Node       # H: N x (temporal_hidden + spatial_hidden)
    y: Node             # N x 1, scaled units


def _column(x, n: int, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.shape[0] != n:
        raise BindingError(f"{what} has {arr.shape[0]} entries but the graph has {n} nodes")
    return arr


class StructuralRNN:
    """Forward path of the structural RNN for any bound `RoadGraph`.

    Train-mode dropout masks the context embedding a_H; the embeddings of
    observed speeds (a_S, a_T, a) are never masked.
    """

    def __init__(self, params: SrnnParams):
        self.params = params
        self.hp = params.hyperparams

    def bind(self, tape: Tape) -> Dict[str, Dict[str, Node]]:
        """Register every parameter array on `tape`, grouped."""
        nodes = {name: tape.parameter(name, arr) for name, arr in self.params.arrays.items()}
        return {
            g: {"weight": nodes[f"{g}.weight"], "bias": nodes[f"{g}.bias"]} for g in GROUPS
        }

    def zero_state(self, tape: Tape, g: GraphLike) -> SrnnState:
        hp = self.hp
        ix = _index(g)
        e, n = ix.num_spatial_edges, ix.n
        return SrnnState(
            h_spatial=tape.constant(np.zeros((e, hp.spatial_hidden))),
            c_spatial=tape.constant(np.zeros((e, hp.spatial_hidden))),
            h_temporal=tape.constant(np.zeros((n, hp.temporal_hidden))),
            c_temporal=tape.constant(np.zeros((n, hp.temporal_hidden))),
            h_node=tape.constant(np.zeros((n, hp.hidden))),
            c_node=tape.constant(np.zeros((n, hp.hidden))),
        )

    def forward_step(
        self,
        tape: Tape,
        weights: Mapping[str, Layer],
        g: GraphLike,
        x_t,
        x_prev,
        state: SrnnState,
        mode: Mode = Mode.EVAL,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Node, SrnnState, ForwardCache]:
        ix = _index(g)
        if state.h_spatial.rows != ix.num_spatial_edges or state.h_temporal.rows != ix.n or state.h_node.rows != ix.n:
            raise BindingError(
                f"state rows ({state.h_spatial.rows} edges, {state.h_node.rows} nodes) do not match "
                f"graph ({ix.num_spatial_edges} edges, {ix.n} nodes)"
            )
        x = _column(x_t, ix.n, "x_t")
        xp = _column(x_prev, ix.n, "x_prev")

        # spatial edges (u, v) carry [x_u, x_v]
        spatial_feats = tape.constant(np.stack([x[ix.src], x[ix.dst]], axis=1).reshape(-1, 2))
        a_s = embed(tape, spatial_feats, weights["spatial_embed"], 0.0, mode)
        h_s, c_s = lstm_cell(tape, a_s, state.h_spatial, state.c_spatial, weights["spatial_lstm"])

        # temporal edges (u, u) carry [x_u^{t-1}, x_u^t]
        temporal_feats = tape.constant(np.stack([xp, x], axis=1))
        a_t = embed(tape, temporal_feats, weights["temporal_embed"], 0.0, mode)
        h_t, c_t = lstm_cell(tape, a_t, state.h_temporal, state.c_temporal, weights["temporal_lstm"])

        context = tape.concat_cols(h_t, tape.gather_sum(h_s, ix.context))

        a = embed(tape, tape.constant(x.reshape(-1, 1)), weights["node_embed"], 0.0, mode)
        a_h = embed(tape, context, weights["context_embed"], self.hp.dropout, mode, rng)
        h, c = lstm_cell(tape, tape.concat_cols(a, a_h), state.h_node, state.c_node, weights["node_lstm"])

        out = weights["output"]
        y = tape.linear(h, out["weight"], out["bias"])

        new_state = SrnnState(h_s, c_s, h_t, c_t, h, c)
        cache = ForwardCache(a_s, a_t, a, a_h, context, y)
        return y, new_state, cache

    def forward_window(
        self,
        tape: Tape,
        weights: Mapping[str, Layer],
        g: GraphLike,
        inputs: np.ndarray,
        mode: Mode = Mode.EVAL,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Node, List[ForwardCache]]:
        """Run l steps from a zero state.

        `inputs` holds l + 1 rows (t0-1 .. t0+l-1) of scaled node features;
        column k of the returned N x l predictions targets row t0+k+1.
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] < 2:
            raise DimensionError(f"window inputs need l + 1 >= 2 rows, got shape {inputs.shape}")
        ix = _index(g)
        state = self.zero_state(tape, ix)
        ys: List[Node] = []
        caches: List[ForwardCache] = []
        for k in range(inputs.shape[0] - 1):
            y, state, cache = self.forward_step(
                tape, weights, ix, inputs[k + 1], inputs[k], state, mode, rng
            )
            ys.append(y)
            caches.append(cache)
        pred = ys[0]
        for y in ys[1:]:
            pred = tape.concat_cols(pred, y)
        return pred, caches

    def predict(self, g: RoadGraph, inputs: np.ndarray) -> np.ndarray:
        """Eval-mode N x l predictions for one window, scaled units."""
        tape = Tape()
        pred, _ = self.forward_window(tape, self.bind(tape), g, inputs, Mode.EVAL)
        return pred.value

    def predict_batch(
        self,
        g: RoadGraph,
        windows: np.ndarray,
        mode: Mode = Mode.EVAL,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        """Predictions for W stacked windows (W x (l+1) x N) -> W x N x l, scaled units.

        The windows run as disjoint copies of `g` on one tape; rows never mix.
        """
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[2] != g.n:
            raise BindingError(f"window stack of shape {windows.shape} does not fit {g.n} nodes")
        count, rows = windows.shape[0], windows.shape[1]
        stacked = windows.transpose(1, 0, 2).reshape(rows, count * g.n)
        tape = Tape()
        pred, _ = self.forward_window(tape, self.bind(tape), graph_index(g, count), stacked, mode, rng)
        return pred.value.reshape(count, g.n, rows - 1)
