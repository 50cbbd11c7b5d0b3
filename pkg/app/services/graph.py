"""Road network topology: directed adjacency, spatial edges, incidence sets.

Nodes are road segments. A spatial edge (u, v) exists for every off-diagonal
1 in the adjacency matrix; the temporal edge (u, u) of every node is implicit.
Spatial edges are enumerated row-major, so the edge order is a pure function
of the adjacency matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import ParseError, SegmentLookupError, ValidationError

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class RoadGraph:
    segment_ids: Tuple[str, ...]
    adjacency: np.ndarray                     # N x N, 0/1, read-only
    spatial_edges: Tuple[Edge, ...]           # ascending (u, v)
    incidence: Tuple[Tuple[int, ...], ...]    # C(u): ascending edge indices

    @property
    def n(self) -> int:
        return len(self.segment_ids)

    @property
    def num_spatial_edges(self) -> int:
        return len(self.spatial_edges)

    @property
    def temporal_edges(self) -> Tuple[Edge, ...]:
        return tuple((u, u) for u in range(self.n))

    def index_of(self, segment_id: str) -> int:
        try:
            return self.segment_ids.index(str(segment_id))
        except ValueError:
            raise SegmentLookupError(f"unknown segment id {segment_id!r}") from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoadGraph):
            return NotImplemented
        return (
            self.segment_ids == other.segment_ids
            and np.array_equal(self.adjacency, other.adjacency)
            and self.spatial_edges == other.spatial_edges
            and self.incidence == other.incidence
        )

    def __hash__(self) -> int:
        return hash((self.segment_ids, self.spatial_edges))

    def __repr__(self) -> str:
        return f"RoadGraph(n={self.n}, spatial_edges={self.num_spatial_edges})"


def build_graph(segment_ids: Sequence, adjacency) -> RoadGraph:
    """Validate an adjacency matrix and enumerate edges and incidence sets."""
    ids = tuple(str(s) for s in segment_ids)
    seen: Dict[str, int] = {}
    for i, s in enumerate(ids):
        if s in seen:
            raise ValidationError(f"duplicate segment id {s!r} at positions {seen[s]} and {i}")
        seen[s] = i

    try:
        raw = np.asarray(adjacency, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ParseError(f"adjacency is not numeric: {e}") from e
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ParseError(f"adjacency must be square, got shape {raw.shape}")
    if raw.shape[0] != len(ids):
        raise ParseError(
            f"adjacency side {raw.shape[0]} does not match {len(ids)} segment ids"
        )
    bad = np.argwhere((raw != 0.0) & (raw != 1.0))
    if len(bad):
        r, c = (int(x) for x in bad[0])
        raise ParseError(f"adjacency entry at row {r + 1}, col {c + 1} is {raw[r, c]!r}, expected 0 or 1")

    adj = raw.astype(np.int8)
    loops = [ids[u] for u in range(len(ids)) if adj[u, u]]
    if loops:
        logger.warning("ignoring self-loops on %d segment(s): %s", len(loops), ", ".join(loops))

    edges: List[Edge] = [
        (int(u), int(v)) for u, v in zip(*np.nonzero(adj)) if u != v
    ]
    incidence: List[List[int]] = [[] for _ in ids]
    for e, (u, v) in enumerate(edges):
        incidence[u].append(e)
        incidence[v].append(e)

    adj.setflags(write=False)
    return RoadGraph(
        segment_ids=ids,
        adjacency=adj,
        spatial_edges=tuple(edges),
        incidence=tuple(tuple(c) for c in incidence),
    )


def extract_subnetwork(g: RoadGraph, keep: Iterable) -> RoadGraph:
    """Induced subgraph on `keep`, in the order given."""
    keep_ids = [str(k) for k in keep]
    idx = [g.index_of(k) for k in keep_ids]
    return build_graph(keep_ids, g.adjacency[np.ix_(idx, idx)])


def union(graphs: Sequence[RoadGraph]) -> RoadGraph:
    """Disjoint union with a block-diagonal adjacency."""
    ids: List[str] = []
    owner: Dict[str, int] = {}
    for k, g in enumerate(graphs):
        for s in g.segment_ids:
            if s in owner:
                raise ValidationError(f"segment id {s!r} appears in graphs {owner[s]} and {k}")
            owner[s] = k
            ids.append(s)
    adj = np.zeros((len(ids), len(ids)), dtype=np.int8)
    offset = 0
    for g in graphs:
        adj[offset:offset + g.n, offset:offset + g.n] = g.adjacency
        offset += g.n
    return build_graph(ids, adj)


def connected_components(g: RoadGraph) -> List[RoadGraph]:
    """Weakly connected components, largest first (ties: first segment order)."""
    parent = list(range(g.n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in g.spatial_edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)

    groups: Dict[int, List[int]] = {}
    for u in range(g.n):
        groups.setdefault(find(u), []).append(u)
    ordered = sorted(groups.values(), key=lambda members: (-len(members), members[0]))
    return [extract_subnetwork(g, [g.segment_ids[u] for u in members]) for members in ordered]


# -- file format ---------------------------------------------------------------

def load_adjacency(path: Path) -> RoadGraph:
    """Read the adjacency CSV: first row and first column hold segment ids."""
    try:
        df = pd.read_csv(path, index_col=0, dtype=str)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"{path}: {e}") from e

    row_ids = [str(s).strip() for s in df.index]
    col_ids = [str(s).strip() for s in df.columns]
    if row_ids != col_ids:
        raise ParseError(f"{path}: row ids {row_ids} do not match column ids {col_ids}")

    matrix = np.zeros((len(row_ids), len(col_ids)))
    for r, (_, row) in enumerate(df.iterrows()):
        for c, cell in enumerate(row.tolist()):
            text = "" if pd.isna(cell) else str(cell).strip()
            if text not in ("0", "1"):
                raise ParseError(f"{path}: row {r + 1}, col {c + 1} holds {text!r}, expected 0 or 1")
            matrix[r, c] = float(text)
    return build_graph(row_ids, matrix)


def save_adjacency(g: RoadGraph, path: Path) -> None:
    df = pd.DataFrame(g.adjacency, index=list(g.segment_ids), columns=list(g.segment_ids))
    df.index.name = "segment"
    df.to_csv(path)
