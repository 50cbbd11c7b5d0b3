import numpy as np
import pytest

from app.errors import ParseError, SegmentLookupError, ValidationError
from app.services.graph import (
    build_graph,
    connected_components,
    extract_subnetwork,
    load_adjacency,
    save_adjacency,
    union,
)


def test_chain_edges_and_incidence(chain):
    assert chain.n == 3
    assert chain.spatial_edges == ((0, 1), (1, 2))
    assert chain.incidence == ((0,), (0, 1), (1,))
    assert chain.temporal_edges == ((0, 0), (1, 1), (2, 2))


def test_both_directions_are_separate_edges():
    g = build_graph(["x", "y"], [[0, 1], [1, 0]])
    assert g.spatial_edges == ((0, 1), (1, 0))
    assert g.incidence == ((0, 1), (0, 1))


def test_edges_are_row_major_and_incidence_ascending():
    adj = np.zeros((4, 4))
    adj[3, 0] = adj[0, 2] = adj[2, 1] = adj[0, 1] = 1
    g = build_graph(list("abcd"), adj)
    assert g.spatial_edges == ((0, 1), (0, 2), (2, 1), (3, 0))
    for inc in g.incidence:
        assert list(inc) == sorted(inc)
    assert g.incidence[0] == (0, 1, 3)


def test_isolated_node_has_empty_incidence():
    g = build_graph(["a", "b", "c"], [[0, 1, 0], [0, 0, 0], [0, 0, 0]])
    assert g.incidence[2] == ()


def test_self_loops_are_ignored(caplog):
    g = build_graph(["a", "b"], [[1, 1], [0, 0]])
    assert g.spatial_edges == ((0, 1),)
    assert "self-loop" in caplog.text


def test_non_binary_entry_names_position():
    with pytest.raises(ParseError, match="row 2, col 1"):
        build_graph(["a", "b"], [[0, 1], [2, 0]])


def test_non_square_adjacency():
    with pytest.raises(ParseError):
        build_graph(["a", "b"], [[0, 1, 0], [0, 0, 1]])


def test_duplicate_ids():
    with pytest.raises(ValidationError):
        build_graph(["a", "a"], [[0, 1], [0, 0]])


def test_index_of_unknown_segment(chain):
    assert chain.index_of("c") == 2
    with pytest.raises(SegmentLookupError):
        chain.index_of("zz")


def test_extract_subnetwork_keeps_induced_edges(chain):
    sub = extract_subnetwork(chain, ["b", "c"])
    assert sub.segment_ids == ("b", "c")
    assert sub.spatial_edges == ((0, 1),)


def test_union_is_block_diagonal(chain):
    other = build_graph(["p", "q"], [[0, 1], [1, 0]])
    both = union([chain, other])
    assert both.n == 5
    assert both.spatial_edges == ((0, 1), (1, 2), (3, 4), (4, 3))
    with pytest.raises(ValidationError):
        union([chain, chain])


def test_connected_components_largest_first(chain):
    other = build_graph(["p", "q"], [[0, 1], [0, 0]])
    parts = connected_components(union([other, chain]))
    assert [p.segment_ids for p in parts] == [("a", "b", "c"), ("p", "q")]
    assert parts[0] == chain


def test_adjacency_csv_round_trip(tmp_path, chain):
    path = tmp_path / "adj.csv"
    save_adjacency(chain, path)
    assert load_adjacency(path) == chain


def test_adjacency_csv_bad_cell(tmp_path):
    path = tmp_path / "adj.csv"
    path.write_text("segment,a,b\na,0,1\nb,x,0\n")
    with pytest.raises(ParseError, match="row 2, col 1"):
        load_adjacency(path)


def test_adjacency_csv_mismatched_ids(tmp_path):
    path = tmp_path / "adj.csv"
    path.write_text("segment,a,b\na,0,1\nc,0,0\n")
    with pytest.raises(ParseError):
        load_adjacency(path)
