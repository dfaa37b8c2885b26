import pydot
import pytest

from petc_traffic import abstraction as ab
from petc_traffic.abstraction import Abstraction, AbstractionError, assemble, precision
from petc_traffic.bounds import BoundsTable, RegionBounds
from petc_traffic.partition import build_partition


def test_precision_arithmetic():
    a = Abstraction(0.005, {(1, 1): (2, 5)}, {(1, 1): [(1, 1)]})
    assert precision(a) == pytest.approx(0.015)
    s = Abstraction(0.005, {(1, 1): (3, 3), (1, 2): (7, 7)},
                    {(1, 1): [(1, 2)], (1, 2): [(1, 1)]})
    assert precision(s) == 0.0


def test_single_region_abstraction():
    P = build_partition(2, 1, 1)
    table = BoundsTable(0.005, 0.0, 283, {(1, 1): RegionBounds((1, 1), 36, 36, 283, 283)})
    a = assemble(P, table, {(1, 1): [(1, 1)]})
    assert a.regions == [(1, 1)]
    assert a.intervals[(1, 1)] == (37, 283)
    assert a.edges() == [((1, 1), (1, 1))]
    assert a.epsilon == pytest.approx(0.005 * 246)


def test_assemble_rejects_mismatch():
    P = build_partition(2, 1, 2, [1.0])
    table = BoundsTable(0.005, 0.0, 10, {(1, 1): RegionBounds((1, 1), 0, 1, 5, 10)})
    with pytest.raises(AbstractionError):
        assemble(P, table, {(1, 1): [(1, 1)], (1, 2): [(1, 1)]})


def test_validate_rejects_bad_abstractions():
    with pytest.raises(AbstractionError, match="no outgoing"):
        Abstraction(0.01, {(1, 1): (1, 2)}, {(1, 1): []}).validate()
    with pytest.raises(AbstractionError, match="empty"):
        Abstraction(0.01, {(1, 1): (3, 2)}, {(1, 1): [(1, 1)]}).validate()
    with pytest.raises(AbstractionError, match="leaves"):
        Abstraction(0.01, {(1, 1): (1, 2)}, {(1, 1): [(9, 9)]}).validate()
    empty = Abstraction(0.01, {(1, 1): (1, 2)}, {(1, 1): []})
    with pytest.raises(AbstractionError):
        ab.export(empty, "/tmp/never_written.json")


def test_example_abstraction(ex_abstraction, ex_bounds):
    a = ex_abstraction
    assert len(a.regions) == 48
    for rid in a.regions:
        lo, hi = a.intervals[rid]
        assert lo == ex_bounds[rid].k_lower_perturbed + 1
        assert hi == ex_bounds[rid].k_upper_w0
    assert a.epsilon == pytest.approx(a.h * max(hi - lo for lo, hi in a.intervals.values()))
    assert a.meta["sigma"] == 0.1 and a.meta["W"] == 2.0
    assert a.meta["partition"]["q1"] == 8


def test_json_round_trip(ex_abstraction, tmp_path):
    path = ab.export(ex_abstraction, tmp_path / "abs.json", "json")
    back = ab.load(path)
    assert back == ex_abstraction
    assert back.intervals == ex_abstraction.intervals
    assert back.transitions == ex_abstraction.transitions
    assert back.epsilon == ex_abstraction.epsilon
    # re-export is byte-identical
    path2 = ab.export(back, tmp_path / "abs2.json", "json")
    assert path.read_bytes() == path2.read_bytes()


def test_dot_parses(ex_abstraction, tmp_path):
    path = ab.export(ex_abstraction, tmp_path / "abs.dot", "dot")
    (graph,) = pydot.graph_from_dot_file(str(path))
    nodes = [n for n in graph.get_nodes() if n.get_name() not in ("node", "graph", "edge")]
    assert len(nodes) == 48
    assert len(graph.get_edges()) == len(ex_abstraction.edges())
    lo, hi = ex_abstraction.intervals[(3, 2)]
    label = graph.get_node("r3_2")[0].get("label").strip('"')
    assert label == f"(3,2):[{lo},{hi}]"


def test_unknown_format(ex_abstraction, tmp_path):
    with pytest.raises(ValueError):
        ab.export(ex_abstraction, tmp_path / "x", "yaml")


def test_without_edge(ex_abstraction):
    src, dst = ex_abstraction.edges()[0]
    cut = ex_abstraction.without_edge(src, dst)
    assert not cut.has_edge(src, dst)
    assert len(cut.edges()) == len(ex_abstraction.edges()) - 1
    assert ex_abstraction.has_edge(src, dst)
