from collections import Counter

import numpy as np
import pytest

from mmpgo.bench.synthetic import random_graph
from mmpgo.errors import DimensionMismatch, InvalidGraph, InvalidPartition
from mmpgo.graph import Measurement, PoseEstimate, PoseGraph, merge, partition, random_assignment, transfer
from mmpgo.quadratic import objective


def _chain(n, d=2, robots=None):
    edges = [Measurement((0, i), (0, i + 1), np.eye(d), np.ones(d)) for i in range(n - 1)]
    return PoseGraph(d, [n], edges)


def test_layout_columns():
    g = random_graph(0, d=3, n=7, robots=2)[0]
    assert g.sizes == (4, 3)
    assert g.num_cols == 28
    # robot 0: 4 translation columns then 4 rotation blocks
    assert list(g.t_col[:4]) == [0, 1, 2, 3]
    assert list(g.R_cols[0]) == [4, 5, 6]
    assert list(g.t_col[4:]) == [16, 17, 18]
    assert list(g.R_cols[4]) == [19, 20, 21]
    assert g.robot_cols(1) == slice(16, 28)


def test_poses_matrix_round_trip(rng):
    g, X = random_graph(1, d=3, n=9, robots=3)
    t, R = g.matrix_to_poses(X)
    assert np.array_equal(g.poses_to_matrix(t, R), X)
    est = PoseEstimate(g, X)
    assert np.array_equal(np.hstack([b.matrix for b in est.blocks]), X)


def test_measurement_validation():
    with pytest.raises(InvalidGraph):
        Measurement((0, 0), (0, 1), 2 * np.eye(2), np.zeros(2))
    with pytest.raises(InvalidGraph):
        Measurement((0, 0), (0, 1), np.eye(2), np.zeros(2), kappa=0.0)
    with pytest.raises(InvalidGraph):
        Measurement((0, 1), (0, 1), np.eye(2), np.zeros(2))
    with pytest.raises(DimensionMismatch):
        Measurement((0, 0), (0, 1), np.eye(3), np.zeros(2))


def test_graph_validation():
    e = Measurement((0, 0), (0, 1), np.eye(2), np.zeros(2))
    with pytest.raises(InvalidGraph):
        PoseGraph(2, [3], [e])  # pose 2 disconnected
    with pytest.raises(InvalidGraph):
        PoseGraph(2, [1], [e])  # pose out of range
    with pytest.raises(DimensionMismatch):
        PoseGraph(3, [2], [e])
    with pytest.raises(DimensionMismatch):
        PoseGraph(4, [2], [])
    # parallel edges are kept
    g = PoseGraph(2, [2], [e, e])
    assert g.num_edges == 2


def test_neighbors_and_separators():
    d = 2
    edges = [
        Measurement((0, 0), (0, 1), np.eye(d), np.zeros(d)),
        Measurement((0, 1), (1, 0), np.eye(d), np.zeros(d)),
        Measurement((1, 1), (2, 0), np.eye(d), np.zeros(d)),
        Measurement((2, 0), (0, 0), np.eye(d), np.zeros(d)),
        Measurement((1, 0), (1, 1), np.eye(d), np.zeros(d)),
    ]
    g = PoseGraph(d, [2, 2, 1], edges)
    assert g.neighbor_sets(0) == (frozenset({1}), frozenset({2}))
    assert g.neighbors(1) == frozenset({0, 2})
    assert list(g.separators(0, 1)) == [1]
    assert list(g.separators(0, 2)) == [0]
    assert list(g.separators(1, 0)) == [0]
    assert list(g.separators(1, 2)) == [1]
    assert len(g.separators(0, 0)) == 0
    with pytest.raises(IndexError):
        g.neighbor_sets(3)


@pytest.mark.parametrize("parts", [1, 2, 5])
def test_partition_merge_preserves_edges(parts):
    mono, X = random_graph(4, d=3, n=20, robots=1)
    g = partition(mono, parts)
    assert g.num_robots == parts and g.num_poses == mono.num_poses
    back = merge(g)
    assert Counter(e.key() for e in back.edges) == Counter(e.key() for e in mono.edges)
    Xg = transfer(X, mono, g)
    assert objective(g, Xg) == pytest.approx(objective(mono, X), rel=1e-14)
    assert np.array_equal(transfer(Xg, g, mono), X)


def test_random_partition():
    mono, X = random_graph(5, d=2, n=30, robots=1)
    g = partition(mono, 4, random_assignment(7))
    assert min(g.sizes) >= 1
    assert sorted(g.source_index.tolist()) == list(range(30))
    assert objective(g, transfer(X, mono, g)) == pytest.approx(objective(mono, X), rel=1e-13)
    back = merge(g)
    assert Counter(e.key() for e in back.edges) == Counter(e.key() for e in mono.edges)


def test_partition_errors():
    mono = _chain(4)
    with pytest.raises(InvalidPartition):
        partition(mono, 5)
    with pytest.raises(InvalidPartition):
        partition(partition(mono, 2), 2)
    with pytest.raises(InvalidPartition):
        partition(mono, 2, lambda n, p: np.zeros(n, dtype=int))


def test_inter_edge_flags():
    g = partition(_chain(6), 3)
    assert g.inter.tolist() == [False, True, False, True, False]
