import numpy as np
import pytest

from mmpgo.bench.evaluation import align_and_rmse
from mmpgo.bench.synthetic import random_graph
from mmpgo.chordal import (
    amm_chordal,
    chordal_initialization,
    project_rotations_relaxed,
    rotation_objective,
    rotation_problem,
    translation_init,
    translation_objective,
    translation_problem,
)
from mmpgo.errors import InvalidParameter
from mmpgo.manifold import rotation_error
from mmpgo.quadratic import objective


@pytest.fixture(scope="module")
def graph3():
    return random_graph(1, d=3, n=30, robots=3)[0]


def test_direct_solution_is_stationary(graph3):
    prob = rotation_problem(graph3)
    V = prob.solve_direct()
    G = prob.gradient(V)
    free = np.setdiff1d(np.arange(V.shape[1]), prob.anchor_cols)
    assert np.abs(G[:, free]).max() < 1e-9
    assert np.array_equal(V[:, :3], np.eye(3))


def test_accelerated_mm_reaches_direct_optimum(graph3):
    prob = rotation_problem(graph3)
    F_star = prob.objective(prob.solve_direct())
    trace, V = amm_chordal(graph3, iters=1000)
    assert trace.F[-1] - F_star <= 1e-9 * max(1.0, F_star)
    assert np.all(trace.F >= F_star - 1e-9)
    assert np.array_equal(V[:, :3], np.eye(3))


def test_gap_bounded_by_inverse_square(graph3):
    prob = rotation_problem(graph3)
    F_star = prob.objective(prob.solve_direct())
    trace, _ = amm_chordal(graph3, iters=200)
    k = np.arange(1, len(trace.F))
    scaled = (trace.F[1:] - F_star) * (k + 1) ** 2
    # gap_k (k + 1)^2 stays bounded by its early values
    assert scaled.max() <= 2.0 * scaled[:10].max()


def test_single_robot_is_exact_after_one_iteration():
    g = random_graph(3, d=3, n=20, robots=1)[0]
    prob = rotation_problem(g)
    F_star = prob.objective(prob.solve_direct())
    trace, _ = amm_chordal(g, iters=1)
    assert trace.F[1] == pytest.approx(F_star, rel=1e-10, abs=1e-12)


def test_translation_stage_matches_direct(graph3):
    R = project_rotations_relaxed(rotation_problem(graph3).solve_direct(), 3)
    tprob = translation_problem(graph3, R)
    t_star = tprob.solve_direct()
    trace, t = translation_init(graph3, R, iters=1000)
    assert np.allclose(t, t_star, atol=1e-6)
    assert np.array_equal(t[:, 0], np.zeros(3))
    assert translation_objective(graph3, R, t) == pytest.approx(tprob.objective(t_star), rel=1e-8)


def test_quadratic_forms_match_edge_sums(graph3, rng):
    prob = rotation_problem(graph3)
    V = prob.pin(rng.normal(size=(3, 90)))
    quad = 0.5 * np.sum((prob.H @ V.T).T * V) + np.sum(prob.B * V) + prob.c
    assert quad == pytest.approx(rotation_objective(graph3, V), rel=1e-10)
    R = project_rotations_relaxed(prob.solve_direct(), 3)
    tp = translation_problem(graph3, R)
    t = rng.normal(size=(3, 30))
    quad = 0.5 * np.sum((tp.H @ t.T).T * t) + np.sum(tp.B * t) + tp.c
    assert quad == pytest.approx(translation_objective(graph3, R, t), rel=1e-10)


@pytest.mark.parametrize("method", ["amm", "direct"])
def test_noise_free_graph_recovers_truth(method):
    g, truth = random_graph(4, d=3, n=25, robots=2, sigma_t=0.0, sigma_R=0.0)
    X = chordal_initialization(g, method, iters=1000)
    assert objective(g, X) < 1e-12
    rot, trans = align_and_rmse(g.matrix_to_poses(X), g.matrix_to_poses(truth))
    assert rot < 1e-6 and trans < 1e-6


def test_initialization_is_feasible_and_better_than_identity(graph3):
    X = chordal_initialization(graph3, "amm")
    R = graph3.matrix_to_poses(X)[1]
    assert rotation_error(R) < 1e-10
    assert objective(graph3, X) < objective(graph3, graph3.identity_estimate())


def test_amm_and_direct_agree(graph3):
    Xa = chordal_initialization(graph3, "amm", iters=1000)
    Xd = chordal_initialization(graph3, "direct")
    assert np.allclose(Xa, Xd, atol=1e-6)


def test_xi_recorded_and_validated(graph3):
    trace, _ = amm_chordal(graph3, iters=2)
    assert trace.xi_used == [0.0, 0.0, 0.0]
    with pytest.raises(InvalidParameter):
        rotation_problem(graph3, xi=-1.0)
    with pytest.raises(InvalidParameter):
        chordal_initialization(graph3, "sdp")
