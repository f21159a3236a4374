import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from helpers import perturb, random_iterate
from mmpgo.bench.synthetic import random_graph
from mmpgo.errors import InvalidParameter, NumericalFailure
from mmpgo.local_solver import LocalSolveConfig, minimize_node_surrogate, solve_node
from mmpgo.manifold import hstack_blocks, project_to_rotation, random_rotation, rotation_error, stack_blocks
from mmpgo.quadratic import build_majorant, euclidean_gradient, surrogate_G_node


def _single_pose_problem(rng, d, c_t, c_R):
    A = np.hstack([rng.normal(size=(d, 1)), random_rotation(rng, d)])
    g = rng.normal(size=A.shape)
    gamma = sparse.diags([c_t] + [c_R] * d).tocsc()
    return A, g, gamma


@pytest.mark.parametrize("method", ["newton", "rgd"])
@pytest.mark.parametrize("d", [2, 3])
def test_single_pose_closed_form(method, d, rng):
    """With Gamma = diag(c_t, c_R I) the minimizer is a shifted translation and a projection."""
    for _ in range(5):
        A, g, gamma = _single_pose_problem(rng, d, 2.0, 3.0)
        cfg = LocalSolveConfig(method=method, grad_tol=1e-8, max_inner_iters=500)
        res = solve_node(A, A, gamma, g, cfg)
        t_star = A[:, 0] - g[:, 0] / 2.0
        R_star = project_to_rotation(3.0 * A[:, 1:] - g[:, 1:])
        assert np.allclose(res.X[:, 0], t_star, atol=1e-8)
        assert np.allclose(res.X[:, 1:], R_star, atol=1e-7)
        assert res.converged


def test_descent_and_feasibility(small_graphs, rng):
    cfg = LocalSolveConfig()
    for g in small_graphs:
        maj = build_majorant(g, 1e-3)
        Xk = random_iterate(g, rng)
        for a in range(g.num_robots):
            c = g.robot_cols(a)
            start = Xk[:, c]
            before, _ = surrogate_G_node(g, a, start, Xk, maj)
            blk = minimize_node_surrogate(g, a, start, Xk, maj, cfg)
            after, _ = surrogate_G_node(g, a, blk.matrix, Xk, maj)
            assert after <= before + 1e-12 * max(1.0, abs(before))
            assert rotation_error(blk.R) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), method=st.sampled_from(["newton", "rgd"]), d=st.sampled_from([2, 3]))
def test_solver_never_increases_model(seed, method, d):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, d=d, n=8, robots=2)[0]
    maj = build_majorant(g, 1e-3)
    Xk = random_iterate(g, rng)
    grad = euclidean_gradient(g, Xk)
    c = g.robot_cols(0)
    start = perturb(g, Xk, rng, 0.5)[:, c]
    res = solve_node(start, Xk[:, c], maj.gamma[0], grad[:, c], LocalSolveConfig(method=method))
    assert res.value <= res.start_value + 1e-12 * max(1.0, abs(res.start_value))


def test_newton_reaches_tight_tolerance(small_graphs, rng):
    g = small_graphs[1]
    maj = build_majorant(g, 1e-3)
    Xk = random_iterate(g, rng)
    grad = euclidean_gradient(g, Xk)
    c = g.robot_cols(1)
    res = solve_node(Xk[:, c], Xk[:, c], maj.gamma[1], grad[:, c], LocalSolveConfig(grad_tol=1e-9))
    assert res.converged and res.grad_norm <= 1e-9
    assert not res.capped


def test_zero_iterations_returns_start(rng):
    A, g, gamma = _single_pose_problem(rng, 3, 1.0, 1.0)
    res = solve_node(A, A, gamma, g, LocalSolveConfig(max_inner_iters=0))
    assert np.array_equal(res.X, A)
    assert res.capped


def test_nonfinite_gradient_raises(rng):
    A, g, gamma = _single_pose_problem(rng, 3, 1.0, 1.0)
    g[0, 0] = np.nan
    with pytest.raises(NumericalFailure) as info:
        solve_node(A, A, gamma, g)
    assert info.value.dump is not None


def test_config_validation():
    with pytest.raises(InvalidParameter):
        LocalSolveConfig(method="cg")
    with pytest.raises(InvalidParameter):
        LocalSolveConfig(armijo_shrink=1.5)
    with pytest.raises(InvalidParameter):
        LocalSolveConfig(grad_tol=0.0)


def test_start_block_rotations_unchanged_when_optimal(rng):
    """At a minimizer the solver returns immediately."""
    d = 3
    A, g, gamma = _single_pose_problem(rng, d, 1.0, 1.0)
    g[:] = 0.0
    res = solve_node(A, A, gamma, g)
    assert res.iterations == 0 and np.array_equal(res.X, A)
    R = stack_blocks(res.X[:, 1:], d)
    assert np.array_equal(hstack_blocks(R), A[:, 1:])
