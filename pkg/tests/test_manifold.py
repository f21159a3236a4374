import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmpgo.errors import DegenerateProjection, DimensionMismatch
from mmpgo.manifold import (
    hstack_blocks,
    project_rotations,
    project_to_rotation,
    random_rotation,
    retract,
    riemannian_gradient,
    rotation_angle,
    rotation_error,
    so_exp,
    stack_blocks,
    sym_block_diag,
    tangent_project,
)


def _brute_force_projection(M, d, samples=20000, seed=0):
    """Best of many random rotations, refined by a local search on exp coordinates."""
    rng = np.random.default_rng(seed)
    Rs = random_rotation(rng, d, samples)
    best = Rs[np.argmin(np.sum((Rs - M) ** 2, axis=(1, 2)))]
    k = 1 if d == 2 else 3
    step = 0.05
    for _ in range(400):
        cand = best @ so_exp(step * rng.normal(size=(32, k)), d)
        i = np.argmin(np.sum((cand - M) ** 2, axis=(1, 2)))
        if np.sum((cand[i] - M) ** 2) < np.sum((best - M) ** 2):
            best = cand[i]
        else:
            step *= 0.9
    return best


@pytest.mark.parametrize("d", [2, 3])
def test_projection_matches_brute_force(d, rng):
    for _ in range(3):
        M = rng.normal(size=(d, d))
        R = project_to_rotation(M)
        ref = _brute_force_projection(M, d)
        assert rotation_error(R[None]) < 1e-12
        assert np.sum((R - M) ** 2) <= np.sum((ref - M) ** 2) + 1e-9
        assert np.allclose(R, ref, atol=1e-3)


def test_projection_fixes_reflections():
    M = np.diag([1.0, 2.0, -3.0])
    R = project_to_rotation(M)
    assert np.linalg.det(R) == pytest.approx(1.0)
    # the sign flip goes to the smallest singular direction
    assert np.allclose(R, np.diag([-1.0, 1.0, -1.0]))


def test_projection_degenerate_raises_with_index():
    M = np.stack([np.eye(3), np.diag([1.0, 0.0, 0.0])])
    with pytest.raises(DegenerateProjection) as info:
        project_rotations(M)
    assert info.value.pose == 1


def test_projection_of_rotation_is_identity_map(rng):
    R = random_rotation(rng, 3, 10)
    assert np.allclose(project_rotations(R), R, atol=1e-14)


def test_shape_errors():
    with pytest.raises(DimensionMismatch):
        project_rotations(np.eye(3))
    with pytest.raises(DimensionMismatch):
        riemannian_gradient(np.zeros((3, 8)), np.zeros((3, 4)))
    with pytest.raises(DimensionMismatch):
        retract(np.zeros((2, 3)), np.zeros((2, 6)))
    with pytest.raises(DimensionMismatch):
        sym_block_diag(np.zeros((5, 5)), 2)


def test_block_stacking_round_trip(rng):
    R = rng.normal(size=(4, 3, 3))
    H = hstack_blocks(R)
    assert H.shape == (3, 12)
    assert np.array_equal(stack_blocks(H, 3), R)


def test_sym_block_diag(rng):
    Z = rng.normal(size=(6, 6))
    S = sym_block_diag(Z, 3)
    assert np.allclose(S[:3, :3], 0.5 * (Z[:3, :3] + Z[:3, :3].T))
    assert np.all(S[:3, 3:] == 0) and np.all(S[3:, :3] == 0)


def _tangent_basis(X):
    """Orthonormal basis of the tangent space at ``X`` (as ambient matrices)."""
    d = X.shape[0]
    m = X.shape[1] // (d + 1)
    out = []
    for c, r in itertools.product(range(m), range(d)):
        E = np.zeros_like(X)
        E[r, c] = 1.0
        out.append(E)
    gens = []
    for a, b in itertools.combinations(range(d), 2):
        K = np.zeros((d, d))
        K[a, b], K[b, a] = 1.0, -1.0
        gens.append(K / np.sqrt(2.0))
    for i in range(m):
        Ri = X[:, m + d * i : m + d * (i + 1)]
        for K in gens:
            E = np.zeros_like(X)
            E[:, m + d * i : m + d * (i + 1)] = Ri @ K
            out.append(E)
    return out


def _toy_cost(X, A, C):
    """Smooth non-quadratic test function on the pose manifold."""
    return float(np.sum(A * X) + 0.5 * np.sum((X @ C) * X) + np.sum(np.sin(X)))


def _toy_grad(X, A, C):
    return A + X @ (0.5 * (C + C.T)) + np.cos(X)


@pytest.mark.parametrize("d", [2, 3])
def test_riemannian_gradient_finite_differences(d, rng):
    m = 3
    for _ in range(5):
        t = rng.normal(size=(m, d))
        R = random_rotation(rng, d, m)
        X = np.hstack([t.T, hstack_blocks(R)])
        A = rng.normal(size=X.shape)
        C = rng.normal(size=(X.shape[1],) * 2)
        rg = riemannian_gradient(X, _toy_grad(X, A, C))
        h = 1e-5
        for E in _tangent_basis(X):
            fd = (_toy_cost(retract(X, h * E), A, C) - _toy_cost(retract(X, -h * E), A, C)) / (2 * h)
            assert fd == pytest.approx(np.sum(rg * E), abs=1e-7)


def test_riemannian_gradient_is_tangent(rng):
    R = random_rotation(rng, 3, 5)
    G = rng.normal(size=(5, 3, 3))
    T = tangent_project(R, G)
    RtT = np.transpose(R, (0, 2, 1)) @ T
    assert np.allclose(RtT + np.transpose(RtT, (0, 2, 1)), 0.0, atol=1e-12)
    # projecting twice changes nothing
    assert np.allclose(tangent_project(R, T), T, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.sampled_from([2, 3]), scale=st.floats(1e-3, 3.0))
def test_retraction_stays_on_manifold(seed, d, scale):
    rng = np.random.default_rng(seed)
    m = 4
    X = np.hstack([rng.normal(size=(d, m)), hstack_blocks(random_rotation(rng, d, m))])
    delta = scale * rng.normal(size=X.shape)
    Y = retract(X, delta)
    assert rotation_error(stack_blocks(Y[:, m:], d)) < 1e-12
    assert np.array_equal(Y[:, :m], X[:, :m] + delta[:, :m])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.sampled_from([2, 3]))
def test_projection_is_closest_among_samples(seed, d):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(d, d))
    R = project_to_rotation(M)
    others = random_rotation(rng, d, 200)
    assert np.sum((R - M) ** 2) <= np.min(np.sum((others - M) ** 2, axis=(1, 2))) + 1e-10


def test_so_exp_and_angle(rng):
    w = rng.normal(size=(6, 3))
    w *= (np.linspace(0.1, 3.0, 6) / np.linalg.norm(w, axis=1))[:, None]
    R = so_exp(w, 3)
    assert rotation_error(R) < 1e-12
    assert np.allclose(rotation_angle(R), np.linspace(0.1, 3.0, 6))
    R2 = so_exp(np.array([0.7, -2.0]), 2)
    assert np.allclose(rotation_angle(R2), [0.7, 2.0])
    assert np.allclose(so_exp(np.zeros(3), 3)[0], np.eye(3))
