"""SO(d) / SE(d) primitives shared by the solvers.

A pose block ``X`` for ``m`` poses is a ``d x (d+1)m`` array laid out as
``[t_1 ... t_m | R_1 ... R_m]``: translations first, then the rotations
stacked horizontally.  Internally rotations are often handled as an
``(m, d, d)`` stack; :func:`stack_blocks` and :func:`hstack_blocks` convert
between the two views.

Everything here is dimension generic, ``d`` in {2, 3} share one code path.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateProjection, DimensionMismatch

_DEGENERATE_RTOL = 1e-12


def stack_blocks(R: np.ndarray, d: int | None = None) -> np.ndarray:
    """``d x dm`` horizontal block row -> ``(m, d, d)`` stack."""
    R = np.asarray(R, dtype=float)
    if d is None:
        d = R.shape[0]
    if R.ndim != 2 or R.shape[0] != d or R.shape[1] % d:
        raise DimensionMismatch(f"expected a {d} x {d}m block row, got {R.shape}")
    m = R.shape[1] // d
    return R.reshape(d, m, d).transpose(1, 0, 2)


def hstack_blocks(stack: np.ndarray) -> np.ndarray:
    """``(m, d, d)`` stack -> ``d x dm`` horizontal block row."""
    stack = np.asarray(stack, dtype=float)
    m, d, _ = stack.shape
    return stack.transpose(1, 0, 2).reshape(d, m * d)


def split_pose_block(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``[t R]`` into ``t`` (d x m) and the rotation stack (m, d, d)."""
    X = np.asarray(X, dtype=float)
    d, cols = X.shape
    if cols % (d + 1):
        raise DimensionMismatch(f"{cols} columns is not a multiple of d+1={d + 1}")
    m = cols // (d + 1)
    return X[:, :m], stack_blocks(X[:, m:], d)


def join_pose_block(t: np.ndarray, R: np.ndarray) -> np.ndarray:
    return np.hstack([np.asarray(t, dtype=float), hstack_blocks(R)])


def random_rotation(rng: np.random.Generator, d: int, size: int | None = None) -> np.ndarray:
    """Haar-distributed rotation(s) from QR of a Gaussian matrix."""
    shape = (1 if size is None else size, d, d)
    Q, Rq = np.linalg.qr(rng.standard_normal(shape))
    Q = Q * np.sign(np.diagonal(Rq, axis1=1, axis2=2))[:, None, :]
    flip = np.linalg.det(Q) < 0
    Q[flip, :, 0] *= -1.0
    return Q[0] if size is None else Q


def project_rotations(M: np.ndarray) -> np.ndarray:
    """Closest rotation (Frobenius norm) to every block of an ``(m, d, d)`` stack.

    When ``det(U V^T) < 0`` the singular vector paired with the smallest
    singular value is negated.  A block whose two smallest singular values
    both vanish has no unique answer and raises
    :class:`~mmpgo.errors.DegenerateProjection` carrying the block index.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 3 or M.shape[1] != M.shape[2]:
        raise DimensionMismatch(f"expected an (m, d, d) stack, got {M.shape}")
    if not np.all(np.isfinite(M)):
        bad = int(np.flatnonzero(~np.isfinite(M).all(axis=(1, 2)))[0])
        raise DegenerateProjection(f"non-finite block {bad}", pose=bad)
    U, S, Vt = np.linalg.svd(M)
    scale = np.maximum(S[:, 0], 1.0)
    degenerate = S[:, -2] <= _DEGENERATE_RTOL * scale
    if np.any(degenerate):
        bad = int(np.flatnonzero(degenerate)[0])
        raise DegenerateProjection(
            f"block {bad} has rank < d-1; its closest rotation is not unique", pose=bad
        )
    sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    U[:, :, -1] *= sign[:, None]
    return U @ Vt


def project_to_rotation(M: np.ndarray) -> np.ndarray:
    """Closest element of SO(d) to a single ``d x d`` matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {M.shape}")
    return project_rotations(M[None])[0]


def sym_block_diag(Z: np.ndarray, d: int) -> np.ndarray:
    """``1/2 BlockDiag_d(Z + Z^T)`` for a square ``dm x dm`` matrix."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1] or Z.shape[0] % d:
        raise DimensionMismatch(f"{Z.shape} is not square with size divisible by {d}")
    m = Z.shape[0] // d
    out = np.zeros_like(Z)
    for i in range(m):
        s = slice(d * i, d * (i + 1))
        blk = Z[s, s]
        out[s, s] = 0.5 * (blk + blk.T)
    return out


def tangent_project(R: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Project ambient directions ``G`` onto the tangent spaces at ``R``.

    Both arguments are ``(m, d, d)`` stacks; each block becomes
    ``G_i - R_i sym(R_i^T G_i)``.
    """
    RtG = np.transpose(R, (0, 2, 1)) @ G
    return G - R @ (0.5 * (RtG + np.transpose(RtG, (0, 2, 1))))


def riemannian_gradient(X: np.ndarray, euclid_grad: np.ndarray) -> np.ndarray:
    """Riemannian gradient on ``R^{d x m} x SO(d)^m`` from the Euclidean one.

    ``X`` is one robot's block ``[t R]`` (a matrix or a ``PoseBlock``).
    Translation columns are copied; each rotation block gets
    ``grad_R - R SymBlockDiag(R^T grad_R)``.
    """
    X = np.asarray(getattr(X, "matrix", X), dtype=float)
    euclid_grad = np.asarray(euclid_grad, dtype=float)
    if X.shape != euclid_grad.shape:
        raise DimensionMismatch(f"gradient shape {euclid_grad.shape} != iterate shape {X.shape}")
    t, R = split_pose_block(X)
    m = t.shape[1]
    out = euclid_grad.copy()
    G = stack_blocks(euclid_grad[:, m:], X.shape[0])
    out[:, m:] = hstack_blocks(tangent_project(R, G))
    return out


def retract(X: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Projection retraction: ``(t + dt, proj_SO(d)(R + dR))`` blockwise."""
    X = np.asarray(X, dtype=float)
    if X.shape != np.shape(delta):
        raise DimensionMismatch(f"step shape {np.shape(delta)} != iterate shape {X.shape}")
    d = X.shape[0]
    m = X.shape[1] // (d + 1)
    Y = X + delta
    Y[:, m:] = hstack_blocks(project_rotations(stack_blocks(Y[:, m:], d)))
    return Y


def rotation_error(R: np.ndarray) -> float:
    """Largest deviation of a rotation stack from orthogonality/unit det."""
    R = np.asarray(R, dtype=float)
    eye = np.eye(R.shape[-1])
    ortho = np.abs(np.transpose(R, (0, 2, 1)) @ R - eye).max(initial=0.0)
    det = np.abs(np.linalg.det(R) - 1.0).max(initial=0.0)
    return float(max(ortho, det))


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of each rotation in an ``(m, d, d)`` stack."""
    R = np.asarray(R, dtype=float)
    d = R.shape[-1]
    if d == 2:
        return np.abs(np.arctan2(R[:, 1, 0], R[:, 0, 0]))
    c = (np.trace(R, axis1=1, axis2=2) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def so_exp(omega: np.ndarray, d: int) -> np.ndarray:
    """Exponential map for a stack of rotation vectors (angle for d=2)."""
    omega = np.asarray(omega, dtype=float)
    if d == 2:
        th = omega.reshape(-1)
        c, s = np.cos(th), np.sin(th)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    omega = omega.reshape(-1, 3)
    th = np.linalg.norm(omega, axis=1)
    K = np.zeros((len(omega), 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -omega[:, 2], omega[:, 1], -omega[:, 0]
    K = K - np.transpose(K, (0, 2, 1))
    small = th < 1e-12
    a = np.where(small, 1.0, np.sin(th) / np.where(small, 1.0, th))
    b = np.where(small, 0.5, (1.0 - np.cos(th)) / np.where(small, 1.0, th) ** 2)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)
