"""Per-robot subproblem solver.

Each robot minimizes the quadratic surrogate

    q(Z) = 1/2 <Gamma (Z - A), Z - A> + <g, Z - A>

over ``R^{d x n} x SO(d)^n`` where ``A`` is the anchor point (the current
iterate, or the extrapolated point in the accelerated method) and ``g`` the
Euclidean gradient of ``F`` there.  Two methods share one line search on the
projection retraction:

``"rgd"``
    Riemannian gradient descent with a Cauchy initial step.
``"newton"``
    Riemannian Newton: the Hessian is assembled in an orthonormal tangent
    basis and factorized sparsely.  Where it is not positive definite the
    step falls back to the preconditioned gradient ``-P Gamma^{-1} P grad``
    (``P`` the tangent projection), which is always a descent direction.

Only accepted Armijo steps move the iterate, so the result never has a
larger value than the starting point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import InvalidParameter, NumericalFailure, SingularSubproblem
from .graph import PoseGraph, PoseBlock, as_matrix
from .linalg import SPDFactor, cached, cached_factor
from .manifold import (
    hstack_blocks,
    retract,
    riemannian_gradient,
    rotation_error,
    split_pose_block,
    stack_blocks,
    tangent_project,
)
from .quadratic import MajorantBlocks, euclidean_gradient


@dataclass(frozen=True)
class LocalSolveConfig:
    """Stopping rule and line-search constants for :func:`solve_node`.

    ``grad_tol=None`` means ``1e-7 * (1 + |grad q(start)|)``, relative to
    the Riemannian gradient at the starting point.  (The Euclidean gradient
    carries a large normal component on the rotations and would make the
    tolerance useless near a critical point.)  The first trial step of every line search is
    ``armijo_step`` times the exact minimizer of the ambient quadratic along
    the negative Riemannian gradient (``"rgd"``) or the full Newton step
    (``"newton"``), so the constants are scale free.
    """

    method: str = "newton"
    grad_tol: float | None = None
    max_inner_iters: int = 50
    armijo_step: float = 1.0
    armijo_shrink: float = 0.5
    armijo_c: float = 1e-4
    max_backtracks: int = 30

    def __post_init__(self):
        if self.method not in ("rgd", "newton"):
            raise InvalidParameter(f"unknown local method {self.method!r}")
        if not 0.0 < self.armijo_shrink < 1.0:
            raise InvalidParameter("armijo_shrink must lie in (0, 1)")
        if not 0.0 < self.armijo_c <= 0.5:
            raise InvalidParameter("armijo_c must lie in (0, 0.5]")
        if self.max_inner_iters < 0 or self.armijo_step <= 0:
            raise InvalidParameter("max_inner_iters must be >= 0 and armijo_step > 0")
        if self.grad_tol is not None and self.grad_tol <= 0:
            raise InvalidParameter("grad_tol must be positive")


@dataclass
class LocalSolveResult:
    X: np.ndarray
    value: float  # q(X), i.e. surrogate minus its constant
    start_value: float
    grad_norm: float
    iterations: int
    converged: bool
    capped: bool  # hit max_inner_iters before reaching grad_tol
    stalled: bool = False  # line search failed to find descent


def _check_finite(name, arr, Z, it):
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite {name} at inner iteration {it}", dump=Z.copy())


class _NodeModel:
    """``q`` and its derivatives on one robot's block."""

    def __init__(self, anchor, gamma, grad_anchor):
        self.anchor = anchor
        self.gamma = gamma
        self.g = grad_anchor
        self.d = anchor.shape[0]
        self.m = anchor.shape[1] // (self.d + 1)
        # Near a critical point the rotation gradient is almost entirely normal
        # to the manifold and <g, D> cancels catastrophically.  For an anchor on
        # SO(d) and Z on SO(d), <A S, D> = -1/2 <S, D^T D> blockwise with
        # S = sym(A^T g), which keeps full relative accuracy.
        _, A_R = split_pose_block(anchor)
        self.S = None
        self.g_lin = grad_anchor
        if self.m and rotation_error(A_R) < 1e-10:
            G = stack_blocks(grad_anchor[:, self.m :], self.d)
            AtG = np.transpose(A_R, (0, 2, 1)) @ G
            self.S = 0.5 * (AtG + np.transpose(AtG, (0, 2, 1)))
            self.g_lin = grad_anchor.copy()
            self.g_lin[:, self.m :] = hstack_blocks(G - A_R @ self.S)

    def _value(self, D, GD):
        q = 0.5 * float(np.sum(GD * D)) + float(np.sum(self.g_lin * D))
        if self.S is not None:
            DR = stack_blocks(D[:, self.m :], self.d)
            q -= 0.5 * float(np.sum(self.S * (np.transpose(DR, (0, 2, 1)) @ DR)))
        return q

    def value_and_egrad(self, Z):
        D = Z - self.anchor
        GD = (self.gamma @ D.T).T
        return self._value(D, GD), self.g + GD

    def value(self, Z):
        D = Z - self.anchor
        return self._value(D, (self.gamma @ D.T).T)

    def _project(self, R, V):
        out = V.copy()
        out[:, self.m :] = hstack_blocks(tangent_project(R, stack_blocks(V[:, self.m :], self.d)))
        return out

    def precondition(self, R, V):
        return self._project(R, cached_factor(self.gamma).solve(V.T).T)


def _skew_basis(d: int) -> np.ndarray:
    """Frobenius-orthonormal basis of the skew-symmetric d x d matrices."""
    out = []
    for i in range(d):
        for j in range(i + 1, d):
            E = np.zeros((d, d))
            E[j, i], E[i, j] = 1.0, -1.0
            out.append(E / np.sqrt(2.0))
    return np.array(out)


def _kron_vec(gamma, d):
    """``gamma kron I_d``: the action ``V -> V gamma`` on column-stacked ``vec(V)``."""
    return sparse.kron(gamma, sparse.identity(d, format="csc"), format="csc")


def _tangent_basis(Z, d, m):
    """Sparse orthonormal basis (columns) of the tangent space at ``Z`` in ``vec`` coordinates.

    The first ``d*m`` columns are translation unit vectors, then each pose
    contributes ``R_i E_k`` for the skew basis ``E_k``.
    """
    _, R = split_pose_block(Z)
    E = _skew_basis(d)
    p = len(E)
    n_rows = d * Z.shape[1]
    RE = R[:, None] @ E[None]  # (m, p, d, d): [pose, generator, row, col]
    rr, cc = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    pose = np.arange(m)[:, None, None, None]
    vec_idx = d * (m + d * pose + cc[None, None]) + rr[None, None]
    col = d * m + p * np.arange(m)[:, None, None, None] + np.arange(p)[None, :, None, None]
    rows = np.concatenate([np.arange(d * m), np.broadcast_to(vec_idx, RE.shape).ravel()])
    cols = np.concatenate([np.arange(d * m), np.broadcast_to(col, RE.shape).ravel()])
    vals = np.concatenate([np.ones(d * m), RE.ravel()])
    return sparse.csc_matrix((vals, (rows, cols)), shape=(n_rows, d * m + p * m)), E


def _newton_direction(model, Z, egrad, rgrad):
    """Exact Riemannian Newton step, or ``None`` if the Hessian is not positive definite.

    The Hessian ``P(Gamma V - V_R sym(R^T G_R))`` is assembled in an
    orthonormal tangent basis ``B`` as ``B^T (Gamma kron I) B - C`` where
    ``C`` is block diagonal with entries ``tr(E_k^T E_l S_i)``.
    """
    d, m = model.d, model.m
    B, E = _tangent_basis(Z, d, m)
    K = cached(model.gamma, f"kron{d}", lambda G: _kron_vec(G, d))
    H = (B.T @ K @ B).tocsc()
    if m:
        _, R = split_pose_block(Z)
        G = stack_blocks(egrad[:, m:], d)
        RtG = np.transpose(R, (0, 2, 1)) @ G
        S = 0.5 * (RtG + np.transpose(RtG, (0, 2, 1)))
        p = len(E)
        # C[i, k, l] = tr(E_k^T E_l S_i)
        C = np.einsum("kab,lac,ibc->ikl", E, E, S)
        base = d * m + p * np.arange(m)[:, None, None]
        ri = np.broadcast_to(base + np.arange(p)[None, :, None], C.shape).ravel()
        ci = np.broadcast_to(base + np.arange(p)[None, None, :], C.shape).ravel()
        H = H - sparse.csc_matrix((C.ravel(), (ri, ci)), shape=H.shape)
    b = B.T @ rgrad.ravel(order="F")
    try:
        y = SPDFactor(0.5 * (H + H.T)).solve(-b)
    except SingularSubproblem:
        return None
    return (B @ y).reshape(Z.shape, order="F")


def solve_node(start, anchor, gamma, grad_anchor, cfg: LocalSolveConfig | None = None) -> LocalSolveResult:
    """Minimize ``q`` from ``start`` (which must lie on the manifold)."""
    cfg = cfg or LocalSolveConfig()
    Z = np.array(start, dtype=float)
    model = _NodeModel(np.asarray(anchor, dtype=float), gamma, np.asarray(grad_anchor, dtype=float))
    q, egrad = model.value_and_egrad(Z)
    _check_finite("surrogate value", np.array(q), Z, 0)
    q0 = q
    it = 0
    stalled = False
    gn0 = None
    while True:
        rg = riemannian_gradient(Z, egrad)
        _check_finite("gradient", rg, Z, it)
        gn2 = float(np.sum(rg * rg))
        if gn0 is None:
            gn0 = np.sqrt(gn2)
            tol = cfg.grad_tol if cfg.grad_tol is not None else 1e-7 * (1.0 + gn0)
        if np.sqrt(gn2) <= tol or it >= cfg.max_inner_iters:
            break
        if cfg.method == "newton":
            direction = _newton_direction(model, Z, egrad, rg)
            if direction is None:
                _, R = split_pose_block(Z)
                direction = -model.precondition(R, rg)
            slope = float(np.sum(rg * direction))
            step = cfg.armijo_step
            if not slope < 0:
                direction, slope = -rg, -gn2
                curv = float(np.sum((gamma @ rg.T).T * rg))
                step = cfg.armijo_step * (gn2 / curv if curv > 0 else 1.0)
        else:
            direction, slope = -rg, -gn2
            curv = float(np.sum((gamma @ rg.T).T * rg))
            step = cfg.armijo_step * (gn2 / curv if curv > 0 else 1.0)
        for _ in range(cfg.max_backtracks):
            Zn = retract(Z, step * direction)
            qn = model.value(Zn)
            if np.isfinite(qn) and qn <= q + cfg.armijo_c * step * slope:
                break
            step *= cfg.armijo_shrink
        else:
            stalled = True
            break
        Z = Zn
        q, egrad = model.value_and_egrad(Z)
        it += 1
    gn = float(np.sqrt(gn2))
    return LocalSolveResult(
        X=Z,
        value=q,
        start_value=q0,
        grad_norm=gn,
        iterations=it,
        converged=gn <= tol,
        capped=gn > tol and not stalled,
        stalled=stalled,
    )


def minimize_node_surrogate(
    g: PoseGraph,
    alpha: int,
    start,
    Xk,
    majorant: MajorantBlocks,
    cfg: LocalSolveConfig | None = None,
) -> PoseBlock:
    """Approximately minimize ``G^a(.|Xk)`` starting from ``start``.

    Convenience wrapper over :func:`solve_node` that derives the anchor data
    from the full iterate ``Xk``.
    """
    Xk = g.check_matrix(Xk)
    c = g.robot_cols(alpha)
    start = start.matrix if isinstance(start, PoseBlock) else as_matrix(start)
    grad = euclidean_gradient(g, Xk)[:, c]
    res = solve_node(start, Xk[:, c], majorant.gamma[alpha], grad, cfg)
    return PoseBlock.from_matrix(alpha, res.X)
