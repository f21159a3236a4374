"""Distributed chordal initialization.

Rotations are first estimated on the convex relaxation ``R^{d x dn}`` with
pose ``(0, 0)`` pinned to the identity, then projected blockwise onto SO(d).
Translations follow from the linear least-squares problem obtained by
fixing those rotations, with pose ``(0, 0)`` pinned to the origin.  Both
stages are solved by the same accelerated majorization minimization scheme:
inter-robot terms are split as in the PGO surrogate, every robot solves its
own quadratic subproblem exactly, and momentum follows Nesterov's sequence
without restarts.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import InvalidParameter, SingularSubproblem
from .graph import PoseGraph
from .linalg import SPDFactor
from .manifold import hstack_blocks, project_rotations, stack_blocks
from .quadratic import _outer_sum, blockwise_gradient, local_operators
from .solvers import RunRecord, nesterov_s_next

log = logging.getLogger(__name__)

XI_BUMP = 1e-8


@dataclass
class ChordalTrace:
    """Iterates of one accelerated chordal stage."""

    V: np.ndarray
    records: list = field(default_factory=list)
    xi_used: list = field(default_factory=list)  # per robot, after any automatic bump

    @property
    def F(self) -> np.ndarray:
        return np.array([r.F for r in self.records])


class SplitQuadratic:
    """Anchored convex quadratic ``F(V) = 1/2 tr(V H V^T) + <B, V> + c``.

    ``blocks[a]`` lists the columns owned by robot ``a``; ``majorant`` is the
    block-diagonal Hessian of the split surrogate (inter-robot terms
    doubled on each side) and ``anchor_cols`` are pinned to
    ``anchor_vals``.  ``edge_objective`` evaluates ``F`` as a sum of
    nonnegative terms, which is far more accurate near the optimum than the
    quadratic form.
    """

    def __init__(self, H, B, c, blocks, majorant, anchor_cols, anchor_vals, edge_objective, xi=0.0):
        if not xi >= 0:
            raise InvalidParameter(f"xi must be nonnegative, got {xi}")
        self.H = H.tocsc()
        self.B = B
        self.c = c
        self.blocks = blocks
        self.anchor_cols = np.asarray(anchor_cols, dtype=int)
        self.anchor_vals = anchor_vals
        self.edge_objective = edge_objective
        self.free, self.factors, self.xi_used = [], [], []
        anchored = set(self.anchor_cols.tolist())
        for cols in blocks:
            free_local = np.array([i for i, c_ in enumerate(cols) if c_ not in anchored], dtype=int)
            sub = majorant[cols][:, cols].tocsc()[free_local][:, free_local].tocsc()
            xi_a = xi
            try:
                fac = SPDFactor(sub + xi_a * sparse.identity(sub.shape[0], format="csc"))
            except SingularSubproblem:
                xi_a = max(xi, XI_BUMP)
                log.warning("singular chordal subproblem, raising xi to %g", xi_a)
                fac = SPDFactor(sub + xi_a * sparse.identity(sub.shape[0], format="csc"))
            self.free.append(free_local)
            self.factors.append(fac)
            self.xi_used.append(xi_a)
        self.ops = local_operators(self.H, blocks, B)

    def gradient(self, V):
        return blockwise_gradient(self.ops, V)

    def objective(self, V) -> float:
        return self.edge_objective(V)

    def pin(self, V):
        V[:, self.anchor_cols] = self.anchor_vals
        return V

    def block_step(self, a, Y_a, gY_a):
        """Exact minimizer of robot ``a``'s surrogate anchored at ``Y_a``."""
        Z = Y_a.copy()
        f = self.free[a]
        Z[:, f] = Y_a[:, f] - self.factors[a].solve(gY_a[:, f].T).T
        return Z

    def solve_direct(self) -> np.ndarray:
        """Global minimizer by one sparse solve (reference path)."""
        n = self.H.shape[0]
        free = np.setdiff1d(np.arange(n), self.anchor_cols)
        Hff = self.H[free][:, free].tocsc()
        rhs = self.B[:, free] + (self.H[self.anchor_cols][:, free].T @ self.anchor_vals.T).T
        V = np.zeros((self.B.shape[0], n))
        V[:, self.anchor_cols] = self.anchor_vals
        V[:, free] = -SPDFactor(Hff).solve(rhs.T).T
        return V


@dataclass
class MomentumState:
    """Per-robot Nesterov bookkeeping of the chordal iteration (no restart)."""

    s: float
    V_prev: np.ndarray
    grad_prev: np.ndarray

    @classmethod
    def initial(cls, V_a, grad_a):
        return cls(1.0, V_a.copy(), grad_a.copy())


def chordal_block_step(problem: SplitQuadratic, a: int, state: MomentumState, V_a, grad_a):
    """One accelerated update of robot ``a``'s block; advances ``state`` in place."""
    s_next = nesterov_s_next(state.s)
    gam = (state.s - 1.0) / s_next
    Y = V_a + gam * (V_a - state.V_prev)
    gY = grad_a + gam * (grad_a - state.grad_prev)
    Z = problem.block_step(a, Y, gY)
    state.s, state.V_prev, state.grad_prev = s_next, V_a.copy(), grad_a.copy()
    return Z


def free_gradient_norm(problem: SplitQuadratic, grad) -> float:
    """Gradient norm over the columns that are not pinned."""
    free = np.setdiff1d(np.arange(grad.shape[1]), problem.anchor_cols)
    return math.sqrt(float(np.sum(grad[:, free] ** 2)))


def accelerated_mm(problem: SplitQuadratic, V0, iters: int, tol: float = 0.0) -> ChordalTrace:
    """Nesterov-accelerated block MM on a :class:`SplitQuadratic` (no restart)."""
    t0 = time.perf_counter()
    V = problem.pin(np.array(V0, dtype=float))
    grad = problem.gradient(V)
    trace = ChordalTrace(V, xi_used=list(problem.xi_used))

    def rec(k):
        trace.records.append(
            RunRecord(k, problem.objective(V), free_gradient_norm(problem, grad), 1e3 * (time.perf_counter() - t0))
        )

    rec(0)
    blocks = problem.blocks
    states = [MomentumState.initial(V[:, b], grad[:, b]) for b in blocks]
    for k in range(iters):
        Vn = np.empty_like(V)
        for a, b in enumerate(blocks):
            Vn[:, b] = chordal_block_step(problem, a, states[a], V[:, b], grad[:, b])
        V = problem.pin(Vn)
        grad = problem.gradient(V)
        trace.V = V
        rec(k + 1)
        if tol > 0 and trace.records[-1].grad_norm < tol:
            break
    return trace


# -- rotation relaxation --------------------------------------------------------------
def _rot_cols(g: PoseGraph, poses):
    return (g.d * np.asarray(poses))[:, None] + np.arange(g.d)[None, :]


def rotation_objective(g: PoseGraph, R) -> float:
    """``F_R(R) = sum 1/2 kappa |R_i R~ - R_j|^2`` for a relaxed ``d x dn`` block row."""
    S = stack_blocks(R, g.d)
    r = S[g.src_index] @ g.rot - S[g.dst_index]
    return float(0.5 * np.sum(g.kappa * np.sum(r**2, axis=(1, 2))))


def rotation_problem(g: PoseGraph, xi: float = 0.0) -> SplitQuadratic:
    d, n = g.d, g.num_poses
    N = d * n
    ci, cj = _rot_cols(g, g.src_index), _rot_cols(g, g.dst_index)
    m = g.num_edges
    vals = np.concatenate([g.rot, np.broadcast_to(-np.eye(d), (m, d, d))], axis=1)
    H = _outer_sum(N, np.hstack([ci, cj]), vals, g.kappa)
    intra, inter = ~g.inter, g.inter
    maj = _outer_sum(N, np.hstack([ci, cj])[intra], vals[intra], g.kappa[intra])
    k2 = 2.0 * g.kappa[inter]
    maj = maj + _outer_sum(N, ci[inter], g.rot[inter], k2)
    maj = maj + _outer_sum(N, cj[inter], np.broadcast_to(np.eye(d), (int(inter.sum()), d, d)), k2)
    blocks = [np.arange(d * g.offsets[a], d * g.offsets[a + 1]) for a in range(g.num_robots)]
    return SplitQuadratic(
        H, np.zeros((d, N)), 0.0, blocks, maj.tocsc(), np.arange(d), np.eye(d),
        lambda V: rotation_objective(g, V), xi,
    )


def amm_chordal(g: PoseGraph, R0=None, xi: float = 0.0, iters: int = 200, tol: float = 0.0):
    """Accelerated MM on the relaxed rotation problem.

    ``R0`` defaults to all-identity blocks.  Returns ``(trace, R_relaxed)``
    where ``R_relaxed`` is the final ``d x dn`` block row.
    """
    prob = rotation_problem(g, xi)
    if R0 is None:
        R0 = np.tile(np.eye(g.d), (1, g.num_poses))
    trace = accelerated_mm(prob, R0, iters, tol)
    return trace, trace.V


def project_rotations_relaxed(R_relaxed, d: int) -> np.ndarray:
    """Blockwise SVD projection of a relaxed block row onto SO(d)^n (as a stack)."""
    return project_rotations(stack_blocks(R_relaxed, d))


# -- translation recovery ---------------------------------------------------------------
def translation_objective(g: PoseGraph, R, t) -> float:
    """``F_t(t) = sum 1/2 tau |R_i t~ + t_i - t_j|^2`` with rotations fixed."""
    R = np.asarray(R)
    tt = np.asarray(t).T
    r = np.einsum("mij,mj->mi", R[g.src_index], g.trans) + tt[g.src_index] - tt[g.dst_index]
    return float(0.5 * np.sum(g.tau * np.sum(r**2, axis=1)))


def translation_problem(g: PoseGraph, R, xi: float = 0.0) -> SplitQuadratic:
    """Quadratic of ``t`` (d x n) for fixed rotations ``R`` (n, d, d)."""
    n, d = g.num_poses, g.d
    i, j = g.src_index, g.dst_index
    m = g.num_edges
    idx = np.stack([i, j], axis=1)
    vals = np.tile(np.array([[1.0], [-1.0]]), (m, 1, 1))
    H = _outer_sum(n, idx, vals, g.tau)
    u = np.einsum("mij,mj->mi", np.asarray(R)[i], g.trans)
    B = np.zeros((d, n))
    np.add.at(B.T, i, g.tau[:, None] * u)
    np.add.at(B.T, j, -g.tau[:, None] * u)
    c = float(0.5 * np.sum(g.tau * np.sum(u**2, axis=1)))
    intra, inter = ~g.inter, g.inter
    maj = _outer_sum(n, idx[intra], vals[intra], g.tau[intra])
    t2 = 2.0 * g.tau[inter]
    ones = np.ones((int(inter.sum()), 1, 1))
    maj = maj + _outer_sum(n, i[inter, None], ones, t2) + _outer_sum(n, j[inter, None], ones, t2)
    blocks = [np.arange(g.offsets[a], g.offsets[a + 1]) for a in range(g.num_robots)]
    return SplitQuadratic(
        H, B, c, blocks, maj.tocsc(), np.array([0]), np.zeros((d, 1)),
        lambda V: translation_objective(g, R, V), xi,
    )


def translation_init(g: PoseGraph, R, xi: float = 0.0, iters: int = 200, tol: float = 0.0):
    """Accelerated MM on ``F_t`` with the given feasible rotations.

    Returns ``(trace, t)`` with ``t`` a ``d x n`` matrix whose first column is 0.
    """
    prob = translation_problem(g, R, xi)
    trace = accelerated_mm(prob, np.zeros((g.d, g.num_poses)), iters, tol)
    return trace, trace.V


def chordal_initialization(
    g: PoseGraph, method: str = "amm", xi: float = 0.0, iters: int = 200, tol: float = 0.0
) -> np.ndarray:
    """Full initializer: relaxed rotations, SVD projection, translations.

    ``method="amm"`` runs the distributed accelerated scheme for ``iters``
    iterations per stage; ``method="direct"`` solves each stage centrally by a
    single sparse factorization.  Returns a feasible ``d x (d+1)n`` estimate.
    """
    if method == "direct":
        R_rel = rotation_problem(g, 0.0).solve_direct()
    elif method == "amm":
        _, R_rel = amm_chordal(g, None, xi, iters, tol)
    else:
        raise InvalidParameter(f"unknown chordal method {method!r}")
    R = project_rotations_relaxed(R_rel, g.d)
    if method == "direct":
        t = translation_problem(g, R, 0.0).solve_direct()
    else:
        _, t = translation_init(g, R, xi, iters, tol)
    return g.poses_to_matrix(t.T, R)


def relaxed_to_stack(R_relaxed, d):
    return stack_blocks(R_relaxed, d)


def stack_to_relaxed(R):
    return hstack_blocks(R)
