"""MM-PGO and AMM-PGO outer loops (shared-memory drivers).

The per-robot update rules live in :func:`mm_node_step` and
:func:`amm_node_step` so that :mod:`mmpgo.distributed` runs exactly the same
arithmetic, with only the gradient refresh done from exchanged messages.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure
from .graph import PoseGraph
from .local_solver import LocalSolveConfig, solve_node
from .manifold import hstack_blocks, project_rotations, stack_blocks, tangent_project
from .quadratic import (
    DEFAULT_XI,
    anchor_values,
    blockwise_gradient,
    build_data_matrix,
    build_majorant,
    local_operators,
    node_model_increment,
    objective,
    robot_col_blocks,
)


@dataclass
class RunRecord:
    """One row of the per-iteration trace."""

    k: int
    F: float
    grad_norm: float
    wall_ms: float
    bytes: int = 0


@dataclass
class SolverRun:
    X: np.ndarray
    records: list = field(default_factory=list)
    termination: str = "iteration budget"
    restarts: list = field(default_factory=list)  # per iteration, robots that restarted
    capped_solves: int = 0
    algorithm: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def F(self) -> np.ndarray:
        return np.array([r.F for r in self.records])

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    @property
    def bytes(self) -> np.ndarray:
        return np.array([r.bytes for r in self.records], dtype=np.int64)


def gradient_norm(g: PoseGraph, X, euclid_grad=None) -> float:
    """Frobenius norm of the Riemannian gradient of ``F`` at ``X``."""
    X = g.check_matrix(X)
    if euclid_grad is None:
        euclid_grad = (build_data_matrix(g) @ X.T).T
    R = stack_blocks(X[:, g.R_cols.reshape(-1)], g.d)
    G = stack_blocks(euclid_grad[:, g.R_cols.reshape(-1)], g.d)
    rot = tangent_project(R, G)
    return math.sqrt(float(np.sum(euclid_grad[:, g.t_col] ** 2) + np.sum(rot**2)))


def retract_to_manifold(X_block: np.ndarray) -> np.ndarray:
    """Project the rotation blocks of an ambient pose block onto SO(d)."""
    d = X_block.shape[0]
    m = X_block.shape[1] // (d + 1)
    out = X_block.copy()
    out[:, m:] = hstack_blocks(project_rotations(stack_blocks(X_block[:, m:], d)))
    return out


# -- per-robot steps --------------------------------------------------------------
def mm_node_step(X_k, grad_k, gamma, cfg):
    """One MM-PGO update of a robot's block; returns the local solve result."""
    return solve_node(X_k, X_k, gamma, grad_k, cfg)


@dataclass
class NesterovState:
    """Momentum bookkeeping of one robot in AMM-PGO."""

    s: float
    X_prev: np.ndarray
    grad_prev: np.ndarray
    gamma: float = 0.0
    anchor: float = 0.0  # Gbar^a(k)
    Y: np.ndarray | None = None
    grad_Y: np.ndarray | None = None

    @classmethod
    def initial(cls, X0, grad0, anchor=0.0):
        return cls(1.0, X0.copy(), grad0.copy(), anchor=anchor)


def nesterov_s_next(s: float) -> float:
    return (math.sqrt(4.0 * s * s + 1.0) + 1.0) / 2.0


def amm_node_step(state: NesterovState, X_k, grad_k, gamma, cfg, accelerate=True):
    """One AMM-PGO update of a robot's block.

    Returns ``(result, restarted, increment)`` where ``increment`` is
    ``G^a(Z|X^k) - Gbar^a(k)`` for the momentum candidate ``Z``; the restart
    fires when it is positive.  ``state`` is advanced in place.
    """
    s_next = nesterov_s_next(state.s) if accelerate else 1.0
    gam = (state.s - 1.0) / s_next
    Y = X_k + gam * (X_k - state.X_prev)
    gY = grad_k + gam * (grad_k - state.grad_prev)
    state.gamma, state.Y, state.grad_Y = gam, Y, gY
    start = X_k if gam == 0.0 else retract_to_manifold(Y)
    res = solve_node(start, Y, gamma, gY, cfg)
    increment = node_model_increment(gamma, grad_k, res.X, X_k)
    restarted = increment > 0.0
    if restarted:
        res = solve_node(X_k, X_k, gamma, grad_k, cfg)
        s_next = max(0.5 * s_next, 1.0)
    state.s = s_next
    state.X_prev = X_k.copy()
    state.grad_prev = grad_k.copy()
    return res, restarted, increment


# -- drivers ------------------------------------------------------------------------
def _record(g, X, grad, k, t0, nbytes=0):
    F = objective(g, X)
    gn = gradient_norm(g, X, grad)
    if not (np.isfinite(F) and np.isfinite(gn)):
        raise NumericalFailure(f"non-finite objective at iteration {k}", dump=X.copy(), iteration=k)
    return RunRecord(k, F, gn, 1e3 * (time.perf_counter() - t0), nbytes)


def _run(g, X0, xi, iters, cfg, tol, algorithm, accelerate=True, callback=None):
    cfg = cfg or LocalSolveConfig()
    t0 = time.perf_counter()
    ops = local_operators(build_data_matrix(g), robot_col_blocks(g))
    maj = build_majorant(g, xi)
    X = g.check_matrix(X0).copy()
    grad = blockwise_gradient(ops, X)
    run = SolverRun(X, algorithm=algorithm)
    run.records.append(_record(g, X, grad, 0, t0))
    cols = [g.robot_cols(a) for a in range(g.num_robots)]
    states = None
    if algorithm == "amm":
        gbar = anchor_values(g, X)
        states = [NesterovState.initial(X[:, c], grad[:, c], gbar[a]) for a, c in enumerate(cols)]
    if tol > 0 and run.records[0].grad_norm < tol:
        run.termination = "gradient tolerance"
        return run
    for k in range(iters):
        Xn = np.empty_like(X)
        restarted = []
        for a, c in enumerate(cols):
            try:
                if states is None:
                    res = mm_node_step(X[:, c], grad[:, c], maj.gamma[a], cfg)
                else:
                    res, rs, _ = amm_node_step(states[a], X[:, c], grad[:, c], maj.gamma[a], cfg, accelerate)
                    if rs:
                        restarted.append(a)
            except NumericalFailure as exc:
                exc.iteration = k
                raise
            run.capped_solves += res.capped
            Xn[:, c] = res.X
        X = Xn
        grad = blockwise_gradient(ops, X)
        if states is not None:
            gbar = anchor_values(g, X)
            for a, st in enumerate(states):
                st.anchor = gbar[a]
        run.restarts.append(restarted)
        run.records.append(_record(g, X, grad, k + 1, t0))
        run.X = X
        if callback is not None:
            callback(k + 1, X, run)
        if tol > 0 and run.records[-1].grad_norm < tol:
            run.termination = "gradient tolerance"
            break
    return run


def mm_pgo(g: PoseGraph, X0, xi=DEFAULT_XI, iters=100, cfg=None, tol=0.0, callback=None) -> SolverRun:
    """Majorization minimization for distributed PGO.

    Every iteration each robot minimizes its surrogate ``G^a(.|X^k)`` from
    ``X^{a(k)}``; the gradient ``X^{k+1} M`` is then refreshed.  ``tol > 0``
    enables early stopping on the Riemannian gradient norm.
    """
    return _run(g, X0, xi, iters, cfg, tol, "mm", callback=callback)


def amm_pgo(
    g: PoseGraph, X0, xi=DEFAULT_XI, iters=100, cfg=None, tol=0.0, accelerate=True, callback=None
) -> SolverRun:
    """Accelerated MM with per-robot Nesterov momentum and adaptive restart.

    ``accelerate=False`` pins every momentum scalar at 1, which reduces the
    method to :func:`mm_pgo`.
    """
    return _run(g, X0, xi, iters, cfg, tol, "amm", accelerate=accelerate, callback=callback)
