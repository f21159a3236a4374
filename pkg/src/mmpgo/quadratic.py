"""Objective, gradient and majorant machinery for distributed PGO.

Two independent evaluation routes are kept on purpose: edge sums over the
measurement list, and quadratic forms built from sparse matrices.  The
tests cross-check one against the other.

Notation used in the code: ``M`` is the data matrix with
``F(X) = 1/2 tr(X M X^T)``; ``Omega`` the block-diagonal majorant Hessian
of the split surrogate ``E``; ``Gamma = Omega + xi I``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import InvalidParameter
from .graph import PoseGraph, as_matrix

DEFAULT_XI = 1e-3

_M_CACHE: "weakref.WeakKeyDictionary[PoseGraph, sparse.csc_matrix]" = weakref.WeakKeyDictionary()


def _outer_sum(n, idx, vals, w):
    """Sparse ``sum_e w_e V_e V_e^T`` with ``V_e`` supported on ``idx[e]``.

    ``idx`` is (m, k), ``vals`` (m, k, c) and ``w`` (m,).
    """
    if len(w) == 0:
        return sparse.csc_matrix((n, n))
    blocks = w[:, None, None] * (vals @ np.transpose(vals, (0, 2, 1)))
    rows = np.broadcast_to(idx[:, :, None], blocks.shape)
    cols = np.broadcast_to(idx[:, None, :], blocks.shape)
    return sparse.coo_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsc()


def _full_terms(g: PoseGraph, mask):
    """Rotation and translation incidence of unsplit edge terms."""
    d = g.d
    s, t = g.src_index[mask], g.dst_index[mask]
    m = len(s)
    rot_idx = np.hstack([g.R_cols[s], g.R_cols[t]])
    rot_val = np.concatenate([g.rot[mask], np.broadcast_to(-np.eye(d), (m, d, d))], axis=1)
    tr_idx = np.hstack([g.R_cols[s], g.t_col[s, None], g.t_col[t, None]])
    tr_val = np.concatenate([g.trans[mask], np.ones((m, 1)), -np.ones((m, 1))], axis=1)[:, :, None]
    return (rot_idx, rot_val, g.kappa[mask]), (tr_idx, tr_val, g.tau[mask])


def build_data_matrix(g: PoseGraph) -> sparse.csc_matrix:
    """Sparse symmetric PSD ``M`` such that ``F(X) = 1/2 tr(X M X^T)``."""
    cached = _M_CACHE.get(g)
    if cached is not None:
        return cached
    n = g.num_cols
    rot, tr = _full_terms(g, np.ones(g.num_edges, dtype=bool))
    M = _outer_sum(n, *rot) + _outer_sum(n, *tr)
    M = (0.5 * (M + M.T)).tocsc()
    M.sum_duplicates()
    M.sort_indices()
    _M_CACHE[g] = M
    return M


# -- objective and gradient ------------------------------------------------
def edge_residuals(g: PoseGraph, X):
    """Per-edge rotation residuals (m, d, d) and translation residuals (m, d)."""
    t, R = g.matrix_to_poses(X)
    Ri = R[g.src_index]
    r_rot = Ri @ g.rot - R[g.dst_index]
    r_tr = np.einsum("mij,mj->mi", Ri, g.trans) + t[g.src_index] - t[g.dst_index]
    return r_rot, r_tr


def edge_costs(g: PoseGraph, X) -> np.ndarray:
    """``1/2 [kappa |R_i R~ - R_j|^2 + tau |R_i t~ + t_i - t_j|^2]`` per edge."""
    r_rot, r_tr = edge_residuals(g, X)
    return 0.5 * (g.kappa * np.sum(r_rot**2, axis=(1, 2)) + g.tau * np.sum(r_tr**2, axis=1))


def objective(g: PoseGraph, X) -> float:
    """``F(X)`` as the explicit sum over measurements."""
    return float(np.sum(edge_costs(g, X)))


objective_edge_sum = objective


def objective_quadratic(M, X) -> float:
    X = as_matrix(X)
    return 0.5 * float(np.sum((M @ X.T).T * X))


def euclidean_gradient(g: PoseGraph, X) -> np.ndarray:
    """``X M`` (``d x (d+1)n``)."""
    X = g.check_matrix(X)
    return (build_data_matrix(g) @ X.T).T


def edge_gradient(g: PoseGraph, X) -> np.ndarray:
    """Euclidean gradient accumulated edge by edge from the closed-form partials."""
    X = g.check_matrix(X)
    r_rot, r_tr = edge_residuals(g, X)
    n, d = g.num_poses, g.d
    gt = np.zeros((n, d))
    gR = np.zeros((n, d, d))
    k = g.kappa[:, None, None]
    tau = g.tau[:, None]
    # rotation terms: grad_Ri = k r R~^T, grad_Rj = -k r
    np.add.at(gR, g.src_index, k * (r_rot @ np.transpose(g.rot, (0, 2, 1))))
    np.add.at(gR, g.dst_index, -k * r_rot)
    # translation terms: grad_ti = tau r, grad_Ri = tau r t~^T, grad_tj = -tau r
    np.add.at(gt, g.src_index, tau * r_tr)
    np.add.at(gt, g.dst_index, -tau * r_tr)
    np.add.at(gR, g.src_index, tau[:, :, None] * (r_tr[:, :, None] * g.trans[:, None, :]))
    return g.poses_to_matrix(gt, gR)


# -- majorant ----------------------------------------------------------------
@dataclass
class MajorantBlocks:
    """Block-diagonal majorant ``Omega`` and its regularized ``Gamma``.

    ``omega[a]`` and ``gamma[a]`` are robot ``a``'s diagonal blocks, each laid
    out ``[translations | rotations]`` so that ``omega[a][:n, :n]``,
    ``omega[a][:n, n:]`` and ``omega[a][n:, n:]`` are the tau, nu and kappa
    sub-blocks.
    """

    xi: float
    Omega: sparse.csc_matrix
    omega: list
    gamma: list

    @property
    def Gamma(self) -> sparse.csc_matrix:
        return (self.Omega + self.xi * sparse.identity(self.Omega.shape[0], format="csc")).tocsc()

    def sub_blocks(self, alpha: int, n_alpha: int):
        B = self.omega[alpha]
        return B[:n_alpha, :n_alpha], B[:n_alpha, n_alpha:], B[n_alpha:, n_alpha:]


def build_majorant(g: PoseGraph, xi: float = DEFAULT_XI) -> MajorantBlocks:
    """Hessian of the split surrogate ``E``; inter-node terms enter with doubled weight."""
    if not xi >= 0:
        raise InvalidParameter(f"xi must be nonnegative, got {xi}")
    n, d = g.num_cols, g.d
    intra = ~g.inter
    rot, tr = _full_terms(g, intra)
    Omega = _outer_sum(n, *rot) + _outer_sum(n, *tr)

    s, t = g.src_index[g.inter], g.dst_index[g.inter]
    m = len(s)
    k2, tau2 = 2.0 * g.kappa[g.inter], 2.0 * g.tau[g.inter]
    eye = np.broadcast_to(np.eye(d), (m, d, d))
    Omega = Omega + _outer_sum(n, g.R_cols[s], g.rot[g.inter], k2)
    Omega = Omega + _outer_sum(n, g.R_cols[t], eye, k2)
    src_idx = np.hstack([g.R_cols[s], g.t_col[s, None]])
    src_val = np.concatenate([g.trans[g.inter], np.ones((m, 1))], axis=1)[:, :, None]
    Omega = Omega + _outer_sum(n, src_idx, src_val, tau2)
    Omega = Omega + _outer_sum(n, g.t_col[t, None], np.ones((m, 1, 1)), tau2)
    Omega = (0.5 * (Omega + Omega.T)).tocsc()
    Omega.sum_duplicates()
    Omega.sort_indices()

    omega, gamma = [], []
    for a in range(g.num_robots):
        c = g.robot_cols(a)
        blk = Omega[c, c].tocsc()
        omega.append(blk)
        gamma.append((blk + xi * sparse.identity(blk.shape[0], format="csc")).tocsc())
    return MajorantBlocks(float(xi), Omega, omega, gamma)


# -- surrogates --------------------------------------------------------------
def separator_anchors(g: PoseGraph, Xk):
    """Anchors ``P`` (m_inter, d, d) and ``p`` (m_inter, d) of the inter-node split.

    ``P = 1/2 R_i R~ + 1/2 R_j`` and ``p = 1/2 (R_i t~ + t_i) + 1/2 t_j``, all
    evaluated at ``Xk``; the midpoint of the two split arguments makes the
    bound touch ``F`` at ``Xk``.
    """
    t, R = g.matrix_to_poses(Xk)
    s, e = g.src_index[g.inter], g.dst_index[g.inter]
    P = 0.5 * (R[s] @ g.rot[g.inter]) + 0.5 * R[e]
    p = 0.5 * (np.einsum("mij,mj->mi", R[s], g.trans[g.inter]) + t[s]) + 0.5 * t[e]
    return P, p


def surrogate_E(g: PoseGraph, X, Xk) -> float:
    """Upper bound ``E(X|Xk)`` evaluated as an edge sum."""
    X = g.check_matrix(X)
    costs = edge_costs(g, X)
    total = float(np.sum(costs[~g.inter]))
    if np.any(g.inter):
        P, p = separator_anchors(g, Xk)
        t, R = g.matrix_to_poses(X)
        s, e = g.src_index[g.inter], g.dst_index[g.inter]
        k, tau = g.kappa[g.inter], g.tau[g.inter]
        Rs = R[s]
        total += float(
            np.sum(k * np.sum((Rs @ g.rot[g.inter] - P) ** 2, axis=(1, 2)))
            + np.sum(tau * np.sum((np.einsum("mij,mj->mi", Rs, g.trans[g.inter]) + t[s] - p) ** 2, axis=1))
            + np.sum(k * np.sum((R[e] - P) ** 2, axis=(1, 2)))
            + np.sum(tau * np.sum((t[e] - p) ** 2, axis=1))
        )
    return total


def _quadratic_model(H, X, Xk, grad_k, F_k) -> float:
    D = as_matrix(X) - as_matrix(Xk)
    return 0.5 * float(np.sum((H @ D.T).T * D)) + float(np.sum(grad_k * D)) + F_k


def surrogate_E_quadratic(g: PoseGraph, majorant: MajorantBlocks, X, Xk) -> float:
    """``E(X|Xk) = 1/2 <Omega D, D> + <grad F(Xk), D> + F(Xk)`` with ``D = X - Xk``."""
    Xk = g.check_matrix(Xk)
    return _quadratic_model(majorant.Omega, X, Xk, euclidean_gradient(g, Xk), objective(g, Xk))


def surrogate_G(g: PoseGraph, majorant: MajorantBlocks, X, Xk) -> float:
    """``G(X|Xk)``: the ``E`` bound with the extra proximal term ``xi/2 |X - Xk|^2``."""
    Xk = g.check_matrix(Xk)
    return _quadratic_model(majorant.Gamma, X, Xk, euclidean_gradient(g, Xk), objective(g, Xk))


def anchor_values(g: PoseGraph, Xk) -> np.ndarray:
    """``Gbar^a(k)`` for every robot: intra costs plus half of each incident inter cost."""
    costs = edge_costs(g, Xk)
    w = np.where(g.inter, 0.5, 1.0) * costs
    out = np.bincount(g.src_robot, weights=w, minlength=g.num_robots)
    out += np.bincount(g.dst_robot[g.inter], weights=w[g.inter], minlength=g.num_robots)
    return out


def anchor_value(g: PoseGraph, alpha: int, Xk) -> float:
    return float(anchor_values(g, Xk)[alpha])


def node_model_increment(gamma, grad_alpha, X_alpha, anchor_alpha) -> float:
    """``G^a(X^a|.) - Gbar^a``: the quadratic and linear part only."""
    D = X_alpha - anchor_alpha
    return 0.5 * float(np.sum((gamma @ D.T).T * D)) + float(np.sum(grad_alpha * D))


def surrogate_G_node(g: PoseGraph, alpha: int, X_alpha, Xk, majorant: MajorantBlocks):
    """Per-robot surrogate ``G^a(X^a|Xk)`` and its anchor constant ``Gbar^a(k)``.

    Returns ``(value, anchor)``.
    """
    Xk = g.check_matrix(Xk)
    c = g.robot_cols(alpha)
    grad = euclidean_gradient(g, Xk)[:, c]
    gbar = anchor_value(g, alpha, Xk)
    value = node_model_increment(majorant.gamma[alpha], grad, as_matrix(X_alpha), Xk[:, c]) + gbar
    return value, gbar


# -- per-robot gradient operators ----------------------------------------------
@dataclass
class LocalOperator:
    """What one robot needs to evaluate its gradient block of ``1/2 tr(X H X^T) + <B, X>``.

    ``rows`` are the sorted global columns of ``X`` that couple to the robot's
    own columns ``cols``: its own poses plus the separator poses of its
    neighbours.  Shared-memory and message-passing runs both evaluate the
    gradient through :meth:`apply`, so their arithmetic is identical.
    """

    rows: np.ndarray
    cols: np.ndarray
    block_T: sparse.csr_matrix  # (H[rows][:, cols])^T
    linear: np.ndarray | None = None  # B[:, cols]

    def apply(self, X_rows: np.ndarray) -> np.ndarray:
        out = (self.block_T @ X_rows.T).T
        if self.linear is not None:
            out = out + self.linear
        return out


def local_operators(H, col_blocks, B=None) -> list:
    """Build one :class:`LocalOperator` per column block of the symmetric matrix ``H``."""
    H = sparse.csc_matrix(H)
    ops = []
    for cols in col_blocks:
        cols = np.asarray(cols)
        sub = H[:, cols]
        rows = np.unique(np.concatenate([sub.indices, cols]))
        blk = H[rows][:, cols].T.tocsr()
        blk.sort_indices()
        ops.append(LocalOperator(rows, cols, blk, None if B is None else np.asarray(B)[:, cols]))
    return ops


def robot_col_blocks(g: PoseGraph) -> list:
    return [np.arange(g.col_offsets[a], g.col_offsets[a + 1]) for a in range(g.num_robots)]


def blockwise_gradient(ops, X) -> np.ndarray:
    """Assemble the full gradient from the per-robot operators."""
    out = np.empty_like(X)
    for op in ops:
        out[:, op.cols] = op.apply(X[:, op.rows])
    return out
