"""Multi-robot pose graph data model.

Robots are numbered ``0 .. A-1`` and poses inside a robot ``0 .. n_a-1``.
The full iterate ``X`` is a ``d x (d+1)n`` matrix ``[X^0 ... X^{A-1}]`` where
each ``X^a = [t^a R^a]`` (see :mod:`mmpgo.manifold` for the block layout).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DimensionMismatch, InvalidGraph, InvalidPartition
from .manifold import hstack_blocks, rotation_error, split_pose_block, stack_blocks

_ROT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Measurement:
    """Noisy relative pose ``g_src^{-1} g_dst`` with isotropic weights."""

    src: tuple[int, int]
    dst: tuple[int, int]
    rot: np.ndarray
    trans: np.ndarray
    kappa: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        rot = np.array(self.rot, dtype=float)
        trans = np.array(self.trans, dtype=float).reshape(-1)
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "src", (int(self.src[0]), int(self.src[1])))
        object.__setattr__(self, "dst", (int(self.dst[0]), int(self.dst[1])))
        d = trans.size
        if rot.shape != (d, d):
            raise DimensionMismatch(f"rotation {rot.shape} does not match translation size {d}")
        if rotation_error(rot[None]) > _ROT_TOL:
            raise InvalidGraph(f"measurement {self.src}->{self.dst} rotation is not in SO({d})")
        if not (self.kappa > 0 and self.tau > 0):
            raise InvalidGraph(f"weights must be positive, got kappa={self.kappa}, tau={self.tau}")
        if self.src == self.dst:
            raise InvalidGraph(f"self-measurement on pose {self.src}")

    @property
    def inter(self) -> bool:
        return self.src[0] != self.dst[0]

    def key(self):
        """Hashable value identity, used for multiset comparisons."""
        return (self.src, self.dst, self.rot.tobytes(), self.trans.tobytes(), self.kappa, self.tau)


class PoseGraph:
    """Immutable multi-robot pose graph.

    Parameters
    ----------
    d : int
        Spatial dimension (2 or 3).
    sizes : sequence of int
        Number of poses owned by each robot.
    edges : sequence of Measurement
        Duplicates are allowed and kept as parallel measurements.
    require_connected : bool
        Reject graphs whose union graph is not weakly connected.
    source_index : array, optional
        For partitioned graphs, the original index of each global pose.
    """

    def __init__(
        self,
        d: int,
        sizes: Sequence[int],
        edges: Sequence[Measurement],
        require_connected: bool = True,
        source_index=None,
    ):
        if d not in (2, 3):
            raise DimensionMismatch(f"d must be 2 or 3, got {d}")
        self.d = int(d)
        self.sizes = tuple(int(s) for s in sizes)
        if not self.sizes or min(self.sizes) < 1:
            raise InvalidGraph("every robot must own at least one pose")
        self.edges = tuple(edges)
        self.num_robots = len(self.sizes)
        self.num_poses = sum(self.sizes)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.source_index = (
            np.arange(self.num_poses) if source_index is None else np.asarray(source_index, dtype=int)
        )

        m = len(self.edges)
        src = np.array([e.src for e in self.edges], dtype=int).reshape(m, 2)
        dst = np.array([e.dst for e in self.edges], dtype=int).reshape(m, 2)
        for name, ends in (("source", src), ("target", dst)):
            if m and (ends[:, 0].min() < 0 or ends[:, 0].max() >= self.num_robots):
                raise InvalidGraph(f"edge {name} robot out of range")
            if m and np.any((ends[:, 1] < 0) | (ends[:, 1] >= np.asarray(self.sizes)[ends[:, 0]])):
                raise InvalidGraph(f"edge {name} pose out of range")
        for e in self.edges:
            if e.trans.size != self.d:
                raise DimensionMismatch(f"measurement {e.src}->{e.dst} has dimension {e.trans.size}")

        self.src_robot, self.src_pose = src[:, 0], src[:, 1]
        self.dst_robot, self.dst_pose = dst[:, 0], dst[:, 1]
        self.src_index = self.offsets[self.src_robot] + self.src_pose
        self.dst_index = self.offsets[self.dst_robot] + self.dst_pose
        self.rot = np.array([e.rot for e in self.edges]).reshape(m, d, d)
        self.trans = np.array([e.trans for e in self.edges]).reshape(m, d)
        self.kappa = np.array([e.kappa for e in self.edges], dtype=float)
        self.tau = np.array([e.tau for e in self.edges], dtype=float)
        self.inter = self.src_robot != self.dst_robot

        # column layout of X
        self.pose_robot = np.repeat(np.arange(self.num_robots), self.sizes)
        self.col_offsets = (self.d + 1) * self.offsets
        local = np.arange(self.num_poses) - self.offsets[self.pose_robot]
        base = self.col_offsets[self.pose_robot]
        self.t_col = base + local
        nrob = np.asarray(self.sizes)[self.pose_robot]
        self.R_cols = (base + nrob + self.d * local)[:, None] + np.arange(self.d)[None, :]
        self.num_cols = (self.d + 1) * self.num_poses

        self._neighbors_out = [set() for _ in range(self.num_robots)]
        self._neighbors_in = [set() for _ in range(self.num_robots)]
        for a, b in zip(self.src_robot[self.inter], self.dst_robot[self.inter]):
            self._neighbors_out[a].add(int(b))
            self._neighbors_in[b].add(int(a))

        if require_connected and self.num_poses > 1:
            adj = coo_matrix(
                (np.ones(m), (self.src_index, self.dst_index)), shape=(self.num_poses,) * 2
            )
            ncomp, _ = connected_components(adj, directed=True, connection="weak")
            if ncomp != 1:
                raise InvalidGraph(f"pose graph has {ncomp} weakly connected components")

    # -- structure -------------------------------------------------------
    def __repr__(self):
        return (
            f"PoseGraph(d={self.d}, robots={self.num_robots}, poses={self.num_poses}, "
            f"edges={len(self.edges)}, inter={int(self.inter.sum())})"
        )

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def robot_cols(self, alpha: int) -> slice:
        return slice(self.col_offsets[alpha], self.col_offsets[alpha + 1])

    def robot_poses(self, alpha: int) -> slice:
        return slice(self.offsets[alpha], self.offsets[alpha + 1])

    def neighbor_sets(self, alpha: int) -> tuple[frozenset, frozenset]:
        """``(N_-, N_+)``: robots receiving edges from / sending edges to ``alpha``."""
        if not 0 <= alpha < self.num_robots:
            raise IndexError(f"robot {alpha} out of range")
        return frozenset(self._neighbors_out[alpha]), frozenset(self._neighbors_in[alpha])

    def neighbors(self, alpha: int) -> frozenset:
        out, inc = self.neighbor_sets(alpha)
        return out | inc

    def separators(self, owner: int, other: int) -> np.ndarray:
        """Local ids of ``owner``'s poses sharing an inter-node edge with ``other``."""
        a = (self.src_robot == owner) & (self.dst_robot == other) & self.inter
        b = (self.dst_robot == owner) & (self.src_robot == other) & self.inter
        return np.unique(np.concatenate([self.src_pose[a], self.dst_pose[b]]))

    # -- iterate layout --------------------------------------------------
    def poses_to_matrix(self, t: np.ndarray, R: np.ndarray) -> np.ndarray:
        """Assemble ``X`` from ``t`` (n, d) and rotations (n, d, d) in global pose order."""
        t = np.asarray(t, dtype=float)
        R = np.asarray(R, dtype=float)
        if t.shape != (self.num_poses, self.d) or R.shape != (self.num_poses, self.d, self.d):
            raise DimensionMismatch("pose arrays do not match the graph")
        X = np.empty((self.d, self.num_cols))
        X[:, self.t_col] = t.T
        X[:, self.R_cols.reshape(-1)] = hstack_blocks(R)
        return X

    def matrix_to_poses(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = self.check_matrix(X)
        t = X[:, self.t_col].T.copy()
        R = stack_blocks(X[:, self.R_cols.reshape(-1)], self.d).copy()
        return t, R

    def check_matrix(self, X) -> np.ndarray:
        X = as_matrix(X)
        if X.shape != (self.d, self.num_cols):
            raise DimensionMismatch(f"iterate shape {X.shape} != ({self.d}, {self.num_cols})")
        return X

    def identity_estimate(self) -> np.ndarray:
        t = np.zeros((self.num_poses, self.d))
        R = np.broadcast_to(np.eye(self.d), (self.num_poses, self.d, self.d))
        return self.poses_to_matrix(t, R)


@dataclass
class PoseBlock:
    """One robot's poses ``X^a = [t^a R^a]``."""

    robot: int
    t: np.ndarray  # d x n_a
    R: np.ndarray  # (n_a, d, d)

    @classmethod
    def from_matrix(cls, robot: int, X: np.ndarray) -> "PoseBlock":
        t, R = split_pose_block(X)
        return cls(robot, t, R)

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.t, hstack_blocks(self.R)])


@dataclass
class PoseEstimate:
    """Full multi-robot estimate; a thin view over the ``d x (d+1)n`` matrix."""

    graph: PoseGraph = field(repr=False)
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = self.graph.check_matrix(self.matrix)

    @classmethod
    def from_poses(cls, graph: PoseGraph, t, R) -> "PoseEstimate":
        return cls(graph, graph.poses_to_matrix(t, R))

    @property
    def blocks(self) -> list[PoseBlock]:
        return [self.block(a) for a in range(self.graph.num_robots)]

    def block(self, alpha: int) -> PoseBlock:
        return PoseBlock.from_matrix(alpha, self.matrix[:, self.graph.robot_cols(alpha)])

    def poses(self) -> tuple[np.ndarray, np.ndarray]:
        return self.graph.matrix_to_poses(self.matrix)


def as_matrix(X) -> np.ndarray:
    if isinstance(X, PoseEstimate):
        return X.matrix
    return np.asarray(X, dtype=float)


# -- partitioning ---------------------------------------------------------
def contiguous_assignment(n: int, parts: int) -> np.ndarray:
    """Pose ``k`` goes to robot ``floor(k * parts / n)``."""
    return (np.arange(n) * parts) // n


def random_assignment(seed: int = 0) -> Callable[[int, int], np.ndarray]:
    """Strategy assigning poses uniformly at random (every robot non-empty)."""

    def assign(n, parts):
        rng = np.random.default_rng(seed)
        labels = np.concatenate([np.arange(parts), rng.integers(0, parts, n - parts)])
        return rng.permutation(labels)

    return assign


_STRATEGIES = {"contiguous": contiguous_assignment}


def partition(mono: PoseGraph, parts: int, strategy="contiguous") -> PoseGraph:
    """Split a single-robot graph among ``parts`` robots.

    ``strategy`` is ``"contiguous"`` or a callable ``(n, parts) -> labels``.
    Poses of each robot keep their relative order; ``source_index`` of the
    result records where each pose came from.
    """
    if mono.num_robots != 1:
        raise InvalidPartition("partition expects a single-robot graph")
    n = mono.num_poses
    if parts < 1 or parts > n:
        raise InvalidPartition(f"cannot split {n} poses among {parts} robots")
    assign = _STRATEGIES[strategy] if isinstance(strategy, str) else strategy
    labels = np.asarray(assign(n, parts), dtype=int)
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= parts:
        raise InvalidPartition("strategy returned an invalid assignment")
    sizes = np.bincount(labels, minlength=parts)
    if np.any(sizes == 0):
        raise InvalidPartition("strategy left a robot without poses")
    order = np.lexsort((np.arange(n), labels))
    local = np.empty(n, dtype=int)
    local[order] = np.arange(n) - np.concatenate([[0], np.cumsum(sizes)])[labels[order]]
    src = mono.source_index
    edges = [
        Measurement(
            (labels[e.src[1]], local[e.src[1]]),
            (labels[e.dst[1]], local[e.dst[1]]),
            e.rot,
            e.trans,
            e.kappa,
            e.tau,
        )
        for e in mono.edges
    ]
    return PoseGraph(mono.d, sizes, edges, source_index=src[order])


def merge(g: PoseGraph) -> PoseGraph:
    """Relabel a partitioned graph back to one robot in original pose order."""
    pos = np.empty(g.num_poses, dtype=int)
    pos[g.source_index] = np.arange(g.num_poses)
    glob = lambda rp: int(g.source_index[g.offsets[rp[0]] + rp[1]])  # noqa: E731
    edges = [Measurement((0, glob(e.src)), (0, glob(e.dst)), e.rot, e.trans, e.kappa, e.tau) for e in g.edges]
    return PoseGraph(g.d, [g.num_poses], edges)


def transfer(X, src: PoseGraph, dst: PoseGraph) -> np.ndarray:
    """Re-lay an estimate of ``src`` onto ``dst`` (same poses, other partition)."""
    t, R = src.matrix_to_poses(X)
    ts = np.empty_like(t)
    Rs = np.empty_like(R)
    ts[src.source_index], Rs[src.source_index] = t, R
    return dst.poses_to_matrix(ts[dst.source_index], Rs[dst.source_index])
