"""Synthetic "cube" pose graphs.

A robot wanders over the points of a ``grid x grid x grid`` lattice with
spacing ``side_length``.  Consecutive poses are linked by odometry, and
pairs of non-consecutive poses that lie within one lattice spacing of each
other become loop closures with probability ``p_loop``.  Measurements are
corrupted by isotropic Gaussian translation noise and by rotations about a
uniformly random axis with Gaussian angle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InvalidParameter
from ..graph import Measurement, PoseGraph, partition, transfer
from ..manifold import so_exp

# the reference configuration has 3600 poses on a 12^3 lattice
POSES_PER_CELL = 3600 / 1728

_STEPS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])


@dataclass(frozen=True)
class CubeConfig:
    grid: int = 12
    side_length: float = 1.0
    p_loop: float = 0.1
    sigma_t: float = 0.02
    sigma_R: float = 0.02 * np.pi
    seed: int = 0
    num_poses: int | None = None  # default round(grid^3 * 3600 / 1728)

    def __post_init__(self):
        if self.grid < 2:
            raise InvalidParameter("grid must be at least 2")
        if not self.side_length > 0:
            raise InvalidParameter("side_length must be positive")
        if not 0.0 <= self.p_loop <= 1.0:
            raise InvalidParameter("p_loop must lie in [0, 1]")
        if self.sigma_t < 0 or self.sigma_R < 0:
            raise InvalidParameter("noise levels must be nonnegative")

    @property
    def poses(self) -> int:
        if self.num_poses is not None:
            return int(self.num_poses)
        return int(round(self.grid**3 * POSES_PER_CELL))

    @classmethod
    def parse(cls, text: str) -> "CubeConfig":
        """Parse ``GRID,SIDE,P,SIGMA_T,SIGMA_R,SEED``."""
        parts = [s.strip() for s in text.split(",")]
        if len(parts) != 6:
            raise InvalidParameter(f"cube description needs 6 comma separated fields, got {text!r}")
        try:
            return cls(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]), int(parts[5]))
        except ValueError as exc:
            raise InvalidParameter(f"bad cube description {text!r}: {exc}") from None


def _walk(grid: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Lattice random walk that prefers the least visited neighbours and avoids backtracking."""
    visits = np.zeros((grid, grid, grid), dtype=int)
    pos = np.array(rng.integers(0, grid, size=3))
    path = [pos]
    visits[tuple(pos)] += 1
    prev = None
    for _ in range(n - 1):
        cand = pos + _STEPS
        ok = np.all((cand >= 0) & (cand < grid), axis=1)
        if prev is not None and ok.sum() > 1:
            ok &= ~np.all(cand == prev, axis=1)
        cand = cand[ok]
        counts = visits[cand[:, 0], cand[:, 1], cand[:, 2]]
        best = cand[counts == counts.min()]
        nxt = best[rng.integers(len(best))]
        prev, pos = pos, nxt
        visits[tuple(pos)] += 1
        path.append(pos)
    return np.array(path)


def _heading_rotation(direction, rng) -> np.ndarray:
    """Rotation whose first column is the unit ``direction`` (an axis vector)."""
    x = direction / np.linalg.norm(direction)
    axes = np.eye(3)
    options = [a for a in axes if abs(a @ x) < 0.5]
    y = options[rng.integers(len(options))] * rng.choice([-1.0, 1.0])
    z = np.cross(x, y)
    return np.column_stack([x, y, z])


def _noisy_rotation(rng, sigma):
    if sigma == 0:
        return np.eye(3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so_exp(axis * rng.normal(0.0, sigma), 3)[0]


def generate_cube(cfg: CubeConfig, robots: int = 1):
    """Build a cube dataset.

    Returns ``(graph, truth)`` where ``truth`` is the noise-free pose matrix.
    With ``robots > 1`` the trajectory is split into contiguous segments.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.poses
    lattice = _walk(cfg.grid, n, rng)
    pts = cfg.side_length * lattice.astype(float)
    R = np.empty((n, 3, 3))
    for k in range(n):
        step = lattice[k + 1] - lattice[k] if k + 1 < n else lattice[k] - lattice[k - 1]
        R[k] = _heading_rotation(step.astype(float), rng)

    kappa = 1.0 / cfg.sigma_R**2 if cfg.sigma_R > 0 else 1.0
    tau = 1.0 / cfg.sigma_t**2 if cfg.sigma_t > 0 else 1.0
    pairs = [(k, k + 1) for k in range(n - 1)]
    close = sorted(cKDTree(pts).query_pairs(cfg.side_length * (1 + 1e-9)))
    for i, j in close:
        if j - i > 1 and rng.random() < cfg.p_loop:
            pairs.append((i, j))

    edges = []
    for i, j in pairs:
        rel_R = R[i].T @ R[j] @ _noisy_rotation(rng, cfg.sigma_R)
        rel_t = R[i].T @ (pts[j] - pts[i]) + rng.normal(0.0, cfg.sigma_t, size=3)
        edges.append(Measurement((0, i), (0, j), rel_R, rel_t, kappa, tau))
    g = PoseGraph(3, [n], edges)
    truth = g.poses_to_matrix(pts, R)
    if robots > 1:
        gp = partition(g, robots)
        return gp, transfer(truth, g, gp)
    return g, truth
