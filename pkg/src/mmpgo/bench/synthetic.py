"""Small random pose graphs for tests and quick experiments."""

from __future__ import annotations

import numpy as np

from ..graph import Measurement, PoseGraph, contiguous_assignment
from ..manifold import random_rotation, so_exp


def random_graph(
    seed: int | np.random.Generator = 0,
    d: int = 3,
    n: int = 10,
    robots: int = 1,
    extra_edges: int | None = None,
    sigma_t: float = 0.1,
    sigma_R: float = 0.1,
    random_weights: bool = True,
    assignment=None,
):
    """Chain of ``n`` poses plus random loop closures.

    Returns ``(graph, truth)`` with ``truth`` the noiseless ``d x (d+1)n``
    estimate.  Poses are split among ``robots`` contiguously unless an
    ``assignment`` array is given.
    """
    rng = np.random.default_rng(seed)
    R = random_rotation(rng, d, n)
    t = rng.normal(scale=2.0, size=(n, d))
    pairs = [(i, i + 1) for i in range(n - 1)]
    if extra_edges is None:
        extra_edges = n
    for _ in range(extra_edges):
        i, j = rng.choice(n, size=2, replace=False)
        pairs.append((int(i), int(j)))
    labels = contiguous_assignment(n, robots) if assignment is None else np.asarray(assignment)
    sizes = np.bincount(labels, minlength=robots)
    order = np.lexsort((np.arange(n), labels))
    new = np.empty(n, dtype=int)
    new[order] = np.arange(n)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    loc = lambda p: (int(labels[p]), int(new[p] - offsets[labels[p]]))  # noqa: E731

    dim_rot = 1 if d == 2 else 3
    edges = []
    for i, j in pairs:
        Rij = R[i].T @ R[j]
        tij = R[i].T @ (t[j] - t[i])
        Rij = Rij @ so_exp(rng.normal(scale=sigma_R, size=dim_rot), d)[0]
        tij = tij + rng.normal(scale=sigma_t, size=d)
        kappa, tau = (rng.uniform(0.5, 2.0, size=2) if random_weights else (1.0, 1.0))
        edges.append(Measurement(loc(i), loc(j), Rij, tij, float(kappa), float(tau)))
    g = PoseGraph(d, sizes, edges, source_index=order)
    return g, g.poses_to_matrix(t[order], R[order])
