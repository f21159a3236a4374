"""Shared helpers for the test suite."""

from mmpgo.manifold import random_rotation, retract


def random_iterate(g, rng, scale=2.0):
    """Feasible iterate with random rotations and translations."""
    t = rng.normal(scale=scale, size=(g.num_poses, g.d))
    R = random_rotation(rng, g.d, g.num_poses)
    return g.poses_to_matrix(t, R)


def perturb(g, X, rng, sigma=0.3):
    """Feasible iterate near ``X``."""
    return retract(X, sigma * rng.normal(size=X.shape))
