"""Sparse SPD factorizations shared by the subproblem solvers."""

from __future__ import annotations

import weakref

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import SingularSubproblem


class SPDFactor:
    """Factorization of a sparse SPD matrix.

    SuperLU runs in symmetric mode with pivoting disabled, so the diagonal of
    ``U`` carries the pivots of an LDL^T factorization; a nonpositive pivot
    means the matrix is not positive definite and raises
    :class:`SingularSubproblem`.
    """

    def __init__(self, A, rel_tol: float = 1e-13):
        A = sparse.csc_matrix(A)
        self.n = A.shape[0]
        self._lu = None
        if self.n == 0:
            return
        scale = max(1.0, float(np.abs(A.diagonal()).max()))
        self._lu = splu(
            A,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
        piv = self._lu.U.diagonal()
        if not np.all(piv > rel_tol * scale):
            raise SingularSubproblem("matrix is not numerically positive definite")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``A x = rhs``; ``rhs`` is ``(n,)`` or ``(n, k)``."""
        if self._lu is None:
            return np.array(rhs, dtype=float)
        return self._lu.solve(np.ascontiguousarray(rhs, dtype=float))


_CACHE: dict = {}


def cached(A, tag: str, build):
    """Memoize ``build(A)`` for the lifetime of the matrix object ``A``."""
    key = (id(A), tag)
    val = _CACHE.get(key)
    if val is None:
        val = build(A)
        _CACHE[key] = val
        weakref.finalize(A, _CACHE.pop, key, None)
    return val


def cached_factor(A) -> SPDFactor:
    """Factor ``A`` once and reuse it for the lifetime of the matrix object."""
    return cached(A, "factor", SPDFactor)
