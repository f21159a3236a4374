"""Accuracy metrics and the benchmark report."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DimensionMismatch, MissingReference
from ..graph import PoseEstimate, PoseGraph, merge, transfer
from ..manifold import project_to_rotation, rotation_angle
from ..solvers import amm_pgo

log = logging.getLogger(__name__)

SUPPLIED = "supplied"
UPPER_BOUND = "reference (upper bound)"


def _poses(x):
    if isinstance(x, PoseEstimate):
        return x.poses()
    t, R = x
    return np.asarray(t, dtype=float), np.asarray(R, dtype=float)


def align_and_rmse(est, truth) -> tuple[float, float]:
    """Rotation (rad) and translation RMSE after the best rigid gauge alignment.

    ``est`` and ``truth`` are :class:`PoseEstimate` objects or ``(t, R)``
    pairs with ``t`` of shape (n, d).  The transform ``(Q, s)`` minimizing
    ``sum |Q p_i + s - q_i|^2`` is found by orthogonal Procrustes on the
    positions.  When the positions do not pin down the rotation (fewer than
    ``d - 1`` independent directions) the rotation is taken from the chordal
    average of ``truth_R_i est_R_i^T`` instead.
    """
    t_e, R_e = _poses(est)
    t_t, R_t = _poses(truth)
    if t_e.shape != t_t.shape or R_e.shape != R_t.shape:
        raise DimensionMismatch("estimate and truth have different layouts")
    d = t_e.shape[1]
    ce, ct = t_e.mean(axis=0), t_t.mean(axis=0)
    P, T = t_e - ce, t_t - ct
    H = P.T @ T
    s = np.linalg.svd(P, compute_uv=False) if len(P) else np.zeros(d)
    if np.sum(s > 1e-9 * max(1.0, s.max(initial=0.0))) >= d - 1:
        U, _, Vt = np.linalg.svd(H)
        D = np.eye(d)
        D[-1, -1] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
        Q = Vt.T @ D @ U.T
    else:
        Q = project_to_rotation(np.sum(R_t @ np.transpose(R_e, (0, 2, 1)), axis=0))
    shift = ct - Q @ ce
    res = t_e @ Q.T + shift - t_t
    trans = float(np.sqrt(np.mean(np.sum(res**2, axis=1))))
    ang = rotation_angle(np.transpose(Q @ R_e, (0, 2, 1)) @ R_t)
    rot = float(np.sqrt(np.mean(ang**2)))
    return rot, trans


def centralized_reference(g: PoseGraph, X0, iters: int = 10000, tol: float = 1e-9) -> float:
    """Objective after a long single-robot AMM run; an upper bound on the optimum."""
    mono = merge(g) if g.num_robots > 1 else g
    X = transfer(X0, g, mono) if g.num_robots > 1 else X0
    return float(amm_pgo(mono, X, iters=iters, tol=tol).F[-1])


def rank_string(values: dict, rel_tol: float = 1e-12) -> str:
    """``"A < B = C"``: names ordered by value, ties within ``rel_tol`` joined by ``=``."""
    ranked = sorted(values, key=lambda a: values[a])
    out = ranked[:1]
    for prev, cur in zip(ranked, ranked[1:]):
        tie = abs(values[cur] - values[prev]) <= rel_tol * max(abs(values[cur]), abs(values[prev]), 1e-300)
        out += ["=" if tie else "<", cur]
    return " ".join(out)


@dataclass
class BenchmarkRow:
    algorithm: str
    robots: int
    iters: int
    F: float
    F_ref: float | None = None
    gap: float | None = None
    rel_gap: float | None = None
    trace: str | None = None


@dataclass
class BenchmarkReport:
    dataset: str
    poses: int
    edges: int
    reference: float | None = None
    reference_source: str | None = None
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def add(self, algorithm, robots, iters, F, trace=None):
        row = BenchmarkRow(algorithm, robots, iters, float(F), trace=trace)
        if self.reference is not None:
            row.F_ref = self.reference
            row.gap = row.F - self.reference
            row.rel_gap = row.gap / self.reference if self.reference else float("nan")
            if row.gap < -1e-6 * abs(self.reference):
                msg = f"{algorithm} at {iters} iterations is below the reference by {-row.gap:.3e}"
                log.warning(msg)
                self.warnings.append(msg)
        self.rows.append(row)
        return row

    def require_reference(self):
        if self.reference is None:
            raise MissingReference("relative gap requested but no reference objective is available")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rows"] = [asdict(r) for r in self.rows]
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def table(self) -> str:
        """Plain-text table: one line per iteration budget, one column per algorithm, plus a ranking."""
        algos = list(dict.fromkeys(r.algorithm for r in self.rows))
        budgets = sorted({r.iters for r in self.rows})
        ref = "-" if self.reference is None else f"{self.reference:.3e}"
        head = ["dataset", "# poses", "# edges", "f*", "# iterations", *algos, "ranking"]
        lines = []
        for it in budgets:
            vals = {r.algorithm: r.F for r in self.rows if r.iters == it}
            lines.append(
                [self.dataset, str(self.poses), str(self.edges), ref, str(it)]
                + [f"{vals[a]:.3e}" if a in vals else "-" for a in algos]
                + [rank_string(vals)]
            )
        widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(head)]
        fmt = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))  # noqa: E731
        out = [fmt(head), "-+-".join("-" * w for w in widths), *map(fmt, lines)]
        if self.reference is not None:
            out.append(f"f* source: {self.reference_source}")
        return "\n".join(out)
