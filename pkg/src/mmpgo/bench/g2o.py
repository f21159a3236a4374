"""Reading and writing g2o pose-graph files.

Supported records are ``VERTEX_SE2``/``EDGE_SE2`` and
``VERTEX_SE3:QUAT``/``EDGE_SE3:QUAT``; ``FIX`` lines and ``#`` comments are
ignored.  Each edge's information matrix is reduced to scalar weights:
``kappa`` is the mean of its rotational diagonal and ``tau`` the mean of its
translational diagonal.  Vertex ids are renumbered ``0..n-1`` in increasing
order.

Upper-triangular information layouts (row-major):

* SE2: ``I11 I12 I13 I22 I23 I33`` over ``(x, y, theta)``, so
  ``tau = (I11 + I22) / 2`` and ``kappa = I33``.
* SE3: 21 entries over ``(x, y, z, qx, qy, qz)``; the diagonal sits at
  positions 0, 6, 11 (translation) and 15, 18, 20 (rotation).
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, ParseError
from ..graph import Measurement, PoseGraph

_SE3_DIAG = (0, 6, 11, 15, 18, 20)


def quat_to_rot(q) -> np.ndarray:
    """Rotation matrix of the quaternion ``(qx, qy, qz, qw)`` (normalized first)."""
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R) -> np.ndarray:
    """``(qx, qy, qz, qw)`` with ``qw >= 0`` (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = [0.0, 0.0, 0.0, (R[k, j] - R[j, k]) / s]
        q[i] = 0.25 * s
        q[j] = (R[j, i] + R[i, j]) / s
        q[k] = (R[k, i] + R[i, k]) / s
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q


def _mean(vals) -> float:
    # exact for isotropic information, which is what write_g2o emits
    return float(vals[0]) if all(v == vals[0] for v in vals) else float(np.mean(vals))


def _rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _floats(fields, count, lineno):
    if len(fields) != count:
        raise ParseError(f"expected {count} numbers, got {len(fields)}", lineno)
    try:
        vals = [float(f) for f in fields]
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    if not np.all(np.isfinite(vals)):
        raise ParseError("non-finite value", lineno)
    return vals


def _ids(fields, count, lineno):
    try:
        return [int(f) for f in fields[:count]]
    except ValueError:
        raise ParseError(f"bad vertex id in {fields[:count]}", lineno) from None


def read_g2o(path):
    """Parse a g2o file.

    Returns ``(graph, initial)`` where ``initial`` is the ``d x (d+1)n``
    matrix of vertex estimates, or ``None`` if some pose has no vertex line.
    """
    verts: dict[int, tuple] = {}
    raw_edges = []
    dim = None

    def set_dim(d, lineno):
        nonlocal dim
        if dim is None:
            dim = d
        elif dim != d:
            raise DimensionMismatch(f"line {lineno}: mixes {dim}D and {d}D records")

    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            tag, rest = fields[0], fields[1:]
            if tag == "VERTEX_SE2":
                set_dim(2, lineno)
                (vid,) = _ids(rest, 1, lineno)
                x, y, th = _floats(rest[1:], 3, lineno)
                verts[vid] = (np.array([x, y]), _rot2(th))
            elif tag == "VERTEX_SE3:QUAT":
                set_dim(3, lineno)
                (vid,) = _ids(rest, 1, lineno)
                v = _floats(rest[1:], 7, lineno)
                verts[vid] = (np.array(v[:3]), quat_to_rot(v[3:]))
            elif tag == "EDGE_SE2":
                set_dim(2, lineno)
                i, j = _ids(rest, 2, lineno)
                v = _floats(rest[2:], 9, lineno)
                info = v[3:]
                raw_edges.append((lineno, i, j, _rot2(v[2]), np.array(v[:2]), info[5], _mean([info[0], info[3]])))
            elif tag == "EDGE_SE3:QUAT":
                set_dim(3, lineno)
                i, j = _ids(rest, 2, lineno)
                v = _floats(rest[2:], 28, lineno)
                info = v[7:]
                diag = [info[p] for p in _SE3_DIAG]
                raw_edges.append((lineno, i, j, quat_to_rot(v[3:7]), np.array(v[:3]), _mean(diag[3:]), _mean(diag[:3])))
            elif tag == "FIX":
                continue
            else:
                raise ParseError(f"unsupported record {tag!r}", lineno)

    if not verts and not raw_edges:
        raise ParseError("no vertices or edges found")
    ids = sorted(set(verts) | {e[1] for e in raw_edges} | {e[2] for e in raw_edges})
    index = {vid: k for k, vid in enumerate(ids)}
    edges = []
    for lineno, i, j, R, t, kappa, tau in raw_edges:
        try:
            edges.append(Measurement((0, index[i]), (0, index[j]), R, t, float(kappa), float(tau)))
        except Exception as exc:  # invalid weights, self loops, ...
            raise ParseError(str(exc), lineno) from None
    g = PoseGraph(dim, [len(ids)], edges)
    initial = None
    if all(v in verts for v in ids) and ids:
        t = np.array([verts[v][0] for v in ids])
        R = np.array([verts[v][1] for v in ids])
        initial = g.poses_to_matrix(t, R)
    return g, initial


def parse_g2o(path) -> PoseGraph:
    """Single-robot :class:`PoseGraph` from a g2o file."""
    return read_g2o(path)[0]


def _fmt(x) -> str:
    return repr(float(x))


def write_g2o(path, g: PoseGraph, X=None):
    """Write ``g`` (any partition, poses numbered globally) and optional estimate ``X``.

    Information matrices are written isotropic, ``kappa`` on the rotational
    and ``tau`` on the translational diagonal, so reading the file back gives
    the same weights.
    """
    d = g.d
    if d not in (2, 3):
        raise DimensionMismatch(f"g2o supports d = 2 or 3, not {d}")
    if X is None:
        X = g.identity_estimate()
    t, R = g.matrix_to_poses(X)
    lines = []
    for p in range(g.num_poses):
        if d == 2:
            th = np.arctan2(R[p, 1, 0], R[p, 0, 0])
            lines.append(" ".join(["VERTEX_SE2", str(p), *map(_fmt, t[p]), _fmt(th)]))
        else:
            lines.append(" ".join(["VERTEX_SE3:QUAT", str(p), *map(_fmt, t[p]), *map(_fmt, rot_to_quat(R[p]))]))
    for e in range(g.num_edges):
        i, j = int(g.src_index[e]), int(g.dst_index[e])
        k, tau = g.kappa[e], g.tau[e]
        if d == 2:
            th = np.arctan2(g.rot[e, 1, 0], g.rot[e, 0, 0])
            info = [tau, 0.0, 0.0, tau, 0.0, k]
            lines.append(" ".join(["EDGE_SE2", str(i), str(j), *map(_fmt, g.trans[e]), _fmt(th), *map(_fmt, info)]))
        else:
            diag = [tau, tau, tau, k, k, k]
            info = []
            for r in range(6):
                info += [diag[r]] + [0.0] * (5 - r)
            lines.append(
                " ".join(
                    ["EDGE_SE3:QUAT", str(i), str(j), *map(_fmt, g.trans[e]), *map(_fmt, rot_to_quat(g.rot[e])), *map(_fmt, info)]
                )
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
