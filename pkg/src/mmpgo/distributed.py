"""Simulated multi-robot execution with explicit message passing.

Every robot is an agent that owns its block of the iterate, its own
majorant block and the rows of the data matrix touching its columns.  Per
round it solves its subproblem, then sends each neighbour the current values
of exactly those poses that share an inter-robot edge with that neighbour.
Gradients are refreshed robot-locally from the received separator poses.

Rounds are synchronous: all robots of a round run on a thread pool and the
next round starts only after every message of the current one has been
delivered.  The per-robot arithmetic is the same code the shared-memory
drivers use, so traces agree bit for bit.

Wire format of one message (all little-endian)::

    u32 sender | u64 round | u32 count | count * width float64

Pose ids are not transmitted: both ends agree on the ordered separator list
when the network is set up.  ``width`` is ``d + d^2`` for pose-graph rounds
(the ``d x (d+1)`` block ``[t R]`` flattened row-major), ``d^2`` for the
chordal rotation stage and ``d`` for the translation stage.
"""

from __future__ import annotations

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chordal import (
    ChordalTrace,
    MomentumState,
    SplitQuadratic,
    chordal_block_step,
    free_gradient_norm,
    rotation_problem,
    translation_problem,
)
from .errors import InvalidParameter, ProtocolViolation
from .graph import PoseGraph
from .local_solver import LocalSolveConfig
from .manifold import project_rotations, stack_blocks
from .quadratic import DEFAULT_XI, anchor_values, build_data_matrix, build_majorant, local_operators, robot_col_blocks
from .solvers import NesterovState, RunRecord, SolverRun, _record, amm_node_step, mm_node_step

HEADER = struct.Struct("<IQI")


def message_size(count: int, width: int) -> int:
    """Serialized size in bytes of a message carrying ``count`` poses."""
    return HEADER.size + 8 * count * width


@dataclass(frozen=True)
class SeparatorMessage:
    """Separator pose values sent by ``sender`` in round ``round``.

    ``pose_ids`` are sender-local pose indices and ``payload`` holds one row
    of ``width`` numbers per pose.
    """

    sender: int
    round: int
    pose_ids: tuple
    payload: np.ndarray

    def encode(self) -> bytes:
        data = np.ascontiguousarray(self.payload, dtype="<f8")
        return HEADER.pack(self.sender, self.round, len(self.pose_ids)) + data.tobytes()

    @classmethod
    def decode(cls, buf: bytes, pose_ids, width: int) -> "SeparatorMessage":
        if len(buf) < HEADER.size:
            raise ProtocolViolation("truncated message header")
        sender, rnd, count = HEADER.unpack_from(buf)
        if count != len(pose_ids) or len(buf) != message_size(count, width):
            raise ProtocolViolation(f"message from robot {sender} has {count} poses, expected {len(pose_ids)}")
        payload = np.frombuffer(buf, dtype="<f8", offset=HEADER.size).reshape(count, width).astype(float)
        return cls(sender, rnd, tuple(int(p) for p in pose_ids), payload)


@dataclass(frozen=True)
class LogEntry:
    round: int
    stage: str
    sender: int
    receiver: int
    pose_ids: tuple
    nbytes: int


class RoundBarrier:
    """Tracks which robots have delivered their messages for the current round."""

    def __init__(self, num_robots: int):
        self.round = 0
        self.arrived = [False] * num_robots

    def arrive(self, robot: int):
        self.arrived[robot] = True

    def complete(self) -> bool:
        return all(self.arrived)

    def advance(self):
        if not self.complete():
            missing = [a for a, ok in enumerate(self.arrived) if not ok]
            raise ProtocolViolation(f"round {self.round} closed before robots {missing} delivered")
        self.round += 1
        self.arrived = [False] * len(self.arrived)


class Network:
    """In-process channels with a message log; a socket transport would replace this class."""

    def __init__(self, num_robots: int, separators):
        # separators[(a, b)]: sorted local ids of a's poses that b is allowed to see
        self.num_robots = num_robots
        self.separators = separators
        self.inbox = [[] for _ in range(num_robots)]
        self.log: list[LogEntry] = []
        self.barrier = RoundBarrier(num_robots)

    def send(self, receiver: int, msg: SeparatorMessage, stage: str) -> int:
        allowed = self.separators.get((msg.sender, receiver))
        if allowed is None or not set(msg.pose_ids) <= set(allowed.tolist()):
            raise ProtocolViolation(
                f"robot {msg.sender} sent non-separator poses {msg.pose_ids} to robot {receiver}"
            )
        buf = msg.encode()
        self.inbox[receiver].append((msg.sender, msg.pose_ids, buf))
        self.log.append(LogEntry(msg.round, stage, msg.sender, receiver, msg.pose_ids, len(buf)))
        return len(buf)

    def drain(self, receiver: int):
        msgs, self.inbox[receiver] = self.inbox[receiver], []
        return msgs

    def bytes_in_round(self, rnd: int, stage: str | None = None) -> int:
        return sum(e.nbytes for e in self.log if e.round == rnd and (stage is None or e.stage == stage))


class BlockAgent:
    """A robot holding its columns of a block-structured iterate.

    ``pose_cols[p]`` lists the global columns of pose ``p``.  The agent keeps
    a private copy of the columns ``op.rows`` it needs for its gradient; the
    ones it does not own can only be filled from received messages.
    """

    def __init__(self, g: PoseGraph, alpha: int, op, pose_cols: np.ndarray, V0: np.ndarray):
        self.g = g
        self.alpha = alpha
        self.op = op
        self.pose_cols = pose_cols
        self.width = pose_cols.shape[1] * V0.shape[0]
        self.view = np.full((V0.shape[0], len(op.rows)), np.nan)
        self.own_pos = np.searchsorted(op.rows, op.cols)
        self.view[:, self.own_pos] = V0[:, op.cols]
        self.out_ids = {}
        self.in_pos = {}
        first = g.offsets[alpha]
        for beta in sorted(g.neighbors(alpha)):
            self.out_ids[beta] = g.separators(alpha, beta)
            ids = g.separators(beta, alpha)
            cols = pose_cols[g.offsets[beta] + ids]
            pos = np.searchsorted(op.rows, cols.ravel())
            if np.any(op.rows[np.minimum(pos, len(op.rows) - 1)] != cols.ravel()):
                raise ProtocolViolation("separator columns missing from the local operator")
            self.in_pos[beta] = (ids, pos.reshape(cols.shape))
        self.first_pose = first
        covered = set(self.own_pos.tolist())
        for _, pos in self.in_pos.values():
            covered |= set(pos.ravel().tolist())
        if covered != set(range(len(op.rows))):
            raise ProtocolViolation(f"robot {alpha} would need non-separator data for its gradient")

    @property
    def block(self) -> np.ndarray:
        return self.view[:, self.own_pos]

    def set_block(self, V_a):
        self.view[:, self.own_pos] = V_a

    def gradient(self) -> np.ndarray:
        return self.op.apply(self.view)

    def outgoing(self, rnd: int):
        for beta, ids in self.out_ids.items():
            cols = self.pose_cols[self.first_pose + ids]
            pos = np.searchsorted(self.op.rows, cols.ravel()).reshape(cols.shape)
            payload = np.stack([self.view[:, p].ravel() for p in pos]) if len(ids) else np.zeros((0, self.width))
            yield beta, SeparatorMessage(self.alpha, rnd, tuple(int(i) for i in ids), payload)

    def receive(self, sender: int, pose_ids, buf: bytes):
        if sender not in self.in_pos:
            raise ProtocolViolation(f"robot {self.alpha} got a message from non-neighbour {sender}")
        ids, pos = self.in_pos[sender]
        if tuple(pose_ids) != tuple(int(i) for i in ids):
            raise ProtocolViolation(f"unknown pose ids {pose_ids} from robot {sender}")
        msg = SeparatorMessage.decode(buf, ids, self.width)
        d = self.view.shape[0]
        for row, p in zip(msg.payload, pos):
            self.view[:, p] = row.reshape(d, len(p))


def _pgo_pose_cols(g: PoseGraph) -> np.ndarray:
    return np.hstack([g.t_col[:, None], g.R_cols])


def _separator_table(g: PoseGraph):
    return {(a, b): g.separators(a, b) for a in range(g.num_robots) for b in g.neighbors(a)}


def _exchange(net: Network, agents, rnd: int, stage: str) -> int:
    total = 0
    for ag in agents:
        for beta, msg in ag.outgoing(rnd):
            total += net.send(beta, msg, stage)
        net.barrier.arrive(ag.alpha)
    net.barrier.advance()
    for ag in agents:
        for sender, ids, buf in net.drain(ag.alpha):
            ag.receive(sender, ids, buf)
    return total


def communication_volume(run) -> np.ndarray:
    """Bytes sent per round (index 0 is the initial exchange)."""
    return np.array([r.bytes for r in run.records], dtype=np.int64)


@dataclass
class DistributedRun(SolverRun):
    log: list = field(default_factory=list)


def run_distributed(
    g: PoseGraph,
    X0,
    algorithm: str = "mm",
    xi: float = DEFAULT_XI,
    iters: int = 100,
    cfg: LocalSolveConfig | None = None,
    tol: float = 0.0,
    threads: int = 1,
    accelerate: bool = True,
):
    """Run MM-PGO (``"mm"``), AMM-PGO (``"amm"``) or the chordal initializer (``"chordal"``).

    For the pose-graph methods ``X0`` is the initial ``d x (d+1)n`` estimate
    and a :class:`DistributedRun` is returned.  For ``"chordal"`` ``X0`` is
    ignored and the result is ``(X, rotation_trace, translation_trace, log)``.
    """
    if algorithm == "chordal":
        return run_distributed_chordal(g, xi=0.0 if xi == DEFAULT_XI else xi, iters=iters, threads=threads)
    if algorithm not in ("mm", "amm"):
        raise InvalidParameter(f"unknown algorithm {algorithm!r}")
    cfg = cfg or LocalSolveConfig()
    t0 = time.perf_counter()
    X0 = g.check_matrix(X0)
    ops = local_operators(build_data_matrix(g), robot_col_blocks(g))
    maj = build_majorant(g, xi)
    pose_cols = _pgo_pose_cols(g)
    agents = [BlockAgent(g, a, ops[a], pose_cols, X0) for a in range(g.num_robots)]
    net = Network(g.num_robots, _separator_table(g))
    run = DistributedRun(X0.copy(), algorithm=algorithm)
    run.log = net.log

    def assemble():
        X = np.empty_like(X0)
        G = np.empty_like(X0)
        for ag, gr in zip(agents, grads):
            X[:, ag.op.cols] = ag.block
            G[:, ag.op.cols] = gr
        return X, G

    nbytes = _exchange(net, agents, 0, algorithm)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        grads = list(pool.map(lambda ag: ag.gradient(), agents))
        X, G = assemble()
        run.records.append(_record(g, X, G, 0, t0, nbytes))
        states = None
        if algorithm == "amm":
            gbar = anchor_values(g, X)
            states = [NesterovState.initial(ag.block, grads[a], gbar[a]) for a, ag in enumerate(agents)]
        if tol > 0 and run.records[0].grad_norm < tol:
            run.termination = "gradient tolerance"
            return run

        def step(a):
            ag = agents[a]
            if states is None:
                return mm_node_step(ag.block, grads[a], maj.gamma[a], cfg), False
            res, rs, _ = amm_node_step(states[a], ag.block, grads[a], maj.gamma[a], cfg, accelerate)
            return res, rs

        for k in range(iters):
            results = list(pool.map(step, range(len(agents))))
            for ag, (res, _) in zip(agents, results):
                ag.set_block(res.X)
                run.capped_solves += res.capped
            run.restarts.append([a for a, (_, rs) in enumerate(results) if rs])
            nbytes = _exchange(net, agents, k + 1, algorithm)
            grads = list(pool.map(lambda ag: ag.gradient(), agents))
            X, G = assemble()
            if states is not None:
                gbar = anchor_values(g, X)
                for a, st in enumerate(states):
                    st.anchor = gbar[a]
            run.records.append(_record(g, X, G, k + 1, t0, nbytes))
            run.X = X
            if tol > 0 and run.records[-1].grad_norm < tol:
                run.termination = "gradient tolerance"
                break
    return run


def _run_chordal_stage(problem: SplitQuadratic, g, pose_cols, V0, iters, net, stage, round0, pool):
    t0 = time.perf_counter()
    V0 = problem.pin(np.array(V0, dtype=float))
    agents = [BlockAgent(g, a, problem.ops[a], pose_cols, V0) for a in range(g.num_robots)]
    trace = ChordalTrace(V0, xi_used=list(problem.xi_used))

    def assemble(grads):
        V = np.empty_like(V0)
        G = np.empty_like(V0)
        for ag, gr in zip(agents, grads):
            V[:, ag.op.cols] = ag.block
            G[:, ag.op.cols] = gr
        return V, G

    nbytes = _exchange(net, agents, round0, stage)
    grads = list(pool.map(lambda ag: ag.gradient(), agents))
    V, G = assemble(grads)
    trace.records.append(RunRecord(0, problem.objective(V), free_gradient_norm(problem, G), 0.0, nbytes))
    states = [MomentumState.initial(ag.block, gr) for ag, gr in zip(agents, grads)]

    def step(a):
        Z = chordal_block_step(problem, a, states[a], agents[a].block, grads[a])
        local = np.searchsorted(problem.blocks[a], problem.anchor_cols)
        mine = (local < len(problem.blocks[a])) & (
            problem.blocks[a][np.minimum(local, len(problem.blocks[a]) - 1)] == problem.anchor_cols
        )
        Z[:, local[mine]] = problem.anchor_vals[:, mine]
        return Z

    for k in range(iters):
        blocks = list(pool.map(step, range(len(agents))))
        for ag, Z in zip(agents, blocks):
            ag.set_block(Z)
        nbytes = _exchange(net, agents, round0 + k + 1, stage)
        grads = list(pool.map(lambda ag: ag.gradient(), agents))
        V, G = assemble(grads)
        trace.V = V
        trace.records.append(
            RunRecord(k + 1, problem.objective(V), free_gradient_norm(problem, G), 1e3 * (time.perf_counter() - t0), nbytes)
        )
    return trace


def run_distributed_chordal(g: PoseGraph, xi: float = 0.0, iters: int = 200, threads: int = 1):
    """Distributed chordal initialization: rotation stage, local projection, translation stage.

    After projecting its own rotations each robot sends its projected
    separator rotations once (stage ``"projection"``), which is all the
    translation stage needs to form its linear terms.
    """
    d, n = g.d, g.num_poses
    net = Network(g.num_robots, _separator_table(g))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rprob = rotation_problem(g, xi)
        rot_cols = (d * np.arange(n))[:, None] + np.arange(d)[None, :]
        R0 = np.tile(np.eye(d), (1, n))
        rtrace = _run_chordal_stage(rprob, g, rot_cols, R0, iters, net, "rotation", 0, pool)
        R = project_rotations(stack_blocks(rtrace.V, d))
        # one exchange of projected separator rotations
        proj_agents = []
        Rh = np.ascontiguousarray(np.transpose(R, (1, 0, 2)).reshape(d, d * n))
        for a in range(g.num_robots):
            op = rprob.ops[a]
            proj_agents.append(BlockAgent(g, a, op, rot_cols, Rh))
        _exchange(net, proj_agents, iters + 1, "projection")
        tprob = translation_problem(g, R, xi)
        ttrace = _run_chordal_stage(
            tprob, g, np.arange(n)[:, None], np.zeros((d, n)), iters, net, "translation", iters + 2, pool
        )
    X = g.poses_to_matrix(ttrace.V.T, R)
    return X, rtrace, ttrace, net.log
