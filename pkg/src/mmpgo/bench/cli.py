"""Benchmark command line.

Example::

    mmpgo-bench --cube 6,1,0.1,0.02,0.0628,0 --robots 5 --algo mm,amm \
        --iters 100,250,1000 --out results/

writes one trace CSV per algorithm, ``summary.json`` and ``table.txt``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from ..chordal import chordal_initialization
from ..distributed import run_distributed
from ..errors import InvalidParameter, PGOError
from ..graph import partition, random_assignment, transfer
from ..local_solver import LocalSolveConfig
from ..quadratic import DEFAULT_XI, objective
from .cube import CubeConfig, generate_cube
from .evaluation import SUPPLIED, UPPER_BOUND, BenchmarkReport, align_and_rmse, centralized_reference
from .g2o import read_g2o
from .metrics import write_trace_csv

log = logging.getLogger(__name__)

ALGO_NAMES = {"mm": "MM-PGO", "amm": "AMM-PGO", "chordal-only": "chordal"}


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("iteration budgets must be nonnegative")
    return vals


def _algos(text: str) -> list[str]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in vals if v not in ALGO_NAMES]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"unknown algorithm(s) {bad}; choose from {sorted(ALGO_NAMES)}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmpgo-bench", description="Distributed pose-graph optimization benchmarks.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", metavar="PATH", help="g2o file (SE2 or SE3:QUAT)")
    src.add_argument("--cube", metavar="GRID,SIDE,P,ST,SR,SEED", help="synthetic cube dataset")
    p.add_argument("--robots", type=int, default=1, metavar="A")
    p.add_argument("--algo", type=_algos, default=["mm"], help="mm, amm or chordal-only (comma separated)")
    p.add_argument("--iters", type=_int_list, default=[100], metavar="N[,N...]")
    p.add_argument("--xi", type=float, default=DEFAULT_XI)
    p.add_argument("--reference", type=float, metavar="F*", help="externally certified optimal objective")
    p.add_argument("--compute-reference", action="store_true", help="derive F* from a long centralized run")
    p.add_argument("--reference-iters", type=int, default=10000)
    p.add_argument("--relative-gap", action="store_true", help="fail unless a reference objective is available")
    p.add_argument("--init", choices=["chordal", "chordal-direct", "dataset", "identity"], default="chordal")
    p.add_argument("--chordal-iters", type=int, default=200)
    p.add_argument("--partition", choices=["contiguous", "random"], default="contiguous")
    p.add_argument("--seed", type=int, default=0, help="seed of the random robot assignment")
    p.add_argument("--local-method", choices=["newton", "rgd"], default="newton")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", metavar="DIR", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_problem(args):
    """Returns ``(name, graph, dataset_initial, truth)`` for the requested dataset and partition."""
    if args.robots < 1:
        raise InvalidParameter("--robots must be at least 1")
    if args.cube:
        cfg = CubeConfig.parse(args.cube)
        mono, truth = generate_cube(cfg)
        name, init = f"cube-{cfg.grid}", None
    else:
        mono, init = read_g2o(args.dataset)
        truth = None
        name = os.path.splitext(os.path.basename(args.dataset))[0]
    if args.robots == 1:
        return name, mono, init, truth
    strategy = "contiguous" if args.partition == "contiguous" else random_assignment(args.seed)
    g = partition(mono, args.robots, strategy)
    conv = lambda X: None if X is None else transfer(X, mono, g)  # noqa: E731
    return name, g, conv(init), conv(truth)


def initial_estimate(args, g, dataset_init):
    if args.init == "chordal":
        X, rtrace, ttrace, _ = run_distributed(g, None, "chordal", iters=args.chordal_iters, threads=args.threads)
        return X, (rtrace, ttrace)
    if args.init == "chordal-direct":
        return chordal_initialization(g, "direct"), None
    if args.init == "dataset":
        if dataset_init is None:
            raise InvalidParameter("--init dataset needs a g2o file with a vertex for every pose")
        return dataset_init, None
    return g.identity_estimate(), None


def run_benchmark(args) -> BenchmarkReport:
    name, g, dataset_init, truth = load_problem(args)
    X0, chordal_traces = initial_estimate(args, g, dataset_init)
    report = BenchmarkReport(name, g.num_poses, g.num_edges)
    report.extra.update(robots=g.num_robots, xi=args.xi, init=args.init, F_init=objective(g, X0))
    if args.reference is not None:
        report.reference, report.reference_source = float(args.reference), SUPPLIED
    elif args.compute_reference:
        report.reference = centralized_reference(g, X0, args.reference_iters)
        report.reference_source = UPPER_BOUND
    if args.relative_gap:
        report.require_reference()
    if args.out:
        os.makedirs(args.out, exist_ok=True)

    cfg = LocalSolveConfig(method=args.local_method)
    budget = max(args.iters)
    for algo in args.algo:
        label = ALGO_NAMES[algo]
        if algo == "chordal-only":
            paths = None
            if args.out and chordal_traces is not None:
                paths = [os.path.join(args.out, f"chordal_{s}.csv") for s in ("rotation", "translation")]
                for path, tr in zip(paths, chordal_traces):
                    write_trace_csv(path, tr.records)
            for it in args.iters:
                report.add(label, g.num_robots, it, objective(g, X0), trace=None if paths is None else paths[0])
            continue
        run = run_distributed(g, X0, algo, xi=args.xi, iters=budget, cfg=cfg, threads=args.threads)
        path = None
        if args.out:
            path = os.path.join(args.out, f"trace_{algo}.csv")
            write_trace_csv(path, run.records)
        F = run.F
        for it in args.iters:
            report.add(label, g.num_robots, it, F[min(it, len(F) - 1)], trace=path)
        report.extra[f"{algo}_grad_norm"] = float(run.grad_norms[-1])
        report.extra[f"{algo}_bytes_total"] = int(run.bytes.sum())
        report.extra[f"{algo}_restarts"] = int(sum(len(r) for r in run.restarts))
        if truth is not None:
            t, R = g.matrix_to_poses(run.X)
            tt, Rt = g.matrix_to_poses(truth)
            rot, trans = align_and_rmse((t, R), (tt, Rt))
            report.extra[f"{algo}_rmse"] = {"rotation_rad": rot, "translation_m": trans}
    if args.out:
        report.to_json(os.path.join(args.out, "summary.json"))
        with open(os.path.join(args.out, "table.txt"), "w") as fh:
            fh.write(report.table() + "\n")
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        report = run_benchmark(args)
    except PGOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(report.table())
    return 0


if __name__ == "__main__":
    sys.exit(main())
