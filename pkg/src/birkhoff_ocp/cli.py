"""Command-line front end.

Exit codes: 0 success, 1 solver non-convergence, 2 verification failure,
3 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .birkhoff import build_birkhoff, condition_report, identity_residuals
from .grids import GRID_NAMES, MAX_ORDER, GridError, grid_by_name
from .problems import PROBLEMS, get_problem
from .solver import SolverOptions, SolverStatus, solve_ocp
from .vnv import TrajectorySolution, load_solution, save_solution, verify_solution

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_VERIFY_FAILED = 2
EXIT_USAGE = 3

log = logging.getLogger("birkhoff_ocp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _order(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"N must be an integer, got {text!r}") from None
    if not 1 <= n <= MAX_ORDER:
        raise argparse.ArgumentTypeError(f"N must lie in [1, {MAX_ORDER}], got {n}")
    return n


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _ladder(text: str) -> tuple[int, ...]:
    if text.strip() in ("", "none"):
        return ()
    return tuple(_order(s) for s in text.split(","))


def _emit(text: str, out) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


_FLAG_FIELDS = {
    "tol_feas": "feasibility_tol",
    "tol_opt": "optimality_tol",
    "tol_comp": "complementarity_tol",
    "max_outer": "max_outer_iters",
    "max_inner": "max_inner_iters",
    "time_limit": "time_limit",
}
_CONFIG_FIELDS = {f.name for f in fields(SolverOptions)} - {"initial_guess", "initial_multipliers"}


def _read_config(path) -> dict:
    """Solver option overrides from a JSON file, flat or under a ``solver`` key."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    data = data.get("solver", data)
    unknown = set(data) - _CONFIG_FIELDS
    if unknown:
        raise UsageError(f"unknown solver options in {path}: {', '.join(sorted(unknown))}")
    return data


def _solver_options(args, base: SolverOptions) -> SolverOptions:
    """Preset defaults, then the config file, then explicit flags."""
    overrides = _read_config(args.config) if getattr(args, "config", None) else {}
    overrides.update({f: getattr(args, a) for a, f in _FLAG_FIELDS.items() if getattr(args, a, None) is not None})
    try:
        return replace(base, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid solver options: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_grid(args) -> int:
    g = grid_by_name(args.grid, args.N)
    if args.format == "json":
        _emit(json.dumps({"grid": args.grid, "N": args.N, "tau": g.nodes.tolist(), "w": g.weights.tolist()}) + "\n", args.out)
    else:
        rows = ((j, float(t), float(w)) for j, (t, w) in enumerate(zip(g.nodes, g.weights)))
        _emit(_csv(["j", "tau", "w"], rows), args.out)
    return EXIT_OK


def cmd_birkhoff(args) -> int:
    sys_ = build_birkhoff(grid_by_name(args.grid, args.N))
    res = identity_residuals(sys_)
    if args.format == "json":
        payload = {"grid": args.grid, "N": args.N, "Ba": sys_.Ba.tolist(), "Bb": sys_.Bb.tolist(),
                   "wB": sys_.wB.tolist(), "residuals": res}
        _emit(json.dumps(payload) + "\n", args.out)
        return EXIT_OK
    if args.out is None:
        raise UsageError("birkhoff with --format csv needs --out DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("Ba", "Bb"):
        M = getattr(sys_, name)
        (out / f"{name}.csv").write_text("\n".join(",".join(_fmt(v) for v in row) for row in M) + "\n")
    (out / "wB.csv").write_text(_csv(["j", "wB"], ((j, float(w)) for j, w in enumerate(sys_.wB))))
    (out / "residuals.json").write_text(json.dumps(res, indent=1) + "\n")
    sys.stdout.write(json.dumps(res) + "\n")
    return EXIT_OK


def cmd_cond(args) -> int:
    if args.to < args.start:
        raise UsageError("--to must not be smaller than --from")
    orders = list(range(args.start, args.to + 1, args.step))
    if orders[-1] != args.to:
        orders.append(args.to)
    reports = [condition_report(grid_by_name(args.grid, n)) for n in orders]
    if args.format == "json":
        _emit(json.dumps([r.__dict__ for r in reports]) + "\n", args.out)
    else:
        _emit(_csv(["N", "cond_full", "cond_block"], ((r.N, r.cond_full, r.cond_block) for r in reports)), args.out)
    return EXIT_OK


def _solve(problem: str, grid: str, N, cost_scale, ladder, args=None):
    bp = get_problem(problem)
    opts = _solver_options(args, bp.solver_options())
    ocp = bp.ocp if cost_scale is None else bp.ocp.with_cost_scale(cost_scale)
    N = bp.N if N is None else N
    grid = bp.grid if grid is None else grid
    ladder = bp.ladder if ladder is None else ladder
    res = solve_ocp(ocp, grid, N, opts, ladder=ladder, guess=bp.guess)
    return bp, TrajectorySolution.from_result(res, problem)


def cmd_solve(args) -> int:
    _, sol = _solve(args.problem, args.grid, args.N, args.cost_scale, args.ladder, args)
    out = args.out or f"{args.problem}_solution.json"
    save_solution(sol, out)
    print(f"{args.problem}: status={sol.status} objective={_fmt(sol.objective)} tf={_fmt(sol.tf)} -> {out}")
    if sol.status not in (SolverStatus.OPTIMAL.value, SolverStatus.FEASIBLE.value):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _verify(bp, sol: TrajectorySolution, tol_bc, tol_path, rule):
    ocp = bp.ocp.with_cost_scale(sol.cost_scale)
    tol_bc = bp.tol_bc if tol_bc is None else tol_bc
    tol_path = bp.tol_path if tol_path is None else tol_path
    report, prop = verify_solution(ocp, sol, tol_bc, tol_path, rule, bp.shape_checks() if sol.has_duals else None)
    checks = bp.run_checks(sol) if sol.has_duals else {}
    ok = report.feasibility.verdict and all(passed for _, passed in checks.values())
    return report, prop, checks, ok


def cmd_verify(args) -> int:
    try:
        sol = load_solution(args.solution)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read solution {args.solution}: {exc}") from exc
    problem = args.problem or sol.problem
    if problem not in PROBLEMS:
        raise UsageError(f"unknown problem {problem!r}; expected one of {', '.join(PROBLEMS)}")
    bp = get_problem(problem)
    report, prop, checks, ok = _verify(bp, sol, args.tol_bc, args.tol_path, args.rule)
    payload = report.to_json()
    payload["problem"] = problem
    payload["checks"] = {k: {"residual": r, "passed": p} for k, (r, p) in checks.items()}
    payload["verdict"] = bool(ok)
    out = args.out or f"{problem}_report.json"
    Path(out).write_text(json.dumps(payload, indent=1) + "\n")
    if args.csv:
        header = ["t"] + [f"x{i}" for i in range(prop.x.shape[0])] + [f"u{i}" for i in range(prop.u.shape[0])]
        rows = (tuple(float(v) for v in (t, *x, *u)) for t, x, u in zip(prop.t, prop.x.T, prop.u.T))
        Path(args.csv).write_text(_csv(header, rows))
    f = report.feasibility
    print(f"{problem}: terminal_error={f.terminal_error_inf:.3e} path_violation={f.path_violation_inf:.3e} "
          f"checks={sum(p for _, p in checks.values())}/{len(checks)} verdict={'pass' if ok else 'fail'} -> {out}")
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def _bench_one(problem: str, args=None) -> dict:
    t0 = time.perf_counter()
    bp, sol = _solve(problem, None, None, None, None, args)
    report, _, checks, ok = _verify(bp, sol, None, None, "linear")
    return {
        "problem": problem,
        "grid": sol.grid,
        "status": sol.status,
        "objective": float(sol.objective / sol.cost_scale),
        "tf": float(sol.tf),
        "terminal_error": report.feasibility.terminal_error_inf,
        "path_violation": report.feasibility.path_violation_inf,
        "checks_passed": f"{sum(p for _, p in checks.values())}/{len(checks)}",
        "verdict": "pass" if ok else "fail",
        "seconds": time.perf_counter() - t0,
        "_solution": sol.to_json(),
    }


def cmd_bench(args) -> int:
    problems = args.problems or list(PROBLEMS)
    for p in problems:
        if p not in PROBLEMS:
            raise UsageError(f"unknown problem {p!r}; expected one of {', '.join(PROBLEMS)}")
    workers = max(1, int(os.environ.get("BIRKHOFF_THREADS", "1")))
    if workers > 1 and len(problems) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(problems))) as pool:
            rows = list(pool.map(_bench_one, problems, [args] * len(problems)))
    else:
        rows = [_bench_one(p, args) for p in problems]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["problem", "grid", "status", "objective", "tf", "terminal_error", "path_violation",
            "checks_passed", "verdict", "seconds"]
    for row in rows:
        (out / f"{row['problem']}_solution.json").write_text(json.dumps(row.pop("_solution")) + "\n")
    (out / "summary.csv").write_text(_csv(cols, ([r[c] for c in cols] for r in rows)))
    for r in rows:
        print(f"{r['problem']:<11} {r['status']:<8} J={r['objective']:.6g} verdict={r['verdict']} ({r['seconds']:.1f}s)")
    if any(r["status"] not in (SolverStatus.OPTIMAL.value, SolverStatus.FEASIBLE.value) for r in rows):
        return EXIT_NOT_CONVERGED
    if any(r["verdict"] != "pass" for r in rows):
        return EXIT_VERIFY_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="birkhoff-ocp", description="Birkhoff pseudospectral optimal control toolkit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def grid_args(sp, need_n=True):
        sp.add_argument("--grid", choices=GRID_NAMES, default="cgl")
        if need_n:
            sp.add_argument("--N", type=_order, required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    grid_args(sub.add_parser("grid", help="emit nodes and weights"))
    grid_args(sub.add_parser("birkhoff", help="emit Ba, Bb, wB and identity residuals"))
    c = sub.add_parser("cond", help="condition-number sweep")
    grid_args(c, need_n=False)
    c.add_argument("--from", dest="start", type=_order, required=True)
    c.add_argument("--to", type=_order, required=True)
    c.add_argument("--step", type=_order, default=50)

    s = sub.add_parser("solve", help="transcribe, solve and extract covectors")
    s.add_argument("--problem", choices=tuple(PROBLEMS), required=True)
    s.add_argument("--grid", choices=GRID_NAMES, default=None)
    s.add_argument("--N", type=_order, default=None)
    s.add_argument("--cost-scale", type=_positive, default=None)
    s.add_argument("--ladder", type=_ladder, default=None, help="comma-separated warm-start orders, or 'none'")
    s.add_argument("--tol-feas", type=_positive, default=None)
    s.add_argument("--tol-opt", type=_positive, default=None)
    s.add_argument("--tol-comp", type=_positive, default=None)
    s.add_argument("--max-outer", type=_order, default=None)
    s.add_argument("--max-inner", type=_order, default=None)
    s.add_argument("--time-limit", type=_positive, default=None, help="wall-clock seconds per NLP solve")
    s.add_argument("--config", default=None, help="JSON file of solver options")
    s.add_argument("--out", default=None)

    v = sub.add_parser("verify", help="propagate and score a solution JSON")
    v.add_argument("--solution", required=True)
    v.add_argument("--problem", choices=tuple(PROBLEMS), default=None)
    v.add_argument("--tol-bc", type=_positive, default=None)
    v.add_argument("--tol-path", type=_positive, default=None)
    v.add_argument("--rule", choices=("linear", "zoh"), default="linear")
    v.add_argument("--out", default=None)
    v.add_argument("--csv", default=None, help="write propagated (t, x, u) samples here")

    b = sub.add_parser("bench", help="run presets end to end")
    b.add_argument("--problems", nargs="*", default=None)
    b.add_argument("--out", default="bench")
    b.add_argument("--time-limit", type=_positive, default=None, help="wall-clock seconds per NLP solve")
    b.add_argument("--config", default=None, help="JSON file of solver options")
    return p


COMMANDS = {
    "grid": cmd_grid,
    "birkhoff": cmd_birkhoff,
    "cond": cmd_cond,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 1), format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, GridError, KeyError) as exc:
        print(f"birkhoff-ocp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
