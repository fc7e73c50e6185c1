"""Command line front end: problem files, solving, comparisons, reports.

Problem files are JSON documents in one of two shapes::

    {"states": m, "gambles": [[...], ...], "lower_bounds": [[...], ...]}
    {"states": m, "q_lower": [[...], ...], "q_upper": [[...], ...]}

``lower_bounds[i][k]`` bounds ``q_k . f_i`` from below; ``null`` means the
gamble does not constrain row k.  Optional keys: ``name``, ``description``.

Exit codes: 0 success, 2 parse or validation error, 3 error budget
exhausted, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import solver
from .errors import BudgetExhausted, ModelError, NumericalError, ProblemParseError, StepTooCoarse
from .model import ImpreciseQMatrix, center_seminorm, indicator, max_norm

log = logging.getLogger(__name__)

LOG_ENV = "IMPRECISE_CTMC_LOG"
EXIT_OK, EXIT_INVALID, EXIT_BUDGET, EXIT_NUMERICAL = 0, 2, 3, 4
METHODS = ("adaptive", "uniform-exp", "uniform-euler")


# --- problem files -------------------------------------------------------

def _matrix(doc, key, rows=None, cols=None, allow_null=False):
    if key not in doc:
        raise ProblemParseError("missing", field=key)
    raw = doc[key]
    if not isinstance(raw, list) or not raw or not all(isinstance(r, list) for r in raw):
        raise ProblemParseError("expected a non-empty list of rows", field=key)
    width = len(raw[0])
    out = np.empty((len(raw), width))
    for i, row in enumerate(raw):
        if len(row) != width:
            raise ProblemParseError(f"row {i} has {len(row)} entries, expected {width}", field=key)
        for j, v in enumerate(row):
            if v is None and allow_null:
                out[i, j] = -math.inf
            elif isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v):
                out[i, j] = float(v)
            else:
                raise ProblemParseError(f"entry [{i}][{j}] = {v!r} is not a finite number", field=key)
    if rows is not None and out.shape[0] != rows:
        raise ProblemParseError(f"expected {rows} rows, got {out.shape[0]}", field=key)
    if cols is not None and out.shape[1] != cols:
        raise ProblemParseError(f"expected {cols} columns, got {out.shape[1]}", field=key)
    return out


def problem_from_dict(doc) -> ImpreciseQMatrix:
    if not isinstance(doc, dict):
        raise ProblemParseError("top level must be an object")
    m = doc.get("states")
    if not isinstance(m, int) or isinstance(m, bool) or m < 1:
        raise ProblemParseError("must be a positive integer", field="states")
    meta = {"name": str(doc.get("name", "")), "description": str(doc.get("description", ""))}
    if "q_lower" in doc or "q_upper" in doc:
        QL = _matrix(doc, "q_lower", m, m)
        QU = _matrix(doc, "q_upper", m, m)
        problem = ImpreciseQMatrix.from_intervals(QL, QU, **meta)
    else:
        F = _matrix(doc, "gambles", cols=m)
        L = _matrix(doc, "lower_bounds", rows=F.shape[0], cols=m, allow_null=True)
        problem = ImpreciseQMatrix.from_gambles(F, L, **meta)
    if problem.augmented:
        log.info("indicator gambles added for states %s", list(problem.augmented))
    return problem.validate()


def load_problem(path) -> ImpreciseQMatrix:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return problem_from_dict(doc)


def _num(x):
    return None if x == -math.inf else float(x)


def problem_to_dict(problem: ImpreciseQMatrix) -> dict:
    """Serializable form; floats keep their shortest round-trip repr."""
    doc = {"name": problem.name, "description": problem.description, "states": problem.m}
    if problem.interval_form is not None:
        QL, QU = problem.interval_form
        doc["q_lower"] = [[float(v) for v in row] for row in QL]
        doc["q_upper"] = [[float(v) for v in row] for row in QU]
    else:
        doc["gambles"] = [[float(v) for v in row] for row in problem.gambles]
        doc["lower_bounds"] = [[_num(v) for v in row] for row in problem.lower_bounds]
    return doc


def dump_problem(problem: ImpreciseQMatrix, path):
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2) + "\n")


# --- run configuration ---------------------------------------------------

def parse_gamble(text: str, m: int) -> np.ndarray:
    """``state:i`` and ``neg-state:i`` give -/+ indicators, else comma separated values."""
    text = text.strip()
    for prefix, sign in (("state:", 1.0), ("neg-state:", -1.0)):
        if text.startswith(prefix):
            try:
                i = int(text[len(prefix):])
            except ValueError:
                raise ProblemParseError(f"bad state index in {text!r}", field="h") from None
            if not 0 <= i < m:
                raise ProblemParseError(f"state {i} out of range 0..{m - 1}", field="h")
            return sign * indicator(m, i)
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ProblemParseError(f"cannot parse {text!r}", field="h") from None
    if values.size != m or not np.all(np.isfinite(values)):
        raise ProblemParseError(f"expected {m} finite values, got {text!r}", field="h")
    return values


@dataclass
class RunConfig:
    h: np.ndarray
    T: float
    E: float
    method: str = "adaptive"
    n: int | None = None
    dt_min: float | None = None
    output: str = "text"
    debug_invariants: bool = False
    upper: bool = False

    def __post_init__(self):
        if not self.T >= 0:
            raise ProblemParseError("must be non-negative", field="T")
        if self.method not in METHODS:
            raise ProblemParseError(f"unknown method {self.method!r}", field="method")
        if self.method == "adaptive" and not self.E > 0:
            raise ProblemParseError("must be positive", field="max-error")
        if self.n is not None and self.n < 1:
            raise ProblemParseError("must be at least 1", field="steps")


# --- reports -------------------------------------------------------------

def _vec(v):
    return [float(x) for x in np.asarray(v)]


def _fmt_vec(v):
    return "(" + ", ".join(f"{x:.15g}" for x in np.asarray(v)) + ")"


def _finite(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _step_doc(s):
    # epsilon is undefined (nan) when no cone basis could be built
    return {"t_start": s.t_start, "dt": s.dt, "method": s.method, "epsilon": _finite(s.epsilon),
            "step_error": s.step_error, "allowed": s.allowed, "exact": s.exact,
            "halvings": s.halvings, "interior_min": s.interior_min}


def _grid_steps(problem, g, T, E):
    h_c = center_seminorm(g)
    if h_c == 0.0 or T == 0.0:
        return 1
    return solver.required_steps_uniform(T, problem.qset_norm, h_c, E)


def _euler_steps(problem, g, T, E):
    qn = problem.qset_norm
    h_c = center_seminorm(g)
    n = max(1, math.ceil(T * qn))
    if h_c > 0.0 and E > 0.0:
        n = max(n, math.ceil(T * T * h_c * qn * qn / E))
    return n


def run_solve(problem: ImpreciseQMatrix, cfg: RunConfig) -> dict:
    """Solve and return the structured document (fixed field set)."""
    doc = {"status": "ok", "problem": problem.name, "method": cfg.method, "T": cfg.T,
           "max_error": cfg.E, "upper": cfg.upper, "h": _vec(cfg.h), "h_T": None,
           "certified_error": None, "n_steps": None, "lp_calls": None, "grid_bound": None,
           "steps": []}
    if cfg.method == "adaptive":
        rep = solver.solve_adaptive(problem, cfg.h, cfg.T, cfg.E, dt_min=cfg.dt_min,
                                    upper=cfg.upper, debug_invariants=cfg.debug_invariants)
        doc.update(h_T=_vec(rep.h_T), certified_error=rep.max_err, n_steps=rep.n_steps,
                   lp_calls=rep.lp_calls, steps=[_step_doc(s) for s in rep.steps])
        return doc
    g = -cfg.h if cfg.upper else cfg.h
    if cfg.method == "uniform-exp":
        n = cfg.n or _grid_steps(problem, g, cfg.T, cfg.E)
        rep = solver.solve_uniform_exp(problem, g, cfg.T, n)
    else:
        n = cfg.n or _euler_steps(problem, g, cfg.T, cfg.E)
        rep = solver.solve_uniform_euler(problem, g, cfg.T, n)
    h_T = -rep.h_T if cfg.upper else rep.h_T
    doc.update(h_T=_vec(h_T), n_steps=rep.n, lp_calls=rep.lp_calls, grid_bound=rep.bound)
    if cfg.method == "uniform-exp":
        doc["certified_error"] = rep.bound
    return doc


def _print_solve(doc, out):
    print(f"method          {doc['method']}{' (upper)' if doc['upper'] else ''}", file=out)
    print(f"h_T             {_fmt_vec(doc['h_T'])}", file=out)
    if doc["certified_error"] is not None:
        print(f"certified error {doc['certified_error']:.6g}", file=out)
    if doc["grid_bound"] is not None:
        print(f"grid bound      {doc['grid_bound']:.6g}", file=out)
    print(f"steps           {doc['n_steps']}  (LP calls {doc['lp_calls']})", file=out)
    if doc["steps"]:
        print(f"{'#':>4} {'t_start':>12} {'dt':>12} {'method':>10} {'epsilon':>10} "
              f"{'step_err':>10} exact", file=out)
        for i, s in enumerate(doc["steps"]):
            eps = "-" if s["epsilon"] is None else f"{s['epsilon']:.3g}"
            line = (f"{i:>4} {s['t_start']:>12.6g} {s['dt']:>12.6g} {s['method']:>10} "
                    f"{eps:>10} {s['step_error']:>10.3g} {s['exact']}")
            if s["interior_min"] is not None:
                line += f"  interior_min={s['interior_min']:.3g}"
            print(line, file=out)


def cmd_solve(problem, cfg: RunConfig, out=sys.stdout) -> int:
    try:
        doc = run_solve(problem, cfg)
    except BudgetExhausted as exc:
        rep = exc.report
        doc = {"status": "budget-exhausted", "message": str(exc),
               "n_steps": rep.n_steps if rep else None,
               "certified_error": rep.max_err if rep else None}
        _emit(doc, cfg.output, out, fallback=str(exc))
        return EXIT_BUDGET
    _emit(doc, cfg.output, out, printer=_print_solve)
    return EXIT_OK


def _emit(doc, output, out, printer=None, fallback=None):
    if output == "structured":
        print(json.dumps(doc, indent=2), file=out)
    elif printer is not None:
        printer(doc, out)
    else:
        print(fallback, file=out)


def run_compare(problem, cfg: RunConfig) -> dict:
    g = -cfg.h if cfg.upper else cfg.h
    h_c = center_seminorm(g)
    results = {}
    results["adaptive"] = run_solve(problem, RunConfig(**{**cfg.__dict__, "method": "adaptive"}))
    n_exp = _grid_steps(problem, g, cfg.T, cfg.E)
    results["uniform-exp"] = run_solve(problem, RunConfig(**{**cfg.__dict__, "method": "uniform-exp",
                                                            "n": n_exp}))
    n_euler = _euler_steps(problem, g, cfg.T, cfg.E)
    results["uniform-euler"] = run_solve(problem, RunConfig(**{**cfg.__dict__, "method": "uniform-euler",
                                                              "n": n_euler}))
    diffs = {}
    for a, b in itertools.combinations(METHODS, 2):
        diffs[f"{a} vs {b}"] = max_norm(np.subtract(results[a]["h_T"], results[b]["h_T"]))
    return {"problem": problem.name, "T": cfg.T, "max_error": cfg.E, "qset_norm": problem.qset_norm,
            "h_center_seminorm": h_c, "required_steps_uniform": n_exp,
            "methods": {k: {"n_steps": v["n_steps"], "lp_calls": v["lp_calls"], "h_T": v["h_T"],
                            "certified_error": v["certified_error"], "grid_bound": v["grid_bound"]}
                        for k, v in results.items()},
            "max_differences": diffs}


def _print_compare(doc, out):
    print(f"|Q-set| = {doc['qset_norm']:.6g}, |h|_c = {doc['h_center_seminorm']:.6g}, "
          f"E = {doc['max_error']:g}", file=out)
    print(f"uniform grid steps needed for E: {doc['required_steps_uniform']}", file=out)
    print(f"{'method':>14} {'steps':>8} {'LP calls':>9} {'error bound':>12}  h_T", file=out)
    for name, r in doc["methods"].items():
        bound = r["certified_error"] if r["certified_error"] is not None else r["grid_bound"]
        print(f"{name:>14} {r['n_steps']:>8} {r['lp_calls']:>9} {bound:>12.4g}  {_fmt_vec(r['h_T'])}",
              file=out)
    for pair, d in doc["max_differences"].items():
        print(f"max |difference| {pair}: {d:.3g}", file=out)


def cmd_compare(problem, cfg: RunConfig, out=sys.stdout) -> int:
    try:
        doc = run_compare(problem, cfg)
    except BudgetExhausted as exc:
        _emit({"status": "budget-exhausted", "message": str(exc)}, cfg.output, out, fallback=str(exc))
        return EXIT_BUDGET
    _emit(doc, cfg.output, out, printer=_print_compare)
    return EXIT_OK


def row_vertex_count(problem: ImpreciseQMatrix, k: int, limit=20000):
    """Number of vertices of row k's polytope by brute force, or None if too many subsets."""
    A, b, _ = problem.row_constraints(k)
    m = problem.m
    n_con = A.shape[0]
    if math.comb(n_con, m - 1) > limit:
        return None
    found = []
    for subset in itertools.combinations(range(n_con), m - 1):
        M = np.vstack([np.ones(m), A[list(subset)]])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        q = np.linalg.solve(M, np.concatenate([[0.0], b[list(subset)]]))
        if np.all(A @ q >= b - 1e-9 * (1.0 + np.abs(b))):
            if not any(np.allclose(q, p, atol=1e-9) for p in found):
                found.append(q)
    return len(found)


def run_info(problem) -> dict:
    lo, hi = problem.row_ranges
    return {"name": problem.name, "description": problem.description, "states": problem.m,
            "gambles": problem.n_gambles, "augmented_indicators": list(problem.augmented),
            "interval_form": problem.interval_form is not None,
            "qset_norm": problem.qset_norm, "imprecision_bound": problem.imprecision_bound,
            "rate_ranges": {"lower": lo.tolist(), "upper": hi.tolist()},
            "row_vertices": [row_vertex_count(problem, k) for k in range(problem.m)],
            "valid": True}


def _print_info(doc, out):
    print(f"problem          {doc['name'] or '-'}", file=out)
    if doc["description"]:
        print(f"description      {doc['description']}", file=out)
    print(f"states           {doc['states']}", file=out)
    print(f"gambles          {doc['gambles']}"
          + (f" (indicators added for {doc['augmented_indicators']})" if doc["augmented_indicators"] else ""),
          file=out)
    print(f"|Q-set|          {doc['qset_norm']:.10g}", file=out)
    print(f"imprecision <=   {doc['imprecision_bound']:.10g}", file=out)
    print(f"row vertices     {doc['row_vertices']}", file=out)
    print("rate ranges (row: [lo, hi] per entry)", file=out)
    lo, hi = doc["rate_ranges"]["lower"], doc["rate_ranges"]["upper"]
    for k in range(doc["states"]):
        cells = "  ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(lo[k], hi[k]))
        print(f"  {k}: {cells}", file=out)
    print("validation       ok", file=out)


def cmd_info(problem, output="text", out=sys.stdout) -> int:
    _emit(run_info(problem), output, out, printer=_print_info)
    return EXIT_OK


def run_bounds(problem, state, T, E, dt_min=None) -> dict:
    b = solver.transition_bounds(problem, state, T, E, dt_min=dt_min)
    return {"state": state, "T": T, "max_error": E, "lower": _vec(b.lower), "upper": _vec(b.upper),
            "lower_steps": b.lower_report.n_steps, "upper_steps": b.upper_report.n_steps,
            "lower_certified_error": b.lower_report.max_err,
            "upper_certified_error": b.upper_report.max_err,
            "spread_lower": b.spread_lower, "spread_upper": b.spread_upper,
            "converged": b.converged}


def _print_bounds(doc, out):
    print(f"probability of state {doc['state']} at T={doc['T']:g}, by initial state", file=out)
    print(f"  lower {_fmt_vec(doc['lower'])}  steps {doc['lower_steps']}  "
          f"error {doc['lower_certified_error']:.3g}", file=out)
    print(f"  upper {_fmt_vec(doc['upper'])}  steps {doc['upper_steps']}  "
          f"error {doc['upper_certified_error']:.3g}", file=out)
    print(f"  spread lower {doc['spread_lower']:.3g}, upper {doc['spread_upper']:.3g}; "
          f"converged: {doc['converged']}", file=out)


def cmd_bounds(problem, state, T, E, dt_min=None, output="text", out=sys.stdout) -> int:
    if not 0 <= state < problem.m:
        raise ProblemParseError(f"state {state} out of range 0..{problem.m - 1}", field="state")
    try:
        doc = run_bounds(problem, state, T, E, dt_min)
    except BudgetExhausted as exc:
        _emit({"status": "budget-exhausted", "message": str(exc)}, output, out, fallback=str(exc))
        return EXIT_BUDGET
    _emit(doc, output, out, printer=_print_bounds)
    return EXIT_OK


# --- entry point ---------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="imprecise-ctmc",
                                description="Certified bounds for imprecise continuous-time Markov chains.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_h=True):
        sp.add_argument("--problem", required=True, help="problem file (JSON)")
        if needs_h:
            sp.add_argument("--h", required=True, help="csv values, state:i or neg-state:i")
        sp.add_argument("--T", type=float, required=True, help="time horizon")
        sp.add_argument("--max-error", type=float, default=1e-3)
        sp.add_argument("--dt-min", type=float, default=None)
        sp.add_argument("--output", choices=("text", "structured"), default="text")

    s = sub.add_parser("solve", help="solve the imprecise backward equation")
    common(s)
    s.add_argument("--method", choices=METHODS, default="adaptive")
    s.add_argument("--steps", type=int, default=None, help="step count for grid methods")
    s.add_argument("--upper", action="store_true", help="upper instead of lower expectation")
    s.add_argument("--debug-invariants", action="store_true")

    c = sub.add_parser("compare", help="adaptive against uniform grids at matched error")
    common(c)
    c.add_argument("--upper", action="store_true")

    i = sub.add_parser("info", help="model summary and validation")
    i.add_argument("--problem", required=True)
    i.add_argument("--output", choices=("text", "structured"), default="text")

    b = sub.add_parser("bounds", help="lower/upper probabilities of a state at time T")
    common(b, needs_h=False)
    b.add_argument("--state", type=int, required=True)
    return p


def _setup_logging():
    name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("imprecise_ctmc").setLevel(level)


def main(argv=None, out=sys.stdout) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        problem = load_problem(args.problem)
        if args.command == "info":
            return cmd_info(problem, args.output, out)
        if args.command == "bounds":
            return cmd_bounds(problem, args.state, args.T, args.max_error, args.dt_min, args.output, out)
        cfg = RunConfig(h=parse_gamble(args.h, problem.m), T=args.T, E=args.max_error,
                        method=getattr(args, "method", "adaptive"), n=getattr(args, "steps", None),
                        dt_min=args.dt_min, output=args.output,
                        debug_invariants=getattr(args, "debug_invariants", False),
                        upper=args.upper)
        if args.command == "compare":
            return cmd_compare(problem, cfg, out)
        return cmd_solve(problem, cfg, out)
    except (ModelError, StepTooCoarse, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BudgetExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
