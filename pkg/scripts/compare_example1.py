"""Step and LP-call counts: adaptive solver against uniform grids on Example 1."""

import argparse
import time
from pathlib import Path

import numpy as np

from imprecise_ctmc import solver
from imprecise_ctmc.cli import load_problem
from imprecise_ctmc.model import center_seminorm, max_norm

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-error", type=float, default=1e-3)
    ap.add_argument("--T", type=float, default=1.0)
    args = ap.parse_args()
    P = load_problem(PROBLEMS / "example1.json")
    g = -np.array([-0.7, 1.7, -1.0])  # upper solution via conjugacy
    E, T = args.max_error, args.T

    t0 = time.perf_counter()
    ada = solver.solve_adaptive(P, g, T, E)
    t_ada = time.perf_counter() - t0
    n = solver.required_steps_uniform(T, P.qset_norm, center_seminorm(g), E)
    t0 = time.perf_counter()
    grid = solver.solve_uniform_exp(P, g, T, n)
    t_grid = time.perf_counter() - t0

    print(f"|Q-set| = {P.qset_norm:.6g}, |h|_c = {center_seminorm(g):.3g}, E = {E:g}")
    print(f"with the rounded inputs 1.82 and 0.45: "
          f"{solver.required_steps_uniform(T, 1.82, 0.45, E)} uniform steps")
    print(f"adaptive:    {ada.n_steps:>6} steps {ada.lp_calls:>7} LP calls  "
          f"error <= {ada.max_err:.3g}  {t_ada:.3f}s")
    print(f"uniform exp: {n:>6} steps {grid.lp_calls:>7} LP calls  "
          f"error <= {grid.bound:.3g}  {t_grid:.3f}s")
    print(f"max |difference| = {max_norm(ada.h_T - grid.h_T):.3g}")


if __name__ == "__main__":
    main()
