"""Solve both bundled examples and print the results."""

import argparse
from pathlib import Path

import numpy as np

from imprecise_ctmc import solver
from imprecise_ctmc.cli import load_problem

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def example1(E):
    P = load_problem(PROBLEMS / "example1.json")
    h = np.array([-0.7, 1.7, -1.0])
    for upper in (False, True):
        rep = solver.solve_adaptive(P, h, 1.0, E, upper=upper)
        kind = "upper" if upper else "lower"
        print(f"example1 {kind}: h_1 = {np.array2string(rep.h_T, precision=15)}")
        for s in rep.steps:
            print(f"  t={s.t_start:.6f} dt={s.dt:.15g} {s.method} eps={s.epsilon:.3g}")


def example2(E):
    P = load_problem(PROBLEMS / "example2.json")
    lower, upper = [], []
    for i in range(P.m):
        b = solver.transition_bounds(P, i, 1.0, E)
        lower.append(b.lower[0])
        upper.append(b.upper[0])
        print(f"example2 state {i}: [{b.lower[0]:.8e}, {b.upper[0]:.8e}]  "
              f"steps {b.lower_report.n_steps}/{b.upper_report.n_steps}  converged={b.converged}")
    print(f"  sum of lower bounds {sum(lower):.6f}, of upper bounds {sum(upper):.6f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-error", type=float, default=1e-3)
    args = ap.parse_args()
    example1(args.max_error)
    example2(args.max_error)


if __name__ == "__main__":
    main()
