"""Compare certified errors with observed errors against an ODE reference.

Needs scipy (a test dependency) for the reference integrator.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
import support  # noqa: E402
from imprecise_ctmc import solver  # noqa: E402
from imprecise_ctmc.model import max_norm  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", type=int, default=30)
    ap.add_argument("--T", type=float, default=0.5)
    ap.add_argument("--max-error", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    worst = 0.0
    for i in range(args.models):
        rng = np.random.default_rng(args.seed + i)
        P, _ = support.random_model(rng, 2 + i % 3, spread=0.5)
        h = rng.normal(size=P.m)
        rep = solver.solve_adaptive(P, h, args.T, args.max_error)
        observed = max_norm(rep.h_T - support.ode_oracle(P, h, args.T))
        methods = sorted({s.method for s in rep.steps})
        ratio = observed / rep.max_err if rep.max_err > 0 else float("nan")
        worst = max(worst, observed - rep.max_err)
        print(f"model {i:>3} m={P.m} steps={rep.n_steps:>4} certified={rep.max_err:.2e} "
              f"observed={observed:.2e} ratio={ratio:.3g} {','.join(methods)}")
    print(f"largest excess of observed over certified error: {worst:.3g}")


if __name__ == "__main__":
    main()
