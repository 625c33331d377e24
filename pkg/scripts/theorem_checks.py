"""Run the fixed-point verifiers on fresh random instances.

For each seed this solves a LASSO problem with max-sum GAMP and checks the
critical-point conditions, then solves a small smooth problem with
sum-product GAMP and checks the moment and derivative conditions.  Problems
are drawn with Philox, keyed by the seed.

    python3 scripts/theorem_checks.py --seeds 5
"""

import argparse
import math

import numpy as np

from gampkit.gamp import MAX_SUM, SUM_PRODUCT, GampOptions, run_gamp
from gampkit.penalties import Custom, Laplace, PenaltyArray, Quadratic
from gampkit.problem import GlmProblem
from gampkit.variational import check_approx_diagonals, check_maxsum_fixed_point, check_sumproduct_fixed_point


def logcosh():
    g = np.linspace(-8.0, 8.0, 81)
    return Custom(tuple(g), tuple(np.log(np.cosh(g))))


def lasso(g, m, n, lam):
    A = g.standard_normal((m, n)) * (1.0 / math.sqrt(m))
    x0 = np.where(g.random(n) < 0.3, g.standard_normal(n), 0.0)
    y = A @ x0 + 0.1 * g.standard_normal(m)
    return GlmProblem(A, Laplace(lam), PenaltyArray([Quadratic(float(v), 1.0) for v in y]))


def smooth(g):
    A = g.standard_normal((2, 2))
    outs = PenaltyArray([Quadratic(float(g.normal()), 0.5), Quadratic(float(g.normal()), 1.0)])
    return GlmProblem(A, logcosh(), outs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--tol", type=float, default=1e-6)
    args = ap.parse_args()

    failures = 0
    for seed in range(args.seeds):
        g = np.random.Generator(np.random.Philox(key=seed))
        p = lasso(g, 30, 40, 0.5)
        res = run_gamp(p, GampOptions(variant=MAX_SUM, damping=0.9, tol=1e-10))
        ms = check_maxsum_fixed_point(p, res.state, args.tol)
        dg = check_approx_diagonals(p, res.state, args.tol)
        q = smooth(g)
        res_sp = run_gamp(q, GampOptions(variant=SUM_PRODUCT, damping=0.7, tol=1e-13, max_iters=20000))
        sp = check_sumproduct_fixed_point(q, res_sp.state, args.tol)
        failures += not (ms.passed and dg.passed and sp.passed)
        print(f"seed {seed}: max-sum {ms.summary()}")
        print(f"         diagonals {dg.summary()}")
        print(f"         sum-product {sp.summary()}")
    print(f"{failures} failing seed(s)")
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
