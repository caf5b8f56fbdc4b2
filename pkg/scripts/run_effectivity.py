"""Effectivity indices of the estimate for j = 1..4 along a kl run, for several nu."""

import argparse
from pathlib import Path

from klref.amr import AmrConfig, run_scheme
from klref.app import EFFECTIVITY_COLUMNS, effectivity_rows, write_rows
from klref.problems import get_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", default="waves2d")
    ap.add_argument("--levels", type=int, default=8)
    ap.add_argument("--ksteps", type=int, default=10)
    ap.add_argument("--nu", type=int, nargs="+", default=[6, 2, 1])
    ap.add_argument("--estimator", default="unscaled")
    ap.add_argument("--out", default="effectivity")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = get_problem(args.problem)
    # idealized rate: quadratic for smooth problems, 4/3 at the corner singularity
    theta = 2.0 ** (-4.0 / 3.0) if args.problem == "lshape" else 0.25
    for nu in args.nu:
        cfg = AmrConfig(K=args.ksteps, L=args.levels, nu=nu, estimator=args.estimator, sweep_j=(1, 2, 3, 4))
        run = run_scheme(p, cfg)
        rows = effectivity_rows(run.effectivity, theta)
        write_rows(out / f"effectivity_nu{nu}.csv", EFFECTIVITY_COLUMNS, rows)
        print(f"nu={nu}")
        for j in (1, 2, 3, 4):
            g = [r[4] for r in rows if r[1] == j]
            inside = sum(r[8] for r in rows if r[1] == j)
            print(f"  j={j} inside {inside:2d}/{len(g)}  gamma: " + " ".join(f"{x:.3f}" for x in g))


if __name__ == "__main__":
    main()
