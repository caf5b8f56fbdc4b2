"""Uniform, k+l and kl refinement on the waves problem; writes records per scheme."""

import argparse
from pathlib import Path

from klref.amr import SCHEMES, AmrConfig, run_scheme, write_records
from klref.problems import waves


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=8)
    ap.add_argument("--ksteps", type=int, default=10)
    ap.add_argument("--nu", type=int, default=2)
    ap.add_argument("--alpha", type=float, default=10.0)
    ap.add_argument("--omega", type=float, default=50.26548245743669)
    ap.add_argument("--out", default="waves_convergence")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = waves(args.alpha, args.omega)
    for scheme in SCHEMES:
        run = run_scheme(p, AmrConfig(scheme=scheme, K=args.ksteps, L=args.levels, nu=args.nu))
        write_records(out / f"records_{scheme}.csv", [run.base] + run.records)
        f = run.final
        print(f"{scheme:8s} macros={f.n_macros:5d} dofs={f.dofs:9d} error={f.error:.4e} errratio={f.errratio:.3f}")


if __name__ == "__main__":
    main()
