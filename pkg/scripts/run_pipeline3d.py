"""Mesh-only 3-d pipeline on the 162-tet box: mark 12.5%, refine, check conformity."""

import argparse
import sys

from klref.app import main as klref_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--box", type=int, default=3)
    ap.add_argument("--mark-fraction", default="0.125")
    ap.add_argument("--out", default="pipeline3d")
    args = ap.parse_args()
    return klref_main(["pipeline", "--dim", "3", "--box", str(args.box), "--mark-fraction", args.mark_fraction,
                       "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
