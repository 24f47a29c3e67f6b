"""Run every canned experiment and write its tables under OUT/reproduce/."""

import argparse
import sys
import time

from helpseek import cli, experiments


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", nargs="*", choices=sorted(experiments.EXPERIMENTS), help="subset to run")
    args = ap.parse_args(argv)

    for name in args.only or list(experiments.EXPERIMENTS):
        t0 = time.time()
        code = cli.main(["reproduce", name, "--out", args.out, "--seed", str(args.seed)])
        print(f"{name}: exit {code} in {time.time() - t0:.0f}s", file=sys.stderr)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
