"""Warm-start, train, and evaluate (both modes) one config into one output directory.

    python scripts/run_pipeline.py --config configs.json --out runs/demo
"""

import argparse
import sys

from helpseek import cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)

    common = ["--out", args.out]
    if args.config:
        common += ["--config", args.config]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    for cmd in (["warmstart"], ["train"], ["eval"], ["eval", "--mode", "abstain"]):
        code = cli.main(cmd + common)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
