"""Scan the PARTIAL-2HOP parametric accuracy of the twohop preset.

Prints, for each p, how many uniform-init and warm-start OTC-Strict runs end
collapsed. Useful when retuning the preset behind the warm-start ablation.
"""

import argparse
import json
import tempfile
from pathlib import Path

from helpseek import experiments
from helpseek.world import load_preset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, nargs="+", default=[0.13, 0.145, 0.16])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args(argv)

    base = load_preset("twohop").to_dict()
    tmp = Path(tempfile.mkdtemp())
    for p in args.p:
        for t in base["types"]:
            if t["name"] == "PARTIAL-2HOP":
                t["p_param"] = p
        preset = tmp / f"twohop-p{p}.json"
        preset.write_text(json.dumps(base))
        counts = {}
        for warm in (False, True):
            runs = [
                experiments.run(experiments.ExperimentConfig(preset=str(preset), warm_start=warm, seed=s))[0]
                for s in range(args.seeds)
            ]
            counts["warm" if warm else "uniform"] = sum(r.collapsed for r in runs)
        print(f"p={p:.3f} collapsed uniform {counts['uniform']}/{args.seeds} warm {counts['warm']}/{args.seeds}")

if __name__ == "__main__":
    main()
