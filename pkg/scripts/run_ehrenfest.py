"""Logarithmic-horizon sweep: for each epsilon, compare packet and
reference at t = c0 ln(1/eps) and report whether the error still falls as
epsilon does.  This probes the approximation at the edge of its validity
window instead of at a fixed time."""

import argparse
import json
from pathlib import Path

from blochpacket.config import ExperimentConfig
from blochpacket.experiments import run_ehrenfest

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "ehrenfest.json"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--jobs", type=int, help="parallel epsilon cells")
    args = parser.parse_args()

    config = ExperimentConfig.from_file(args.config)
    updates = {"kind": "ehrenfest"}
    if args.out:
        updates["output_dir"] = args.out
    if args.jobs:
        updates["jobs"] = args.jobs
    config = config.with_updates(**updates).validate()

    summary = run_ehrenfest(config)
    print(json.dumps(summary, indent=2, sort_keys=True))
    for c0, info in summary["horizons"].items():
        trend = "decreasing" if info["monotone_decreasing"] else "NOT decreasing"
        print(f"c0={c0}: horizon errors {trend}: "
              + ", ".join(f"{e:.4f}" for e in info["errors"]))


if __name__ == "__main__":
    main()
