"""Error-law sweep: propagate the leading-order packet and the reference
solver from the same initial data across an epsilon list, then fit the
log-log slope of the L2 error at each sample time.  The slope should sit
near 0.5."""

import argparse
import json
from pathlib import Path

from blochpacket.config import ExperimentConfig
from blochpacket.experiments import run_convergence

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "convergence_error.json"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--jobs", type=int, help="parallel epsilon cells")
    args = parser.parse_args()

    config = ExperimentConfig.from_file(args.config)
    updates = {"kind": "convergence", "convergence_mode": "error"}
    if args.out:
        updates["output_dir"] = args.out
    if args.jobs:
        updates["jobs"] = args.jobs
    config = config.with_updates(**updates).validate()

    summary = run_convergence(config)
    print(json.dumps(summary, indent=2, sort_keys=True))
    for t, fit in summary["slopes"].items():
        print(f"t={t}: slope={fit['slope']:.4f} over {fit['points']} epsilons")


if __name__ == "__main__":
    main()
