"""Scan the lowest Bloch bands of the cell potential across the Brillouin
zone and cross-check the analytic band derivatives against finite
differences.  Writes bands.csv (one row per k with E_1..E_n and the local
gap) plus a JSON summary."""

import argparse
import json
from pathlib import Path

from blochpacket.config import ExperimentConfig
from blochpacket.experiments import run_bands

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "bands.json"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out", help="output directory override")
    args = parser.parse_args()

    config = ExperimentConfig.from_file(args.config)
    if args.out:
        config = config.with_updates(output_dir=args.out)
    config = config.with_updates(kind="bands").validate()

    summary = run_bands(config)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"max gradient deviation vs FD: {summary['max_grad_deviation']:.3e}")
    print(f"max Hessian deviation vs FD:  {summary['max_hess_deviation']:.3e}")


if __name__ == "__main__":
    main()
