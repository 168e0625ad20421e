"""Run the reproduction experiments and write their tables under results/.

    python scripts/run_experiments.py                 # every experiment, default seeds
    python scripts/run_experiments.py fig2a track5    # a subset
    python scripts/run_experiments.py fig2a --seeds 10 --threads 2
"""

import argparse
import logging
import os
import time

from clgnet.experiments import EXPERIMENTS, ExperimentConfig, run_experiment, summary_json


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", metavar="NAME",
                    help=f"experiments to run (default: all of {', '.join(EXPERIMENTS)})")
    ap.add_argument("--seeds", type=int, help="number of seeds, starting at 0")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in args.names or EXPERIMENTS:
        seeds = tuple(range(args.seeds)) if args.seeds else ()
        t0 = time.perf_counter()
        result = run_experiment(ExperimentConfig(name, seeds), threads=args.threads)
        result.write(os.path.join(args.out, name))
        print(f"== {name} ({time.perf_counter() - t0:.0f}s)")
        print(summary_json(result.summary))


if __name__ == "__main__":
    main()
