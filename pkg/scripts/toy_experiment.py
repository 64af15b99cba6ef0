"""Train on synthetic toy fog and report the end-to-end acceptance numbers.

    python scripts/toy_experiment.py --workdir runs/toy --iterations 2000
"""

import argparse
import logging

from defog2refog.experiment import run_toy_experiment, run_with_retries


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", default="runs/toy")
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=None, help="single seed; default runs the 3-seed retry policy")
    ap.add_argument("--progress-every", type=int, default=100)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    if args.seed is not None:
        result = run_toy_experiment(
            f"{args.workdir}/seed{args.seed}", seed=args.seed, iterations=args.iterations, progress_every=args.progress_every
        )
        print(result.summary())
        return
    ok, results = run_with_retries(args.workdir, iterations=args.iterations, progress_every=args.progress_every)
    for r in results:
        print(r.summary())
    print("toy end-to-end:", "PASS" if ok else "FAIL")


if __name__ == "__main__":
    main()
