"""Engagement classifier on three synthetic lectures (two train, one test).

    python scripts/engagement_experiment.py --model runs/actions/model.egkm --out runs/engagement

Needs an action checkpoint, e.g. from ``action_experiment.py``.
"""
import argparse
import json
import logging
from pathlib import Path

from engage.net3d import load_checkpoint
from engage.pipeline import run_engagement


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", required=True)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--students", type=int, default=10)
    ap.add_argument("--duration-seconds", type=float, default=1200)
    ap.add_argument("--disengaged-rate", type=float, default=0.2)
    ap.add_argument("--kernel", choices=("linear", "rbf"), default="linear")
    ap.add_argument("--out", default="runs/engagement")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    sections = {
        "sessions": {"students": str(args.students), "duration_seconds": str(args.duration_seconds),
                     "disengaged_rate": str(args.disengaged_rate), "count": "3", "train": "2"},
        "engagement": {"kernel": args.kernel},
    }
    report = run_engagement(load_checkpoint(args.model), sections, Path(args.out), seed=args.seed)
    print(json.dumps(report, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
