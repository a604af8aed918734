#!/usr/bin/env python3
"""Write the synthetic benchmark corpus (ratings, reviews, vocab) to a
directory, ready for `convrec ingest`."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from convrec.fixture import FixtureConfig, write_fixture  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixture",
                        help="output directory (default: ./fixture)")
    parser.add_argument("--users", type=int, default=200)
    parser.add_argument("--items", type=int, default=100)
    parser.add_argument("--keyphrases", type=int, default=12)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    cfg = FixtureConfig(n_users=args.users, n_items=args.items,
                        n_keyphrases=args.keyphrases, seed=args.seed)
    paths = write_fixture(args.out, cfg)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
