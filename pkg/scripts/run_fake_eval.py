"""Build the fixture and evaluate it end to end with offline backends.

Handy as a smoke test: no network, a few seconds, and the full set of output files.
"""
import argparse
import sys
from pathlib import Path

from crossshot.cli import main as cli_main
from crossshot.synthetic import build_e2e_fixture


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("workdir")
    ap.add_argument("--seed", type=int, default=42, help="fake backend seed")
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()
    work = Path(args.workdir)
    fx = build_e2e_fixture(work / "fixture")
    return cli_main(["evaluate", "--dataset", str(fx.dataset), "--videos", str(fx.videos),
                     "--out", str(work / "out"), "--fake-backends", str(args.seed),
                     "--parallel", str(args.parallel)])


if __name__ == "__main__":
    sys.exit(main())
