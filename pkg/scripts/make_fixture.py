"""Write the small end-to-end fixture (scripts, png videos, fake backend tables) to a directory."""
import argparse

from crossshot.synthetic import build_e2e_fixture


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="target directory")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    fx = build_e2e_fixture(args.out, seed=args.seed)
    print(f"dataset: {fx.dataset}\nvideos:  {fx.videos}\ntruth:   {fx.truth_path}")


if __name__ == "__main__":
    main()
