"""Dataset totals for a script directory, or for generated benchmark-shaped scripts."""
import argparse
import json

from crossshot.script import load_dataset, parse_document
from crossshot.stats import dataset_stats
from crossshot.synthetic import benchmark_like_documents

KEYS = ["all.episodes", "all.shots", "all.registry.total", "all.appearances.total",
        "all.first_appearances.total", "all.reappearances.total",
        "all.reappearance_rate.character", "all.reappearance_rate.object", "all.reappearance_rate.location"]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset", help="directory of episode scripts; default: generated benchmark-shaped set")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full", action="store_true", help="print every statistic")
    args = ap.parse_args()
    if args.dataset:
        scripts = load_dataset(args.dataset)
    else:
        scripts = [parse_document(d) for d in benchmark_like_documents(args.seed)]
    rep = dataset_stats(scripts)
    print(json.dumps(rep if args.full else {k: rep.get(k) for k in KEYS}, indent=1))


if __name__ == "__main__":
    main()
