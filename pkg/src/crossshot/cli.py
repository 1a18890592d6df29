"""Command-line entry points: validate, stats, evaluate, compare, report.

Exit codes: 0 success, 1 validation or comparability failure, 2 runtime failure.

Environment:
  CROSSSHOT_<ROLE>_URL       endpoint per backend role (GROUNDING, EMBEDDING, TEXT_IMAGE,
                             JUDGE, FLOW, AESTHETIC, IMAGING) when not set in --config
  CROSSSHOT_JUDGE_API_KEYS   comma-separated judge credentials (only their count is recorded)
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backends.base import BackendError, BackendUnreachable
from .backends.fakes import FakeTables, fake_suite
from .config import RunConfig, judge_api_keys
from .manifest import ManifestError, build_manifest, check_comparability
from .pipeline import Ledger, run_evaluation
from .report import NotComparable, ReportError, build_results, compare_results, emit_comparison, emit_report, regenerate
from .script import TIERS, ScriptError, dataset_files, load_script, select_episodes
from .stats import dataset_stats

log = logging.getLogger("crossshot")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
FAKE_TABLES = "fake_tables.json"


def _load_valid(dataset: Path) -> tuple[list, list[str]]:
    scripts, problems = [], []
    files = dataset_files(dataset) if dataset.is_dir() else []
    if not files:
        return [], [f"no episodes found in {dataset}"]
    seen: dict[str, Path] = {}
    for path in files:
        try:
            s = load_script(path)
        except (OSError, UnicodeDecodeError) as exc:
            problems.append(f"{path.name}: unreadable: {exc}")
            continue
        except ScriptError as exc:
            problems.append(f"{path.name}: {exc}")
            continue
        if s.episode_id in seen:
            problems.append(f"{path.name}: duplicate episode_id {s.episode_id} (also in {seen[s.episode_id].name})")
            continue
        seen[s.episode_id] = path
        scripts.append(s)
    return sorted(scripts, key=lambda s: s.episode_id), problems


def cmd_validate(args: argparse.Namespace) -> int:
    scripts, problems = _load_valid(Path(args.dataset))
    for p in problems:
        print(f"INVALID {p}")
    print(f"{len(scripts)} valid episode(s), {len(problems)} problem(s)")
    return EXIT_INVALID if problems else EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    scripts, problems = _load_valid(Path(args.dataset))
    if problems:
        for p in problems:
            print(f"INVALID {p}", file=sys.stderr)
        return EXIT_INVALID
    scripts = select_episodes(scripts, args.episodes, args.tier)
    report = dataset_stats(scripts)
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "dataset_stats.json").write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    app, uniq, re_ = (report["all.appearances.total"], report["all.first_appearances.total"],
                      report["all.reappearances.total"])
    verdict = "holds" if app - uniq == re_ else "BROKEN"
    print(f"re-appearance identity: {app} - {uniq} = {app - uniq} vs {re_} ({verdict})", file=sys.stderr)
    return EXIT_OK


def _backends(run_cfg: RunConfig, videos: Path):
    cfg = run_cfg.eval_config
    if run_cfg.fake_seed is None:
        from .backends.remote import remote_suite
        return remote_suite(run_cfg), {}, len(judge_api_keys())
    tables_path = videos / FAKE_TABLES
    if tables_path.exists():
        return fake_suite(run_cfg.fake_seed, FakeTables.load(tables_path), strict=True, cfg=cfg), \
            {"fake_tables": tables_path}, 0
    return fake_suite(run_cfg.fake_seed, cfg=cfg), {}, 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        run_cfg = RunConfig.from_file(args.config, dataset=args.dataset, videos=args.videos, out=args.out,
                                      method_name=args.method_name, fake_seed=args.fake_backends,
                                      parallel=args.parallel, tier=args.tier, episodes=args.episodes)
        cfg = run_cfg.eval_config
    except (OSError, ValueError, TypeError) as exc:
        print(f"bad run configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    missing = [k for k in ("dataset", "videos", "out") if getattr(run_cfg, k) is None]
    if missing:
        print(f"missing required setting(s): {', '.join('--' + m for m in missing)}", file=sys.stderr)
        return EXIT_INVALID
    for key in ("dataset", "videos"):
        if not getattr(run_cfg, key).is_dir():
            print(f"{key} directory does not exist: {getattr(run_cfg, key)}", file=sys.stderr)
            return EXIT_INVALID
    scripts, problems = _load_valid(run_cfg.dataset)
    if problems:
        for p in problems:
            print(f"INVALID {p}", file=sys.stderr)
        return EXIT_INVALID
    scripts = select_episodes(scripts, run_cfg.episodes, run_cfg.tier)
    if not scripts:
        print("no episodes match the episode/tier filters", file=sys.stderr)
        return EXIT_INVALID

    out = run_cfg.out
    try:
        backends, artifacts, n_keys = _backends(run_cfg, run_cfg.videos)
        manifest = build_manifest(cfg, backends, method_name=run_cfg.method_name, n_llm_keys=n_keys,
                                  artifacts=artifacts)
    except (BackendError, ManifestError, OSError, ValueError) as exc:
        print(f"cannot set up backends: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and Ledger(out).completed():
        ok, diffs = check_comparability(json.loads(manifest_path.read_text("utf-8")), manifest)
        if not ok:
            print("existing run in this output directory used a different configuration; "
                  f"differing fields: {', '.join(diffs)}. Use a fresh --out directory.", file=sys.stderr)
            return EXIT_INVALID
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    try:
        outcome = run_evaluation(scripts, run_cfg.videos, out, backends, cfg, parallel=max(1, run_cfg.parallel))
    except BackendUnreachable as exc:
        done = sorted(Ledger(out).completed())
        print(f"backend unreachable, run aborted: {exc}. {len(done)} completed episode(s) kept in {out}/episodes; "
              "rerun the same command to resume.", file=sys.stderr)
        return EXIT_RUNTIME
    if outcome.skipped:
        log.info("resumed: %d episode(s) already complete", len(outcome.skipped))
    for ep, why in outcome.failed.items():
        print(f"episode {ep} failed: {why}", file=sys.stderr)
    try:
        doc = build_results(manifest, outcome.results, outcome.failed, cfg.gap_bins)
    except ReportError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_RUNTIME
    paths = emit_report(doc, out)
    print(f"evaluated {len(outcome.results)} episode(s), {len(outcome.failed)} failed; "
          f"results in {paths['results.json']}")
    return EXIT_OK


def _read_results(path: str) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "results.json"
    return json.loads(p.read_text(encoding="utf-8"))


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        a, b = _read_results(args.results_a), _read_results(args.results_b)
    except (OSError, ValueError) as exc:
        print(f"cannot read results: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        cmp = compare_results(a, b, force=args.force)
    except NotComparable as exc:
        print(f"{exc}\nre-run with --force to compare anyway", file=sys.stderr)
        return EXIT_INVALID
    except ReportError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    if not cmp["comparable"]:
        print("warning: forced comparison; differing fields: " + ", ".join(cmp["manifest_diff"]), file=sys.stderr)
    if args.out:
        paths = emit_comparison(cmp, args.out)
        print(f"comparison written to {paths['comparison.md']}")
    else:
        from .report import render_comparison
        print(render_comparison(cmp))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    src = Path(args.results)
    if src.is_dir():
        src = src / "results.json"
    try:
        paths = regenerate(src, args.out)
    except ReportError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot regenerate report: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"report written to {paths['report.md']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossshot", description=__doc__.split("\n")[0],
                                epilog="exit codes: 0 ok, 1 invalid input or not comparable, 2 runtime failure")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and validate every episode script")
    v.add_argument("--dataset", required=True)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", help="dataset statistics")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out")
    s.add_argument("--episodes", nargs="+")
    s.add_argument("--tier", choices=TIERS)
    s.set_defaults(func=cmd_stats)

    e = sub.add_parser("evaluate", help="run the three-pillar evaluation")
    e.add_argument("--dataset")
    e.add_argument("--videos")
    e.add_argument("--out")
    e.add_argument("--config", help="JSON run config (backends, eval overrides, filters)")
    e.add_argument("--fake-backends", type=int, metavar="SEED", help="use deterministic offline backends")
    e.add_argument("--episodes", nargs="+")
    e.add_argument("--tier", choices=TIERS)
    e.add_argument("--parallel", type=int)
    e.add_argument("--method-name")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="paired effect sizes of run A over run B")
    c.add_argument("results_a")
    c.add_argument("results_b")
    c.add_argument("--out")
    c.add_argument("--force", action="store_true", help="compare even if manifests differ")
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("report", help="regenerate report files from results.json")
    r.add_argument("--results", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
