"""Results document assembly, report emission (json/csv/markdown) and method comparison."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from types import SimpleNamespace
from typing import Any, Mapping

from .manifest import check_comparability
from .metrics import (InsufficientPairing, MetricValue, aggregate_episodes, cohens_d, gap_bin_report,
                      per_tier_breakdown)
from .registry import BY_NAME, METRIC_NAMES, META_GATE, pillar_metrics

GAP_SIGNALS = ("embedding", "llm")


class ReportError(ValueError):
    pass


class NotComparable(ReportError):
    def __init__(self, diffs: list[str]):
        super().__init__("runs are not comparable; differing manifest fields: " + ", ".join(diffs))
        self.diffs = diffs


def dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def gap_decay_summary(records: list[Mapping[str, Any]], bins) -> dict[str, Any]:
    recs = [SimpleNamespace(**r) for r in records]
    out: dict[str, Any] = {"bins": [list(b) for b in bins]}
    for signal in GAP_SIGNALS:
        report, dropped = gap_bin_report(recs, bins, signal)
        out[signal] = {"dropped": dropped,
                       "by_type": {t: [{"bin": g.label, "mean": g.mean, "count": g.count} for g in gs]
                                   for t, gs in report.items()}}
    return out


def build_results(manifest: Mapping[str, Any], episodes: Mapping[str, Any], failed: Mapping[str, str],
                  bins) -> dict[str, Any]:
    """Assemble results.json from per-episode results (EpisodeResult objects)."""
    if not episodes:
        raise ReportError("no episodes were evaluated successfully")
    metrics = {ep: r.metrics for ep, r in episodes.items()}
    tiers = {ep: r.tier for ep, r in episodes.items()}
    breakdown = per_tier_breakdown(metrics, tiers)
    records = [g for ep in sorted(episodes) for g in episodes[ep].gap_records]
    return {
        "manifest": dict(manifest),
        "episodes": {ep: {"tier": r.tier, "metrics": {m: r.metrics[m].to_dict() for m in METRIC_NAMES},
                          "meta": r.meta}
                     for ep, r in sorted(episodes.items())},
        "failed_episodes": dict(sorted(failed.items())),
        "aggregate": {scope: {m: a.to_dict() for m, a in aggs.items()} for scope, aggs in breakdown.items()},
        "gap_decay": gap_decay_summary(records, bins),
        "pillar1_shots": {ep: r.pillar1_shots for ep, r in sorted(episodes.items())},
    }


def episode_metrics(doc: Mapping[str, Any]) -> dict[str, dict[str, MetricValue]]:
    return {ep: {m: MetricValue.from_dict(v) for m, v in e["metrics"].items()} for ep, e in doc["episodes"].items()}


def _check(doc: Mapping[str, Any]) -> None:
    if not doc.get("episodes"):
        raise ReportError("no episodes in results; nothing to report")


def _fmt(x: float | None, digits: int = 4) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def csv_rows(doc: Mapping[str, Any]) -> list[dict[str, Any]]:
    rows = []
    for scope, aggs in doc["aggregate"].items():
        for m in METRIC_NAMES:
            a = aggs[m]
            info = BY_NAME[m]
            rows.append({"scope": scope, "metric": m, "pillar": info.pillar, "group": info.group,
                         "aggregation": info.aggregation, "corrected": a["corrected"], "rawmean": a["rawmean"],
                         "coverage": a["coverage"], "n_eval": a["n_eval"], "n_skipped": a["n_skipped"],
                         "n_failed": a["n_failed"], "n_gated": a["n_gated"], "n_episodes": a["n_episodes"]})
    return rows


def _csv_text(rows: list[dict[str, Any]], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r[k] is None else r[k] for k in fields})
    return buf.getvalue()


def gap_rows(doc: Mapping[str, Any]) -> list[dict[str, Any]]:
    method = doc["manifest"].get("method_name", "")
    rows = []
    for signal in GAP_SIGNALS:
        for etype, bins in doc["gap_decay"].get(signal, {}).get("by_type", {}).items():
            for b in bins:
                rows.append({"method": method, "signal": signal, "type": etype, "bin": b["bin"],
                             "mean": b["mean"], "count": b["count"]})
    return rows


def render_markdown(doc: Mapping[str, Any]) -> str:
    m = doc["manifest"]
    agg = doc["aggregate"]["all"]
    lines = [f"# Evaluation report: {m.get('method_name', 'unnamed')}", "",
             f"- code revision: `{m.get('code_revision')}`",
             f"- episodes evaluated: {len(doc['episodes'])}, failed: {len(doc['failed_episodes'])}", ""]
    titles = {1: "Per-shot quality", 2: "Within-shot script fidelity", 3: "Cross-shot consistency"}
    for pillar in (1, 2, 3):
        lines += [f"## {titles[pillar]}", "",
                  "| metric | corrected | rawmean | coverage | n_eval | n_skipped | n_failed | n_gated |",
                  "|---|---|---|---|---|---|---|---|"]
        for name in pillar_metrics(pillar):
            a = agg[name]
            lines.append(f"| {name} | {_fmt(a['corrected'])} | {_fmt(a['rawmean'])} | {_fmt(a['coverage'], 3)} "
                         f"| {a['n_eval']} | {a['n_skipped']} | {a['n_failed']} | {a['n_gated']} |")
        lines.append("")
    tiers = [t for t in doc["aggregate"] if t != "all"]
    if tiers:
        lines += ["## Corrected value by tier", "", "| metric | " + " | ".join(tiers) + " |",
                  "|---" * (len(tiers) + 1) + "|"]
        for name in METRIC_NAMES:
            lines.append(f"| {name} | " + " | ".join(_fmt(doc["aggregate"][t][name]["corrected"]) for t in tiers)
                         + " |")
        lines.append("")
    gate = {k: sum(e["meta"].get(META_GATE, {}).get(k, 0) for e in doc["episodes"].values())
            for k in ("present", "admitted", "gate_skipped", "bypassed", "failed")}
    lines += ["## Cross-shot gate", "", "| " + " | ".join(gate) + " |", "|---" * len(gate) + "|",
              "| " + " | ".join(str(v) for v in gate.values()) + " |", ""]
    rows = gap_rows(doc)
    if rows:
        lines += ["## Similarity by shot gap", "", "| signal | type | bin | mean | count |", "|---|---|---|---|---|"]
        lines += [f"| {r['signal']} | {r['type']} | {r['bin']} | {_fmt(r['mean'])} | {r['count']} |" for r in rows]
        lines.append("")
    if doc["failed_episodes"]:
        lines += ["## Failed episodes", ""]
        lines += [f"- {ep}: {why}" for ep, why in doc["failed_episodes"].items()]
        lines.append("")
    return "\n".join(lines)


CSV_FIELDS = ["scope", "metric", "pillar", "group", "aggregation", "corrected", "rawmean", "coverage",
              "n_eval", "n_skipped", "n_failed", "n_gated", "n_episodes"]
GAP_FIELDS = ["method", "signal", "type", "bin", "mean", "count"]


def emit_report(doc: Mapping[str, Any], out_dir: str | Path) -> dict[str, Path]:
    """Write results.json, results.csv, gap_decay.csv and report.md. Idempotent."""
    _check(doc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "results.json": dumps(doc),
        "results.csv": _csv_text(csv_rows(doc), CSV_FIELDS),
        "gap_decay.csv": _csv_text(gap_rows(doc), GAP_FIELDS),
        "report.md": render_markdown(doc),
    }
    paths = {}
    for name, text in files.items():
        paths[name] = out / name
        paths[name].write_text(text, encoding="utf-8")
    return paths


def regenerate(results_path: str | Path, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Rebuild every report artifact from an existing results.json."""
    path = Path(results_path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    # recompute aggregates from the stored episode values so the report never drifts from them
    metrics = episode_metrics(doc)
    _check(doc)
    tiers = {ep: e["tier"] for ep, e in doc["episodes"].items()}
    doc["aggregate"] = {s: {m: a.to_dict() for m, a in aggs.items()}
                        for s, aggs in per_tier_breakdown(metrics, tiers).items()}
    return emit_report(doc, out_dir or path.parent)


def compare_results(a: Mapping[str, Any], b: Mapping[str, Any], force: bool = False) -> dict[str, Any]:
    """Paired effect sizes of run A over run B on common episodes.

    Refuses non-comparable manifests unless ``force``; the diff is kept in the output either way.
    """
    _check(a)
    _check(b)
    ok, diffs = check_comparability(a["manifest"], b["manifest"])
    if not ok and not force:
        raise NotComparable(diffs)
    ma, mb = episode_metrics(a), episode_metrics(b)
    agg_a, agg_b = aggregate_episodes(ma), aggregate_episodes(mb)
    effects: dict[str, Any] = {}
    for m in METRIC_NAMES:
        va = {ep: v[m].value for ep, v in ma.items()}
        vb = {ep: v[m].value for ep, v in mb.items()}
        row: dict[str, Any] = {"a": agg_a[m].corrected, "b": agg_b[m].corrected}
        try:
            row.update(cohens_d(va, vb, m).to_dict())
        except InsufficientPairing as exc:
            row.update({"metric": m, "delta": None, "d": None, "d_z": None, "n_paired": 0, "error": str(exc)})
        effects[m] = row
    return {
        "method_a": a["manifest"].get("method_name"), "method_b": b["manifest"].get("method_name"),
        "comparable": ok, "forced": bool(force and not ok), "manifest_diff": diffs,
        "effects": effects,
        "gap_decay": {"a": a.get("gap_decay"), "b": b.get("gap_decay")},
    }


def render_comparison(cmp: Mapping[str, Any]) -> str:
    lines = [f"# {cmp['method_a']} vs {cmp['method_b']}", ""]
    if not cmp["comparable"]:
        lines += ["**Forced comparison of non-comparable runs.** Differing fields:", ""]
        lines += [f"- `{k}`" for k in cmp["manifest_diff"]]
        lines.append("")
    lines += ["| metric | A | B | delta | d | d_z | n_paired |", "|---|---|---|---|---|---|---|"]
    for m, r in cmp["effects"].items():
        lines.append(f"| {m} | {_fmt(r['a'])} | {_fmt(r['b'])} | {_fmt(r['delta'])} | {_fmt(r['d'], 3)} "
                     f"| {_fmt(r['d_z'], 3)} | {r['n_paired']} |")
    lines.append("")
    ga, gb = cmp["gap_decay"]["a"] or {}, cmp["gap_decay"]["b"] or {}
    rows = []
    for signal in GAP_SIGNALS:
        ta = ga.get(signal, {}).get("by_type", {})
        tb = gb.get(signal, {}).get("by_type", {})
        for etype in sorted(set(ta) | set(tb)):
            bins_a = {x["bin"]: x for x in ta.get(etype, [])}
            bins_b = {x["bin"]: x for x in tb.get(etype, [])}
            for label in sorted(set(bins_a) | set(bins_b), key=lambda s: int(s.split("-")[0])):
                xa, xb = bins_a.get(label, {}), bins_b.get(label, {})
                rows.append(f"| {signal} | {etype} | {label} | {_fmt(xa.get('mean'))} ({xa.get('count', 0)}) "
                            f"| {_fmt(xb.get('mean'))} ({xb.get('count', 0)}) |")
    if rows:
        lines += ["## Similarity by shot gap", "", "| signal | type | bin | A (n) | B (n) |", "|---|---|---|---|---|"]
        lines += rows + [""]
    return "\n".join(lines)


def emit_comparison(cmp: Mapping[str, Any], out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"comparison.json": out / "comparison.json", "comparison.md": out / "comparison.md"}
    paths["comparison.json"].write_text(dumps(cmp), encoding="utf-8")
    paths["comparison.md"].write_text(render_comparison(cmp), encoding="utf-8")
    return paths
