"""Per-episode evaluation (grounding -> P1 -> P2 -> gate -> P3) and the batch driver."""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import cv2

from .backends.base import BackendSet, BackendUnreachable, JudgeFailure
from .backends.verdicts import AuditLog, Judge
from .config import EvalConfig
from .grounding import ABSENT, DetectionCache, GroundedAppearance, GroundingFailure, ground_entity, grounding_query
from .media import IngestError, VideoSource, open_shot
from .metrics import MetricValue
from .pillar1 import episode_quality, failed_shot, shot_quality
from .pillar2 import (ActionJudgment, FidelityJudgment, aggregate_pillar2, build_action_grid, judge_action,
                      judge_entity_fidelity)
from .pillar3 import (CrossShotPool, centroid_similarities, fidelity_gate, gap_decay_dataset, gate_meta,
                      llm_gap_records, pairwise_llm_metrics, pooled_embedding_metric, scene_llm_metrics,
                      transition_boundary)
from .registry import META_GATE, METRIC_NAMES
from .script import EpisodeScript

log = logging.getLogger(__name__)


@dataclass
class EpisodeResult:
    episode_id: str
    tier: str
    metrics: dict[str, MetricValue]
    meta: dict[str, Any] = field(default_factory=dict)
    pillar1_shots: list[dict] = field(default_factory=list)
    appearances: list[dict] = field(default_factory=list)
    pools: dict[str, dict] = field(default_factory=dict)
    pairs: list[dict] = field(default_factory=list)
    gap_records: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "episode_id": self.episode_id, "tier": self.tier,
            "metrics": {m: self.metrics[m].to_dict() for m in METRIC_NAMES},
            "meta": self.meta, "pillar1_shots": self.pillar1_shots, "appearances": self.appearances,
            "pools": self.pools, "pairs": self.pairs, "gap_records": self.gap_records,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EpisodeResult":
        return cls(d["episode_id"], d["tier"], {m: MetricValue.from_dict(v) for m, v in d["metrics"].items()},
                   d.get("meta", {}), d.get("pillar1_shots", []), d.get("appearances", []), d.get("pools", {}),
                   d.get("pairs", []), d.get("gap_records", []))


def _pool_record(p: CrossShotPool) -> dict:
    return {"entity": p.entity, "type": p.entity_type, "admitted": p.shots, "gate_skipped": p.gate_skipped,
            "bypassed": p.bypassed, "failed": p.failed, "anchor": p.anchor,
            "similarities": {str(k): v for k, v in sorted(p.sims.items())}, "diagnostics": p.diagnostics}


def _save_crop(audit_dir: Path | None, a: GroundedAppearance) -> str | None:
    if audit_dir is None or a.crop is None:
        return None
    rel = Path("crops") / a.episode_id / f"shot_{a.shot_index}__{a.entity}.png"
    path = audit_dir / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), cv2.cvtColor(a.crop, cv2.COLOR_RGB2BGR))
    return rel.as_posix()


def evaluate_episode(script: EpisodeScript, videos_dir: str | Path, backends: BackendSet, cfg: EvalConfig,
                     audit_dir: str | Path | None = None) -> EpisodeResult:
    ep = script.episode_id
    audit_dir = Path(audit_dir) if audit_dir is not None else None
    judge_log = audit_dir / ep / "judge_log.jsonl" if audit_dir is not None else None
    if judge_log is not None and judge_log.exists():
        judge_log.unlink()
    judge = Judge(backends.judge, AuditLog(judge_log), reasks=cfg.judge_reasks)
    shots = sorted(script.shots, key=lambda s: s.index)

    sources: dict[int, VideoSource | None] = {}
    for s in shots:
        try:
            sources[s.index] = open_shot(videos_dir, ep, s.index)
        except IngestError as exc:
            log.error("%s", exc)
            sources[s.index] = None

    def source(k: int) -> VideoSource | None:
        return sources.get(k)

    # grounding
    appearances: dict[tuple[int, str], GroundedAppearance | None] = {}
    caches: dict[int, DetectionCache] = {}
    audit_apps = []
    for s in shots:
        src = sources[s.index]
        if src is not None:
            caches[s.index] = DetectionCache(src, backends)
        for name in s.schedule:
            ent = script.entity(name)
            if src is None:
                appearances[(s.index, name)] = None
                audit_apps.append({"shot": s.index, "entity": name, "type": ent.entity_type, "status": "failed",
                                   "error": "video unavailable"})
                continue
            try:
                a = ground_entity(src, ent, cfg, backends, caches[s.index])
            except GroundingFailure as exc:
                log.warning("%s/shot_%d %s: %s", ep, s.index, name, exc)
                appearances[(s.index, name)] = None
                audit_apps.append({"shot": s.index, "entity": name, "type": ent.entity_type, "status": "failed",
                                   "error": str(exc)})
                continue
            appearances[(s.index, name)] = a
            rec = a.audit_record()
            rec["crop_path"] = _save_crop(audit_dir, a)
            audit_apps.append(rec)

    # pillar 1
    qualities = [shot_quality(s.index, list(sources[s.index].frames), backends, cfg)
                 if sources[s.index] is not None else failed_shot(s.index) for s in shots]
    metrics: dict[str, MetricValue] = dict(episode_quality(qualities))

    # pillar 2
    fidelity: dict[tuple[int, str], FidelityJudgment | None] = {}
    for (k, name), a in sorted(appearances.items()):
        if a is None or a.status == ABSENT:
            continue
        try:
            fidelity[(k, name)] = judge_entity_fidelity(a, script.entity(name), judge)
        except JudgeFailure as exc:
            log.warning("fidelity judge failed for %s/shot_%d %s: %s", ep, k, name, exc)
            fidelity[(k, name)] = None
    for rec in audit_apps:
        j = fidelity.get((rec["shot"], rec["entity"]))
        rec["fidelity"] = None if j is None else {"overall": j.overall, "criteria": j.criteria,
                                                  "low_confidence": j.low_confidence}
    actions: dict[int, ActionJudgment | None] = {}
    for s in shots:
        src = sources[s.index]
        if src is None:
            actions[s.index] = None
            continue
        cache = caches[s.index]
        ents = [script.entity(n) for n in s.schedule]
        grid = build_action_grid(src, ents, lambda i, e: cache.detect(i, grounding_query(e, cfg)), cfg)
        try:
            actions[s.index] = judge_action(grid, s.action_description, judge, ep, s.index)
        except JudgeFailure as exc:
            log.warning("action judge failed for %s/shot_%d: %s", ep, s.index, exc)
            actions[s.index] = None
    metrics.update(aggregate_pillar2(script, appearances, fidelity, actions))

    # gate + pillar 3
    pools = fidelity_gate([a for a in appearances.values() if a is not None], fidelity, cfg.tau_fid)
    for name in sorted(pools):
        centroid_similarities(pools[name], backends.embedding)
    by_type: dict[str, list[CrossShotPool]] = {"character": [], "object": [], "location": []}
    for name in sorted(pools):
        by_type[pools[name].entity_type].append(pools[name])
    metrics["cs_face"] = pooled_embedding_metric(by_type["character"])
    metrics["cs_object"] = pooled_embedding_metric(by_type["object"])
    metrics["cs_transition_boundary"], boundaries = transition_boundary(script, source, backends.embedding)
    entities = {e.name: e for e in script.entities}
    pair_judgments = []
    for etype in ("character", "object"):
        m, js = pairwise_llm_metrics(by_type[etype], entities, judge, ep, etype)
        metrics.update(m)
        pair_judgments.extend(js)
    m, locs = scene_llm_metrics(by_type["location"], entities, source, judge, cfg, ep)
    metrics.update(m)

    gaps = gap_decay_dataset(by_type["character"] + by_type["object"], ep)
    gaps += llm_gap_records(pair_judgments, pools, ep)
    missing = set(METRIC_NAMES) - set(metrics)
    if missing:
        raise RuntimeError(f"metrics not produced: {sorted(missing)}")

    pairs = [{"entity": j.entity, "type": j.entity_type, "anchor": j.anchor, "comparison": j.comparison,
              "same": j.same, "sim": j.sim, "criteria": j.criteria} for j in pair_judgments]
    for loc in locs:
        pairs.extend({"entity": j.entity, "type": "location", "anchor": j.anchor, "comparison": j.comparison,
                      "same": j.same, "sim": j.sim, "criteria": j.criteria} for j in loc.comparisons)
    meta = {
        META_GATE: gate_meta(pools.values()),
        "boundaries": [{"shot": b.shot, "similarity": b.similarity} for b in boundaries],
        "locations": [{"location": l.location, "anchor": l.anchor, "allcons": l.allcons, "cons": l.cons,
                       "criteria": l.criteria, "n_failed": l.n_failed} for l in locs],
        "failed_shots": [k for k, v in sorted(sources.items()) if v is None],
        "judge_calls": len(judge.audit.records),
    }
    return EpisodeResult(ep, script.tier, {n: metrics[n] for n in METRIC_NAMES}, meta,
                         [q.to_dict() for q in qualities], audit_apps,
                         {name: _pool_record(pools[name]) for name in sorted(pools)}, pairs,
                         [g.to_dict() for g in gaps])


class Ledger:
    """Completed-episode ledger (one JSON line per episode) for resumable runs."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / "completed.jsonl"
        self.episodes_dir = out_dir / "episodes"
        self._lock = threading.Lock()

    def completed(self) -> set[str]:
        if not self.path.exists():
            return set()
        done = set()
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                ep = json.loads(line)["episode_id"]
                if (self.episodes_dir / f"{ep}.json").exists():
                    done.add(ep)
        return done

    def record(self, result: EpisodeResult) -> None:
        with self._lock:
            self.episodes_dir.mkdir(parents=True, exist_ok=True)
            (self.episodes_dir / f"{result.episode_id}.json").write_text(
                json.dumps(result.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"episode_id": result.episode_id}) + "\n")

    def load(self, episode_id: str) -> EpisodeResult:
        return EpisodeResult.from_dict(json.loads((self.episodes_dir / f"{episode_id}.json").read_text("utf-8")))


@dataclass
class RunOutcome:
    results: dict[str, EpisodeResult]
    failed: dict[str, str]
    skipped: list[str]


def run_evaluation(scripts: list[EpisodeScript], videos_dir: str | Path, out_dir: str | Path,
                   backends: BackendSet, cfg: EvalConfig, parallel: int = 1) -> RunOutcome:
    """Evaluate episodes with per-episode isolation and resume support.

    Episode failures are recorded and the run continues; an unreachable
    backend aborts the run, keeping every episode already written.
    """
    out_dir = Path(out_dir)
    ledger = Ledger(out_dir)
    done = ledger.completed()
    todo = [s for s in sorted(scripts, key=lambda s: s.episode_id) if s.episode_id not in done]
    skipped = sorted(s.episode_id for s in scripts if s.episode_id in done)
    failed: dict[str, str] = {}
    abort: list[BaseException] = []

    def work(script: EpisodeScript) -> None:
        if abort:
            return
        try:
            res = evaluate_episode(script, videos_dir, backends, cfg, out_dir / "audit")
        except BackendUnreachable as exc:
            abort.append(exc)
            return
        except Exception as exc:  # isolate: one bad episode must not sink the run
            log.exception("episode %s failed", script.episode_id)
            failed[script.episode_id] = f"{type(exc).__name__}: {exc}"
            return
        ledger.record(res)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(work, todo))
    else:
        for s in todo:
            work(s)
    if abort:
        raise abort[0]
    results = {s.episode_id: ledger.load(s.episode_id) for s in scripts if s.episode_id not in failed}
    return RunOutcome(dict(sorted(results.items())), dict(sorted(failed.items())), skipped)
