"""Cross-shot consistency: fidelity gate, centroid metrics, transition boundary,
pairwise LLM identity judging, scene judging and the gap-decay records (21 metrics).

Counting conventions (per metric family):

* cs_face / cs_object: instances are appearances. Gate-skipped appearances are
  n_skipped and n_gated; appearances of entities left with a single admitted
  appearance are n_skipped only; embedding failures are n_failed.
* llm_face_* / llm_object_*: instances are anchor-vs-each comparisons. An entity
  with P present appearances could have produced max(P-1, 0) comparisons; the
  shortfall against the admitted pool is attributed to embedding failures
  first (n_failed), the rest to the gate (n_gated). Judge failures are n_failed.
* llm_scene_*: instances are locations.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping

import numpy as np

from .backends.base import BackendError, EmbeddingBackend, JudgeFailure, JudgeRequest
from .backends.prompts import pair_prompt, scene_prompt
from .backends.verdicts import Judge, parse_pair
from .config import CRITERIA, EvalConfig
from .grounding import PRESENT, GroundedAppearance
from .media import VideoSource, sharpest_frames
from .metrics import MetricValue
from .registry import LLM_STEM
from .script import Entity, EpisodeScript

log = logging.getLogger(__name__)

ANCHOR_TIE = 1e-12


@dataclass
class CrossShotPool:
    entity: str
    entity_type: str
    admitted: list[GroundedAppearance] = field(default_factory=list)
    gate_skipped: list[int] = field(default_factory=list)
    bypassed: list[int] = field(default_factory=list)
    failed: list[int] = field(default_factory=list)
    embeddings: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    centroid: np.ndarray | None = field(default=None, repr=False)
    sims: dict[int, float] = field(default_factory=dict)
    anchor: int | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def shots(self) -> list[int]:
        return [a.shot_index for a in self.admitted]

    @property
    def size(self) -> int:
        return len(self.admitted)

    @property
    def n_present(self) -> int:
        return self.size + len(self.gate_skipped) + len(self.failed)

    def crop(self, shot: int) -> np.ndarray:
        for a in self.admitted:
            if a.shot_index == shot:
                return a.crop
        raise KeyError(shot)


def fidelity_gate(appearances: Iterable[GroundedAppearance], fidelity: Mapping[tuple[int, str], object],
                  tau_fid: float) -> dict[str, CrossShotPool]:
    """Admit present appearances with phi >= tau_fid, or phi None (bypass, logged).

    ``fidelity`` maps (shot, entity) to an object with ``.overall`` or None.
    """
    pools: dict[str, CrossShotPool] = {}
    for a in sorted(appearances, key=lambda x: (x.entity, x.shot_index)):
        if a.status != PRESENT:
            continue
        pool = pools.setdefault(a.entity, CrossShotPool(a.entity, a.entity_type))
        j = fidelity.get((a.shot_index, a.entity))
        phi = None if j is None else j.overall
        if phi is None:
            log.info("gate bypass: %s/shot_%d %s has no fidelity score", a.episode_id, a.shot_index, a.entity)
            pool.bypassed.append(a.shot_index)
            pool.admitted.append(a)
        elif phi >= tau_fid:
            pool.admitted.append(a)
        else:
            pool.gate_skipped.append(a.shot_index)
    return pools


def gate_meta(pools: Iterable[CrossShotPool]) -> dict[str, int]:
    pools = list(pools)
    return {
        "admitted": sum(p.size for p in pools),
        "gate_skipped": sum(len(p.gate_skipped) for p in pools),
        "bypassed": sum(len(p.bypassed) for p in pools),
        "failed": sum(len(p.failed) for p in pools),
        "present": sum(p.n_present for p in pools),
    }


def centroid_and_sims(embeddings: list[np.ndarray]) -> tuple[np.ndarray, list[float]]:
    """Unit centroid of the mean embedding and each embedding's dot with it."""
    m = np.mean(np.stack([np.asarray(e, dtype=np.float64) for e in embeddings]), axis=0)
    n = float(np.linalg.norm(m))
    if n == 0.0:
        raise ValueError("embeddings cancel out; centroid undefined")
    c = m / n
    return c, [float(np.asarray(e) @ c) for e in embeddings]


def embed_pool(pool: CrossShotPool, embed: EmbeddingBackend) -> None:
    """Embed admitted crops; appearances whose embedding fails move to ``failed``."""
    kept = []
    for a in pool.admitted:
        if a.shot_index in pool.embeddings:
            kept.append(a)
            continue
        try:
            pool.embeddings[a.shot_index] = np.asarray(embed.embed(a.crop), dtype=np.float64)
            kept.append(a)
        except BackendError as exc:
            log.warning("embedding failed for %s/shot_%d %s: %s", a.episode_id, a.shot_index, a.entity, exc)
            pool.failed.append(a.shot_index)
    pool.admitted = kept
    pool.failed.sort()


def centroid_similarities(pool: CrossShotPool, embed: EmbeddingBackend | None = None) -> CrossShotPool:
    """Fill centroid, per-appearance similarity, anchor and diagnostics (pool size >= 2)."""
    pool.admitted.sort(key=lambda a: a.shot_index)
    if embed is not None:
        embed_pool(pool, embed)
    if pool.size < 2:
        return pool
    shots = pool.shots
    embs = [pool.embeddings[k] for k in shots]
    pool.centroid, sims = centroid_and_sims(embs)
    pool.sims = dict(zip(shots, sims))
    # argmax; similarities within ANCHOR_TIE of the best count as tied and the earlier shot wins
    best = max(sims)
    pool.anchor = min(k for k in shots if pool.sims[k] >= best - ANCHOR_TIE)
    worst = min(shots, key=lambda k: (pool.sims[k], k))
    pair_dots = [float(embs[i] @ embs[j]) for i, j in combinations(range(len(embs)), 2)]
    pool.diagnostics = {
        "mean": math.fsum(sims) / len(sims), "min": min(sims), "max": max(sims),
        "pairwise_median": statistics.median(pair_dots),
        "worst_shot": worst, "representative_shot": pool.anchor,
        "per_shot": {str(k): pool.sims[k] for k in shots},
    }
    return pool


def pooled_embedding_metric(pools: Iterable[CrossShotPool]) -> MetricValue:
    samples: list[float] = []
    skipped = gated = failed = 0
    for p in sorted(pools, key=lambda p: p.entity):
        gated += len(p.gate_skipped)
        failed += len(p.failed)
        if p.size >= 2:
            samples.extend(p.sims[k] for k in p.shots)
        else:
            skipped += p.size
    n_skip = skipped + gated
    if not samples:
        return MetricValue.missing(failed, n_skip, gated)
    return MetricValue(math.fsum(samples) / len(samples), len(samples), failed, n_skip, gated)


@dataclass(frozen=True)
class BoundaryRecord:
    shot: int
    similarity: float | None


def transition_boundary(script: EpisodeScript, source: Callable[[int], VideoSource | None],
                        embed: EmbeddingBackend) -> tuple[MetricValue, list[BoundaryRecord]]:
    """Dot of (last frame of k, first frame of k+1) over continuation pairs."""
    records = []
    failed = 0
    for s in sorted(script.shots, key=lambda s: s.index):
        if s.cut or s.index == 1:
            continue
        prev, cur = source(s.index - 1), source(s.index)
        try:
            if prev is None or cur is None:
                raise BackendError("shot video unavailable")
            a = np.asarray(embed.embed(prev.frame(prev.num_frames)), dtype=np.float64)
            b = np.asarray(embed.embed(cur.frame(1)), dtype=np.float64)
        except BackendError as exc:
            log.warning("boundary %d->%d failed: %s", s.index - 1, s.index, exc)
            failed += 1
            records.append(BoundaryRecord(s.index, None))
            continue
        records.append(BoundaryRecord(s.index, float(a @ b)))
    vals = [r.similarity for r in records if r.similarity is not None]
    if not vals:
        return MetricValue.missing(failed), records
    return MetricValue(math.fsum(vals) / len(vals), len(vals), failed, 0), records


@dataclass(frozen=True)
class PairwiseJudgment:
    entity: str
    entity_type: str
    anchor: int
    comparison: int
    same: int
    sim: float
    criteria: dict[str, float | None]

    def __post_init__(self):
        if self.anchor == self.comparison:
            raise ValueError("anchor and comparison must differ")
        if set(self.criteria) != set(CRITERIA[self.entity_type]):
            raise ValueError("criteria set does not match entity type")


def _shortfall(pool: CrossShotPool) -> tuple[int, int]:
    """(failed, gated) comparisons lost before judging."""
    eligible = max(pool.n_present - 1, 0)
    possible = max(pool.size - 1, 0)
    short = eligible - possible
    f = min(len(pool.failed), short)
    return f, short - f


def _mean_metric(vals: list[float | None], failed: int, gated: int) -> MetricValue:
    kept = [v for v in vals if v is not None]
    skipped = len(vals) - len(kept) + gated
    if not kept:
        return MetricValue.missing(failed, skipped, gated)
    return MetricValue(math.fsum(kept) / len(kept), len(kept), failed, skipped, gated)


def pairwise_llm_metrics(pools: Iterable[CrossShotPool], entities: Mapping[str, Entity], judge: Judge,
                         episode_id: str, entity_type: str) -> tuple[dict[str, MetricValue], list[PairwiseJudgment]]:
    """Anchor-vs-each judging for characters or objects; six metrics for the type."""
    stem = LLM_STEM[entity_type]
    crits = CRITERIA[entity_type]
    judgments: list[PairwiseJudgment] = []
    failed = gated = 0
    for p in sorted(pools, key=lambda p: p.entity):
        f, g = _shortfall(p)
        failed += f
        gated += g
        if p.size < 2:
            continue
        ent = entities[p.entity]
        for comp in p.shots:
            if comp == p.anchor:
                continue
            req = JudgeRequest("pair", f"pair/{episode_id}/{p.entity}/{p.anchor}/{comp}",
                               pair_prompt(ent.description, entity_type), [p.crop(p.anchor), p.crop(comp)],
                               entity_type)
            try:
                v = judge.ask(req, lambda t: parse_pair(t, entity_type), f"llm {entity_type}")
            except JudgeFailure as exc:
                log.warning("pair judge failed: %s", exc)
                failed += 1
                continue
            judgments.append(PairwiseJudgment(p.entity, entity_type, p.anchor, comp, v.same, v.similarity,
                                              dict(v.criteria)))
    out = {
        f"{stem}_accuracy": _mean_metric([float(j.same) for j in judgments], failed, gated),
        f"{stem}_mean_score": _mean_metric([j.sim for j in judgments], failed, gated),
    }
    for c in crits:
        out[f"{stem}_{c}"] = _mean_metric([j.criteria[c] for j in judgments], failed, gated)
    return out, judgments


@dataclass
class LocationJudgment:
    location: str
    anchor: int
    comparisons: list[PairwiseJudgment]
    n_failed: int
    allcons: float | None
    cons: float | None
    criteria: dict[str, float | None]


def scene_llm_metrics(pools: Iterable[CrossShotPool], entities: Mapping[str, Entity],
                      source: Callable[[int], VideoSource | None], judge: Judge, cfg: EvalConfig,
                      episode_id: str) -> tuple[dict[str, MetricValue], list[LocationJudgment]]:
    """Camera-invariant anchor-vs-each location judging on sharpest full frames."""
    stem = LLM_STEM["location"]
    crits = CRITERIA["location"]
    results: list[LocationJudgment] = []
    failed_locs = gated_locs = 0
    for p in sorted(pools, key=lambda p: p.entity):
        if p.size < 2:
            if p.n_present >= 2:
                if p.size + len(p.failed) >= 2:
                    failed_locs += 1
                else:
                    gated_locs += 1
            continue
        ent = entities[p.entity]
        comps: list[PairwiseJudgment] = []
        n_fail = 0
        anchor_src = source(p.anchor)
        for comp in p.shots:
            if comp == p.anchor:
                continue
            comp_src = source(comp)
            if anchor_src is None or comp_src is None:
                n_fail += 1
                continue
            images = [s.image for s in sharpest_frames(anchor_src, cfg.loc_frames_per_set)]
            images += [s.image for s in sharpest_frames(comp_src, cfg.loc_frames_per_set)]
            req = JudgeRequest("scene", f"scene/{episode_id}/{p.entity}/{p.anchor}/{comp}",
                               scene_prompt(ent.description), images, "location")
            try:
                v = judge.ask(req, lambda t: parse_pair(t, "location"), "llm location")
            except JudgeFailure as exc:
                log.warning("scene judge failed: %s", exc)
                n_fail += 1
                continue
            comps.append(PairwiseJudgment(p.entity, "location", p.anchor, comp, v.same, v.similarity,
                                          dict(v.criteria)))
        if not comps:
            failed_locs += 1
            results.append(LocationJudgment(p.entity, p.anchor, [], n_fail, None, None, {c: None for c in crits}))
            continue
        allcons = float(math.prod(j.same for j in comps))
        cons = math.fsum(j.sim for j in comps) / len(comps)
        crit_means = {}
        for c in crits:
            kept = [j.criteria[c] for j in comps if j.criteria[c] is not None]
            crit_means[c] = math.fsum(kept) / len(kept) if kept else None
        results.append(LocationJudgment(p.entity, p.anchor, comps, n_fail, allcons, cons, crit_means))
    ok = [r for r in results if r.allcons is not None]
    out = {
        f"{stem}_accuracy": _mean_metric([r.allcons for r in ok], failed_locs, gated_locs),
        f"{stem}_mean_score": _mean_metric([r.cons for r in ok], failed_locs, gated_locs),
    }
    for c in crits:
        out[f"{stem}_{c}"] = _mean_metric([r.criteria[c] for r in ok], failed_locs, gated_locs)
    return out, results


@dataclass(frozen=True)
class GapRecord:
    episode_id: str
    entity: str
    entity_type: str
    shot_i: int
    shot_j: int
    gap: int
    similarity: float
    signal: str = "embedding"
    adjacent: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def gap_decay_dataset(pools: Iterable[CrossShotPool], episode_id: str = "") -> list[GapRecord]:
    """One record per unordered admitted-appearance pair: (|k_j - k_i|, raw dot, type)."""
    records = []
    for p in sorted(pools, key=lambda p: p.entity):
        if p.size < 2:
            continue
        shots = sorted(p.shots)
        for a, b in combinations(range(len(shots)), 2):
            ki, kj = shots[a], shots[b]
            sim = float(p.embeddings[ki] @ p.embeddings[kj])
            records.append(GapRecord(episode_id, p.entity, p.entity_type, ki, kj, abs(kj - ki), sim,
                                     "embedding", b == a + 1))
    return records


def llm_gap_records(judgments: Iterable[PairwiseJudgment], pools: Mapping[str, CrossShotPool],
                    episode_id: str = "") -> list[GapRecord]:
    """Gap records from anchor-vs-each verdict similarities."""
    out = []
    for j in sorted(judgments, key=lambda j: (j.entity, j.comparison)):
        shots = sorted(pools[j.entity].shots)
        lo, hi = sorted((j.anchor, j.comparison))
        adjacent = shots.index(hi) == shots.index(lo) + 1
        out.append(GapRecord(episode_id, j.entity, j.entity_type, lo, hi, hi - lo, j.sim, "llm", adjacent))
    return out
