"""Unified grounding pass: canonical crop per (shot, entity) and presence status.

For every scheduled entity the shot is sampled at ``n_frame`` even indices,
each frame is queried with the entity description, and every detection is
cropped and scored::

    alpha_clip  = text-image similarity(crop, description)
    alpha_sharp = logistic((lapvar(crop) - 100) / 200)
    alpha_area  = logistic((area_pct(box) - 2) / 5)
    alpha       = alpha_clip * alpha_sharp * alpha_area

The canonical crop is the argmax of alpha. Ties go to the earlier frame, then
the larger box, then the smaller x1, then the remaining box coordinates, so
the choice never depends on detection order.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .backends.base import BackendError, BackendSet, Detection
from .config import EvalConfig
from .media import CropError, VideoSource, area_pct, crop_with_padding, even_indices, sharpness
from .metrics import MetricValue
from .script import Entity

log = logging.getLogger(__name__)

ABSENT, WEAK, PRESENT = "absent", "weak", "present"
STATUSES = (ABSENT, WEAK, PRESENT)


class GroundingFailure(BackendError):
    """Every sampled frame (or every candidate crop) failed for this entity."""


def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def selection_score(clip_sim: float, lap_var: float, area: float,
                    cfg: EvalConfig | None = None) -> tuple[float, float, float, float]:
    """Return (alpha_clip, alpha_sharp, alpha_area, alpha)."""
    cfg = cfg or EvalConfig()
    a_clip = float(clip_sim)
    a_sharp = logistic((lap_var - cfg.sharp_center) / cfg.sharp_scale)
    a_area = logistic((area - cfg.area_center) / cfg.area_scale)
    return a_clip, a_sharp, a_area, a_clip * a_sharp * a_area


@dataclass(frozen=True)
class Candidate:
    frame_index: int
    box: tuple[float, float, float, float]
    confidence: float
    crop: np.ndarray = field(repr=False, compare=False)
    lapvar: float
    area_pct: float
    alpha_clip: float
    alpha_sharp: float
    alpha_area: float
    alpha: float

    def rank_key(self) -> tuple:
        x1, y1, x2, y2 = self.box
        area = max(0.0, x2 - x1) * max(0.0, y2 - y1)
        return (-self.alpha, self.frame_index, -area, x1, y1, x2, y2, -self.confidence)


def pick_canonical(candidates: list[Candidate]) -> Candidate:
    return min(candidates, key=Candidate.rank_key)


@dataclass
class GroundedAppearance:
    episode_id: str
    shot_index: int
    entity: str
    entity_type: str
    status: str
    crop: np.ndarray | None = field(default=None, repr=False)
    frame_index: int | None = None
    box: tuple[float, float, float, float] | None = None
    alpha_clip: float | None = None
    alpha_sharp: float | None = None
    alpha_area: float | None = None
    alpha: float | None = None
    lapvar: float | None = None
    area_pct: float | None = None
    n_candidates: int = 0
    failed_frames: tuple[int, ...] = ()

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if (self.status == ABSENT) != (self.crop is None):
            raise ValueError("status absent iff no crop")

    @property
    def low_confidence(self) -> bool:
        return self.status == WEAK

    def audit_record(self) -> dict:
        return {
            "shot": self.shot_index, "entity": self.entity, "type": self.entity_type, "status": self.status,
            "frame_index": self.frame_index, "box": list(self.box) if self.box else None,
            "alpha_clip": self.alpha_clip, "alpha_sharp": self.alpha_sharp, "alpha_area": self.alpha_area,
            "alpha": self.alpha, "lapvar": self.lapvar, "area_pct": self.area_pct,
            "n_candidates": self.n_candidates, "failed_frames": list(self.failed_frames),
        }


class DetectionCache:
    """Per-shot memo of grounding calls keyed by (frame index, query).

    Shared by the grounding pass and the action grid so a frame is never
    queried twice with the same text. Failures are cached as exceptions.
    """

    def __init__(self, source: VideoSource, backends: BackendSet):
        self.source = source
        self.backends = backends
        self._memo: dict[tuple[int, str], list[Detection] | BackendError] = {}
        self._lock = threading.Lock()

    def detect(self, frame_index: int, query: str) -> list[Detection]:
        key = (frame_index, query)
        with self._lock:
            hit = self._memo.get(key)
        if hit is None:
            try:
                hit = list(self.backends.grounding.detect(self.source.frame(frame_index), query))
            except BackendError as exc:
                hit = exc
            with self._lock:
                self._memo[key] = hit
        if isinstance(hit, BackendError):
            raise hit
        return hit


def grounding_query(entity: Entity, cfg: EvalConfig) -> str:
    desc = entity.description
    limit = cfg.grounding_query_max_chars
    if limit and len(desc) > limit:
        log.info("truncating grounding query for %s from %d to %d chars", entity.name, len(desc), limit)
        return desc[:limit]
    return desc


def ground_entity(source: VideoSource, entity: Entity, cfg: EvalConfig, backends: BackendSet,
                  cache: DetectionCache | None = None) -> GroundedAppearance:
    cache = cache or DetectionCache(source, backends)
    query = grounding_query(entity, cfg)
    w, h = source.resolution
    # repeated indices (short clips) would only duplicate candidates
    frames = sorted(set(even_indices(source.num_frames, cfg.n_frame)))
    failed: list[int] = []
    candidates: list[Candidate] = []
    n_detections = 0
    n_scoring_failures = 0
    for i in frames:
        try:
            dets = cache.detect(i, query)
        except BackendError as exc:
            log.warning("%s/shot_%d frame %d grounding failed for %s: %s",
                        source.episode_id, source.shot_index, i, entity.name, exc)
            failed.append(i)
            continue
        image = source.frame(i)
        for d in dets:
            n_detections += 1
            try:
                crop = crop_with_padding(image, d.box, cfg.crop_padding, cfg.crop_size)
                clip = backends.text_image.similarity(crop, entity.description)
            except (CropError, BackendError) as exc:
                log.warning("dropping candidate %s in frame %d: %s", d.box, i, exc)
                n_scoring_failures += 1
                continue
            lv = sharpness(crop)
            ap = area_pct(d.box, w, h)
            a_clip, a_sharp, a_area, alpha = selection_score(clip, lv, ap, cfg)
            candidates.append(Candidate(i, tuple(float(x) for x in d.box), d.confidence, crop,
                                        lv, ap, a_clip, a_sharp, a_area, alpha))
    if len(failed) == len(frames):
        raise GroundingFailure(f"grounding failed on every sampled frame for {entity.name}")
    base = dict(episode_id=source.episode_id, shot_index=source.shot_index, entity=entity.name,
                entity_type=entity.entity_type, failed_frames=tuple(failed))
    if n_detections == 0:
        return GroundedAppearance(status=ABSENT, **base)
    if not candidates:
        raise GroundingFailure(f"no candidate crop for {entity.name} could be scored")
    best = pick_canonical(candidates)
    status = PRESENT if best.alpha_clip >= cfg.tau_clip else WEAK
    return GroundedAppearance(status=status, crop=best.crop, frame_index=best.frame_index, box=best.box,
                              alpha_clip=best.alpha_clip, alpha_sharp=best.alpha_sharp,
                              alpha_area=best.alpha_area, alpha=best.alpha, lapvar=best.lapvar,
                              area_pct=best.area_pct, n_candidates=len(candidates), **base)


def presence_rate(scheduled: list[str], appearances: dict[str, GroundedAppearance | None]) -> MetricValue:
    """Per-shot presence for one entity type.

    ``appearances`` maps each scheduled name to its appearance, or None when
    grounding failed for it. Failed entities leave the denominator and are
    counted in n_failed. One evaluated shot gives n_eval=1.
    """
    if not scheduled:
        return MetricValue.missing(n_skipped=1)
    ok = [appearances[n] for n in scheduled if appearances.get(n) is not None]
    failed = len(scheduled) - len(ok)
    if not ok:
        return MetricValue.missing(n_failed=1)
    rate = sum(1 for a in ok if a.status == PRESENT) / len(ok)
    return MetricValue(rate, 1, 1 if failed else 0, 0)
