"""Prompt-following: presence, per-entity fidelity and action fidelity (24 metrics)."""

from __future__ import annotations

import colorsys
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import cv2
import numpy as np

from .backends.base import BackendError, Detection, JudgeRequest
from .backends.prompts import action_prompt, fidelity_prompt
from .backends.verdicts import ActionVerdict, Judge, parse_action, parse_fidelity
from .config import CRITERIA, EvalConfig
from .grounding import ABSENT, GroundedAppearance, presence_rate
from .media import VideoSource, even_indices
from .metrics import MetricValue, mean_or_none
from .registry import FIDELITY_STEM, PRESENCE_NAME
from .script import ENTITY_TYPES, Entity, EpisodeScript

log = logging.getLogger(__name__)

ACTION_PARTS = ("overall", "depicted", "subject_identity", "subject_action", "object_interaction", "motion_quality")

# RGB, assigned in schedule order
PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
)


def entity_color(i: int) -> tuple[int, int, int]:
    if i < len(PALETTE):
        return PALETTE[i]
    # golden-ratio hue walk for large casts
    h = (i * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(h, 0.85, 0.95)
    return int(r * 255), int(g * 255), int(b * 255)


@dataclass(frozen=True)
class FidelityJudgment:
    shot_index: int
    entity: str
    entity_type: str
    overall: float
    criteria: dict[str, float | None]
    low_confidence: bool

    def __post_init__(self):
        if set(self.criteria) != set(CRITERIA[self.entity_type]):
            raise ValueError(f"criteria {sorted(self.criteria)} do not match type {self.entity_type}")

    def criterion(self, name: str) -> float | None:
        if name not in CRITERIA[self.entity_type]:
            raise KeyError(f"{name} is not a {self.entity_type} criterion")
        return self.criteria[name]


@dataclass(frozen=True)
class ActionJudgment:
    shot_index: int
    overall: float
    depicted: float
    subject_identity: float
    subject_action: float
    object_interaction: float | None
    motion_quality: float

    def part(self, name: str) -> float | None:
        return getattr(self, name)


@dataclass
class ActionGrid:
    image: np.ndarray = field(repr=False)
    frame_indices: list[int]
    colors: dict[str, tuple[int, int, int]]
    legend: list[str]
    boxes: list[tuple[int, str, tuple[float, float, float, float]]]


def judge_entity_fidelity(appearance: GroundedAppearance, entity: Entity, judge: Judge) -> FidelityJudgment:
    if appearance.status == ABSENT or appearance.crop is None:
        raise ValueError("absent appearances are never judged")
    req = JudgeRequest("fidelity", f"fidelity/{appearance.episode_id}/{appearance.shot_index}/{entity.name}",
                       fidelity_prompt(entity.description, entity.entity_type, appearance.status),
                       [appearance.crop], entity.entity_type)
    v = judge.ask(req, lambda t: parse_fidelity(t, entity.entity_type), f"{entity.entity_type} fidelity")
    return FidelityJudgment(appearance.shot_index, entity.name, entity.entity_type, v.overall, dict(v.criteria),
                            appearance.low_confidence)


def build_action_grid(source: VideoSource, entities: list[Entity],
                      detect: Callable[[int, Entity], list[Detection]], cfg: EvalConfig | None = None) -> ActionGrid:
    """Tile evenly sampled frames row-major, boxing each character/object.

    ``detect(frame_index, entity)`` returns detections for that frame; the
    highest-confidence one is drawn. A failing call counts as no detection.
    """
    cfg = cfg or EvalConfig()
    rows, cols = cfg.action_grid_rows, cfg.action_grid_cols
    boxed = [e for e in entities if e.entity_type != "location"]
    colors = {e.name: entity_color(i) for i, e in enumerate(boxed)}
    indices = even_indices(source.num_frames, rows * cols)
    tiles = []
    boxes = []
    localized: set[str] = set()
    for slot, idx in enumerate(indices):
        tile = np.array(source.frame(idx), copy=True)
        h, w = tile.shape[:2]
        for e in boxed:
            try:
                dets = detect(idx, e)
            except BackendError as exc:
                log.warning("grid frame %d: detection failed for %s: %s", idx, e.name, exc)
                continue
            if not dets:
                continue
            best = min(dets, key=lambda d: (-d.confidence, d.box))
            x1, y1, x2, y2 = best.box
            p1 = (int(round(x1)), int(round(y1)))
            p2 = (max(p1[0], int(round(x2)) - 1), max(p1[1], int(round(y2)) - 1))
            cv2.rectangle(tile, p1, p2, colors[e.name], thickness=max(1, min(h, w) // 100))
            cv2.putText(tile, e.name, (p1[0] + 2, min(h - 2, p1[1] + 12)), cv2.FONT_HERSHEY_SIMPLEX,
                        max(0.3, min(h, w) / 800), colors[e.name], 1, cv2.LINE_AA)
            boxes.append((slot, e.name, best.box))
            localized.add(e.name)
        tiles.append(tile)
    grid = np.concatenate([np.concatenate(tiles[r * cols:(r + 1) * cols], axis=1) for r in range(rows)], axis=0)
    legend = []
    for e in boxed:
        r, g, b = colors[e.name]
        note = "" if e.name in localized else " (not localized)"
        legend.append(f"rgb({r},{g},{b}) = {e.name} [{e.entity_type}]{note}")
    return ActionGrid(grid, indices, colors, legend, boxes)


def judge_action(grid: ActionGrid, action_text: str, judge: Judge, episode_id: str, shot_index: int) -> ActionJudgment:
    req = JudgeRequest("action", f"action/{episode_id}/{shot_index}", action_prompt(action_text, grid.legend),
                       [grid.image])
    v: ActionVerdict = judge.ask(req, parse_action, "action")
    return ActionJudgment(shot_index, v.overall, v.depicted, v.subject_identity, v.subject_action,
                          v.object_interaction, v.motion_quality)


def _two_stage(per_shot: list[list[float | None]], n_failed: int, n_skipped_extra: int) -> MetricValue:
    """Mean of per-shot means; counts are per (shot, entity) instance."""
    shot_means = []
    n_eval = 0
    n_none = 0
    for vals in per_shot:
        kept = [v for v in vals if v is not None]
        n_eval += len(kept)
        n_none += len(vals) - len(kept)
        m = mean_or_none(kept)
        if m is not None:
            shot_means.append(m)
    skipped = n_none + n_skipped_extra
    if not shot_means:
        return MetricValue.missing(n_failed, skipped)
    return MetricValue(math.fsum(shot_means) / len(shot_means), n_eval, n_failed, skipped)


def aggregate_pillar2(script: EpisodeScript,
                      appearances: Mapping[tuple[int, str], GroundedAppearance | None],
                      fidelity: Mapping[tuple[int, str], FidelityJudgment | None],
                      actions: Mapping[int, ActionJudgment | None]) -> dict[str, MetricValue]:
    """Episode-level Pillar-2 values.

    ``appearances[(k, name)]`` is None when grounding failed; ``fidelity`` and
    ``actions`` hold None for judge failures and lack keys for items never
    judged (absent appearances).
    """
    out: dict[str, MetricValue] = {}
    shots = sorted(script.shots, key=lambda s: s.index)

    for etype in ENTITY_TYPES:
        rates = [presence_rate(list(s.scheduled(etype)),
                               {n: appearances.get((s.index, n)) for n in s.scheduled(etype)}) for s in shots]
        kept = [r.value for r in rates if r.value is not None]
        failed = sum(r.n_failed for r in rates if r.value is None)
        skipped = sum(r.n_skipped for r in rates)
        out[PRESENCE_NAME[etype]] = (MetricValue(math.fsum(kept) / len(kept), len(kept), failed, skipped)
                                     if kept else MetricValue.missing(failed, skipped))

    for etype in ENTITY_TYPES:
        stem = FIDELITY_STEM[etype]
        overall: list[list[float | None]] = []
        per_crit: dict[str, list[list[float | None]]] = {c: [] for c in CRITERIA[etype]}
        failed = absent = 0
        for s in shots:
            row: list[float | None] = []
            crow: dict[str, list[float | None]] = {c: [] for c in CRITERIA[etype]}
            for name in s.scheduled(etype):
                app = appearances.get((s.index, name))
                if app is None:
                    failed += 1
                    continue
                if app.status == ABSENT:
                    absent += 1
                    continue
                j = fidelity.get((s.index, name))
                if j is None:
                    failed += 1
                    continue
                row.append(j.overall)
                for c in CRITERIA[etype]:
                    crow[c].append(j.criterion(c))
            overall.append(row)
            for c in CRITERIA[etype]:
                per_crit[c].append(crow[c])
        out[f"{stem}_fidelity"] = _two_stage(overall, failed, absent)
        for c in CRITERIA[etype]:
            out[f"{stem}_{c}"] = _two_stage(per_crit[c], failed, absent)

    for part in ACTION_PARTS:
        vals: list[float | None] = []
        failed = 0
        for s in shots:
            a = actions.get(s.index)
            if a is None:
                failed += 1
            else:
                vals.append(a.part(part))
        kept = [v for v in vals if v is not None]
        skipped = len(vals) - len(kept)
        out[f"intra_action_{part}"] = (MetricValue(math.fsum(kept) / len(kept), len(kept), failed, skipped)
                                       if kept else MetricValue.missing(failed, skipped))
    return out
