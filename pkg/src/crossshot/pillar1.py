"""Intra-shot quality: six per-shot metrics averaged over shots.

All decoded frames of a shot are used (not the grounding sample).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .backends.base import BackendError, BackendSet, EmbeddingBackend, FlowBackend, ScalarPredictorBackend
from .config import EvalConfig
from .metrics import MetricValue
from .registry import pillar_metrics

log = logging.getLogger(__name__)

P1_METRICS = tuple(pillar_metrics(1))


def subject_consistency(frames: list[np.ndarray], embed: EmbeddingBackend) -> float | None:
    """Mean adjacent-frame embedding dot, clamped to [0, 1]. None for single-frame clips."""
    if len(frames) < 2:
        return None
    embs = [np.asarray(embed.embed(f), dtype=np.float64) for f in frames]
    dots = [float(a @ b) for a, b in zip(embs, embs[1:])]
    return min(1.0, max(0.0, math.fsum(dots) / len(dots)))


def temporal_flickering(frames: list[np.ndarray]) -> float | None:
    """1 - mean adjacent-pair MAE / 255."""
    if len(frames) < 2:
        return None
    maes = [float(np.abs(a.astype(np.float64) - b.astype(np.float64)).mean()) / 255.0
            for a, b in zip(frames, frames[1:])]
    return 1.0 - math.fsum(maes) / len(maes)


def flow_magnitude(field_: np.ndarray, reduction: str = "mean") -> float:
    mag = np.sqrt(field_[..., 0] ** 2 + field_[..., 1] ** 2)
    return float(mag.max() if reduction == "max" else mag.mean())


def motion_smoothness(frames: list[np.ndarray], flow: FlowBackend) -> float | None:
    """Mean interpolation quality over consecutive triplets. Needs 3 frames."""
    if len(frames) < 3:
        return None
    qs = [flow.interpolation_quality(frames[i - 1], frames[i], frames[i + 1]) for i in range(1, len(frames) - 1)]
    return math.fsum(qs) / len(qs)


def dynamic_degree(frames: list[np.ndarray], flow: FlowBackend, threshold: float,
                   reduction: str = "mean") -> float | None:
    """Fraction of adjacent pairs whose flow magnitude exceeds ``threshold``."""
    if len(frames) < 2:
        return None
    moving = [flow_magnitude(flow.flow(a, b), reduction) > threshold for a, b in zip(frames, frames[1:])]
    return sum(moving) / len(moving)


def flow_metrics(frames: list[np.ndarray], flow: FlowBackend, dd_threshold: float,
                 reduction: str = "mean") -> tuple[float | None, float | None]:
    return motion_smoothness(frames, flow), dynamic_degree(frames, flow, dd_threshold, reduction)


def predictor_metrics(frames: list[np.ndarray], aesthetic: ScalarPredictorBackend,
                      imaging: ScalarPredictorBackend) -> tuple[float, float]:
    aq = math.fsum(aesthetic.predict(f) for f in frames) / len(frames)
    iq = math.fsum(imaging.predict(f) for f in frames) / len(frames)
    return aq, iq


@dataclass
class ShotQuality:
    shot_index: int
    values: dict[str, float | None] = field(default_factory=dict)
    failed: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {"shot": self.shot_index, **{m: self.values.get(m) for m in P1_METRICS},
                "failed": sorted(self.failed)}


def shot_quality(shot_index: int, frames: list[np.ndarray], backends: BackendSet, cfg: EvalConfig) -> ShotQuality:
    """Score one shot. A backend failure marks only the metrics it feeds as failed."""
    q = ShotQuality(shot_index)

    def run(names: tuple[str, ...], fn) -> None:
        try:
            out = fn()
        except BackendError as exc:
            log.warning("shot %d: %s failed: %s", shot_index, "/".join(names), exc)
            q.failed.update(names)
            return
        out = out if isinstance(out, tuple) else (out,)
        q.values.update(zip(names, out))

    run(("subject_consistency",), lambda: subject_consistency(frames, backends.embedding))
    q.values["temporal_flickering"] = temporal_flickering(frames)
    run(("motion_smoothness",), lambda: motion_smoothness(frames, backends.flow))
    run(("dynamic_degree",), lambda: dynamic_degree(frames, backends.flow, cfg.dd_threshold, cfg.dd_reduction))
    run(("aesthetic_quality",), lambda: math.fsum(backends.aesthetic.predict(f) for f in frames) / len(frames))
    run(("imaging_quality",), lambda: math.fsum(backends.imaging.predict(f) for f in frames) / len(frames))
    return q


def failed_shot(shot_index: int) -> ShotQuality:
    return ShotQuality(shot_index, failed=set(P1_METRICS))


def episode_quality(shots: list[ShotQuality]) -> dict[str, MetricValue]:
    """Unweighted mean over shots with a value; counts are in shots."""
    out = {}
    ordered = sorted(shots, key=lambda s: s.shot_index)
    for m in P1_METRICS:
        vals = [s.values[m] for s in ordered if m not in s.failed and s.values.get(m) is not None]
        failed = sum(1 for s in ordered if m in s.failed)
        skipped = len(ordered) - len(vals) - failed
        if vals:
            out[m] = MetricValue(math.fsum(vals) / len(vals), len(vals), failed, skipped)
        else:
            out[m] = MetricValue.missing(failed, skipped)
    return out
