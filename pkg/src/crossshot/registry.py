"""The 51 registered metrics, grouped by pillar, with their aggregation rule."""

from __future__ import annotations

from dataclasses import dataclass

from .config import CRITERIA

# episode_mean: unweighted mean of episode values, coverage 1 by construction.
# gate_corrected: instance-weighted mean with gate-skipped/failed instances as zeros.
EPISODE_MEAN = "episode_mean"
GATE_CORRECTED = "gate_corrected"

META_GATE = "_meta_cross_shot_gate"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    pillar: int
    group: str
    aggregation: str
    upper: float = 1.0


def _build() -> list[MetricSpec]:
    specs: list[MetricSpec] = []
    for name in ("subject_consistency", "temporal_flickering", "motion_smoothness",
                 "dynamic_degree", "aesthetic_quality"):
        specs.append(MetricSpec(name, 1, "quality", EPISODE_MEAN))
    specs.append(MetricSpec("imaging_quality", 1, "quality", EPISODE_MEAN, upper=100.0))

    for etype in ("character", "object", "location"):
        specs.append(MetricSpec(f"intra_{etype}_presence", 2, "presence", EPISODE_MEAN))
    for etype, stem in (("character", "intra_face"), ("object", "intra_object"), ("location", "intra_location")):
        specs.append(MetricSpec(f"{stem}_fidelity", 2, f"{etype} fidelity", GATE_CORRECTED))
        for crit in CRITERIA[etype]:
            specs.append(MetricSpec(f"{stem}_{crit}", 2, f"{etype} fidelity", GATE_CORRECTED))
    for part in ("overall", "depicted", "subject_identity", "subject_action",
                 "object_interaction", "motion_quality"):
        specs.append(MetricSpec(f"intra_action_{part}", 2, "action", GATE_CORRECTED))

    for name in ("cs_face", "cs_object", "cs_transition_boundary"):
        specs.append(MetricSpec(name, 3, "embedding", GATE_CORRECTED))
    for etype, stem in (("character", "llm_face"), ("object", "llm_object"), ("location", "llm_scene")):
        group = f"llm {etype}"
        specs.append(MetricSpec(f"{stem}_accuracy", 3, group, GATE_CORRECTED))
        specs.append(MetricSpec(f"{stem}_mean_score", 3, group, GATE_CORRECTED))
        for crit in CRITERIA[etype]:
            specs.append(MetricSpec(f"{stem}_{crit}", 3, group, GATE_CORRECTED))
    return specs


METRICS: tuple[MetricSpec, ...] = tuple(_build())
METRIC_NAMES: tuple[str, ...] = tuple(m.name for m in METRICS)
BY_NAME = {m.name: m for m in METRICS}

assert len(METRICS) == 51, len(METRICS)

FIDELITY_STEM = {"character": "intra_face", "object": "intra_object", "location": "intra_location"}
PRESENCE_NAME = {"character": "intra_character_presence", "object": "intra_object_presence",
                 "location": "intra_location_presence"}
LLM_STEM = {"character": "llm_face", "object": "llm_object", "location": "llm_scene"}


def pillar_metrics(pillar: int) -> list[str]:
    return [m.name for m in METRICS if m.pillar == pillar]
