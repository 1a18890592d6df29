"""Evaluation hyperparameters and run configuration."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

CRITERIA = {
    "character": ("face", "hair", "clothing", "build"),
    "object": ("shape", "color_texture", "proportions", "details"),
    "location": ("layout", "color_mood", "landmarks", "perspective"),
}

DEFAULT_GAP_BINS = ((1, 2), (3, 5), (6, 10), (11, 20), (21, 50))

DEFAULT_MODELS = {
    "grounding": "IDEA-Research/grounding-dino-base",
    "embedding": "facebook/dinov2-base",
    "text_image": "openai/clip-vit-base-patch32",
    "judge": "gemini-2.5-pro",
    "flow": "raft-things",
    "aesthetic": "laion-aesthetic-predictor-v2",
    "imaging": "musiq-koniq",
}


@dataclass(frozen=True)
class EvalConfig:
    """Canonical evaluation hyperparameters; every field lands in the run manifest."""

    n_frame: int = 5
    tau_box: float = 0.25
    tau_text: float = 0.20
    tau_clip: float = 0.20
    tau_fid: float = 0.50
    crop_padding: float = 0.10
    crop_size: int = 224
    action_grid_rows: int = 2
    action_grid_cols: int = 3
    loc_set_n_shots: int = 8
    loc_frames_per_set: int = 2
    sharp_center: float = 100.0
    sharp_scale: float = 200.0
    area_center: float = 2.0
    area_scale: float = 5.0
    dd_threshold: float = 1.0
    dd_reduction: str = "mean"
    judge_temperature: float = 0.0
    judge_reasks: int = 1
    gap_bins: tuple[tuple[int, int], ...] = DEFAULT_GAP_BINS
    grounding_query_max_chars: int = 0  # 0 = no truncation

    def __post_init__(self):
        problems = []
        for name in ("tau_box", "tau_text", "tau_fid"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if not -1.0 <= self.tau_clip <= 1.0:
            problems.append("tau_clip must lie in [-1, 1]")
        if not 0.0 <= self.crop_padding < 1.0:
            problems.append("crop_padding must lie in [0, 1)")
        for name in ("n_frame", "crop_size", "action_grid_rows", "action_grid_cols",
                     "loc_set_n_shots", "loc_frames_per_set"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.sharp_scale <= 0 or self.area_scale <= 0:
            problems.append("logistic scales must be positive")
        if self.dd_reduction not in ("mean", "max"):
            problems.append("dd_reduction must be 'mean' or 'max'")
        if self.judge_reasks < 0 or self.grounding_query_max_chars < 0:
            problems.append("counts must be non-negative")
        bins = [tuple(b) for b in self.gap_bins]
        for (lo, hi), (lo2, _) in zip(bins, bins[1:]):
            if lo2 <= hi:
                problems.append("gap_bins must be disjoint and ordered")
        if any(lo > hi or lo < 0 for lo, hi in bins):
            problems.append("gap bin bounds must satisfy 0 <= lo <= hi")
        if problems:
            raise ValueError("; ".join(problems))
        object.__setattr__(self, "gap_bins", tuple(tuple(b) for b in bins))

    @property
    def action_grid_frames(self) -> int:
        return self.action_grid_rows * self.action_grid_cols

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["gap_bins"] = [list(b) for b in self.gap_bins]
        return d

    def with_overrides(self, overrides: dict[str, Any] | None) -> "EvalConfig":
        if not overrides:
            return self
        known = {f.name for f in dataclasses.fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(unknown)}")
        fixed = dict(overrides)
        if "gap_bins" in fixed:
            fixed["gap_bins"] = tuple(tuple(b) for b in fixed["gap_bins"])
        return dataclasses.replace(self, **fixed)


@dataclass
class BackendEndpoint:
    url: str | None = None
    model: str | None = None


@dataclass
class RunConfig:
    dataset: Path
    videos: Path | None = None
    out: Path | None = None
    method_name: str = "unnamed"
    eval_overrides: dict[str, Any] = field(default_factory=dict)
    backends: dict[str, BackendEndpoint] = field(default_factory=dict)
    fake_seed: int | None = None
    parallel: int = 1
    tier: str | None = None
    episodes: list[str] | None = None
    requests_per_minute: float = 60.0
    timeout_s: float = 120.0

    @property
    def eval_config(self) -> EvalConfig:
        return EvalConfig().with_overrides(self.eval_overrides)

    @classmethod
    def from_file(cls, path: str | Path, **cli: Any) -> "RunConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
        backends = {role: BackendEndpoint(**ep) for role, ep in raw.get("backends", {}).items()}
        merged = {
            "dataset": raw.get("dataset"),
            "videos": raw.get("videos"),
            "out": raw.get("out"),
            "method_name": raw.get("method_name", "unnamed"),
            "eval_overrides": raw.get("eval", {}),
            "parallel": raw.get("parallel", 1),
            "tier": raw.get("tier"),
            "episodes": raw.get("episodes"),
            "requests_per_minute": raw.get("requests_per_minute", 60.0),
            "timeout_s": raw.get("timeout_s", 120.0),
        }
        merged.update({k: v for k, v in cli.items() if v is not None})
        for key in ("dataset", "videos", "out"):
            if merged[key] is not None:
                merged[key] = Path(merged[key])
        return cls(backends=backends, **merged)


ENV_PREFIX = "CROSSSHOT_"


def endpoint_from_env(role: str) -> str | None:
    return os.environ.get(f"{ENV_PREFIX}{role.upper()}_URL")


def judge_api_keys() -> list[str]:
    raw = os.environ.get(f"{ENV_PREFIX}JUDGE_API_KEYS", "")
    return [k for k in (p.strip() for p in raw.split(",")) if k]
