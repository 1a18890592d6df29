"""Deterministic offline backends driven by scriptable response tables.

Every fake answers from its table first. Unscripted inputs fall back to a
seeded function of the image fingerprint (and query), so the same seed and
inputs always give the same outputs. In ``strict`` mode unscripted grounding
returns no detections and an unscripted judge request raises
NoScriptedResponse.

Table keys::

    grounding   "<frame fp>|<query>"        -> [[x1, y1, x2, y2, conf], ...] or "__fail__"
    clip        "<image fp>|<text>"         -> similarity
    embedding   "<image fp>"                -> vector
    aesthetic   "<image fp>"                -> score in [0, 1]
    imaging     "<image fp>"                -> score in [0, 100]
    flow        "<fp a>|<fp b>"             -> mean flow magnitude (pixels)
    interp      "<fp0>|<fp1>|<fp2>"         -> interpolation quality in [0, 1]
    judge       "<semantic request key>"    -> verdict object, or raw text
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..config import CRITERIA, EvalConfig
from ..media import fingerprint, luminance
from .base import (BackendError, BackendSet, Detection, JudgeRequest, NoScriptedResponse,
                   canonical_json, unit)

FAKE_EMBED_DIM = 64
FAIL = "__fail__"

TABLE_NAMES = ("grounding", "clip", "embedding", "aesthetic", "imaging", "flow", "interp", "judge")


@dataclass
class FakeTables:
    grounding: dict[str, Any] = field(default_factory=dict)
    clip: dict[str, float] = field(default_factory=dict)
    embedding: dict[str, list[float]] = field(default_factory=dict)
    aesthetic: dict[str, float] = field(default_factory=dict)
    imaging: dict[str, float] = field(default_factory=dict)
    flow: dict[str, float] = field(default_factory=dict)
    interp: dict[str, float] = field(default_factory=dict)
    judge: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in TABLE_NAMES}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FakeTables":
        return cls(**{name: dict(d.get(name, {})) for name in TABLE_NAMES})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FakeTables":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]


def _rng(seed: int, *parts: str) -> np.random.Generator:
    h = hashlib.sha256("|".join([str(seed), *parts]).encode()).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


class _Fake:
    role = "fake"

    def __init__(self, seed: int, tables: FakeTables, strict: bool = False):
        self.seed = seed
        self.tables = tables
        self.strict = strict
        self.identity = f"fake-{self.role}"
        self.fingerprint = f"fake-{self.role}@seed{seed}:{tables.digest()}:{'strict' if strict else 'lenient'}"


class FakeGrounding(_Fake):
    role = "grounding"

    def __init__(self, seed: int, tables: FakeTables, strict: bool = False,
                 tau_box: float = 0.25, tau_text: float = 0.20):
        super().__init__(seed, tables, strict)
        self.tau_box = tau_box
        self.tau_text = tau_text

    def detect(self, image: np.ndarray, query: str) -> list[Detection]:
        fp = fingerprint(image)
        h, w = image.shape[:2]
        scripted = self.tables.grounding.get(f"{fp}|{query}")
        if scripted == FAIL:
            raise BackendError(f"scripted grounding failure for {fp[:8]}")
        if scripted is not None:
            dets = [Detection(tuple(float(x) for x in row[:4]), float(row[4])) for row in scripted]
        elif self.strict:
            dets = []
        else:
            rng = _rng(self.seed, "ground", fp, query)
            dets = []
            for _ in range(int(rng.choice([0, 1, 1, 2]))):
                bw = float(rng.uniform(0.15, 0.6)) * w
                bh = float(rng.uniform(0.15, 0.6)) * h
                x1 = float(rng.uniform(0, w - bw))
                y1 = float(rng.uniform(0, h - bh))
                dets.append(Detection((round(x1, 2), round(y1, 2), round(x1 + bw, 2), round(y1 + bh, 2)),
                                      round(float(rng.uniform(0.2, 1.0)), 4)))
        return [d for d in dets if d.confidence >= self.tau_box]


class FakeEmbedding(_Fake):
    role = "embedding"

    def __init__(self, seed: int, tables: FakeTables, strict: bool = False, dim: int = FAKE_EMBED_DIM):
        super().__init__(seed, tables, strict)
        self.dim = dim

    def embed(self, image: np.ndarray) -> np.ndarray:
        fp = fingerprint(image)
        scripted = self.tables.embedding.get(fp)
        if scripted == FAIL:
            raise BackendError(f"scripted embedding failure for {fp[:8]}")
        if scripted is not None:
            return unit(np.asarray(scripted, dtype=np.float64))
        return unit(_rng(self.seed, "embed", fp).standard_normal(self.dim))


class FakeTextImage(_Fake):
    role = "text_image"

    def similarity(self, image: np.ndarray, text: str) -> float:
        fp = fingerprint(image)
        scripted = self.tables.clip.get(f"{fp}|{text}")
        if scripted == FAIL:
            raise BackendError(f"scripted text-image failure for {fp[:8]}")
        if scripted is not None:
            return float(scripted)
        return round(float(_rng(self.seed, "clip", fp, text).uniform(-0.1, 0.45)), 6)


class FakeFlow(_Fake):
    role = "flow"

    def __init__(self, seed: int, tables: FakeTables, strict: bool = False,
                 constant_quality: float | None = None):
        super().__init__(seed, tables, strict)
        self.constant_quality = constant_quality

    def flow(self, frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
        key = f"{fingerprint(frame_a)}|{fingerprint(frame_b)}"
        mag = self.tables.flow.get(key)
        if mag == FAIL:
            raise BackendError("scripted flow failure")
        if mag is None:
            mag = float(np.abs(luminance(frame_a) - luminance(frame_b)).mean())
        h, w = frame_a.shape[:2]
        field_ = np.zeros((h, w, 2), dtype=np.float64)
        field_[..., 0] = float(mag)
        return field_

    def interpolation_quality(self, prev: np.ndarray, mid: np.ndarray, nxt: np.ndarray) -> float:
        if self.constant_quality is not None:
            return self.constant_quality
        key = "|".join(fingerprint(f) for f in (prev, mid, nxt))
        q = self.tables.interp.get(key)
        if q == FAIL:
            raise BackendError("scripted interpolation failure")
        if q is not None:
            return float(q)
        interp = (prev.astype(np.float64) + nxt.astype(np.float64)) / 2.0
        return float(1.0 - np.abs(mid.astype(np.float64) - interp).mean() / 255.0)


class FakeScalar(_Fake):
    def __init__(self, role: str, low: float, high: float, seed: int, tables: FakeTables,
                 strict: bool = False, constant: float | None = None):
        self.role = role
        super().__init__(seed, tables, strict)
        self.low, self.high = low, high
        self.constant = constant

    def predict(self, image: np.ndarray) -> float:
        if self.constant is not None:
            return self.constant
        fp = fingerprint(image)
        scripted = getattr(self.tables, self.role).get(fp)
        if scripted == FAIL:
            raise BackendError(f"scripted {self.role} failure")
        if scripted is not None:
            return float(scripted)
        return round(float(_rng(self.seed, self.role, fp).uniform(self.low, self.high)), 6)


class FakeJudge(_Fake):
    role = "judge"

    def complete(self, request: JudgeRequest) -> str:
        scripted = self.tables.judge.get(request.key)
        if scripted is None:
            if self.strict:
                raise NoScriptedResponse(request.key)
            scripted = self._seeded_verdict(request)
        if scripted == FAIL:
            raise BackendError(f"scripted judge failure for {request.key}")
        return scripted if isinstance(scripted, str) else json.dumps(scripted, sort_keys=True)

    def _seeded_verdict(self, request: JudgeRequest) -> dict:
        rng = _rng(self.seed, "judge", request.key)

        def score() -> int:
            return int(rng.integers(1, 11))

        if request.kind == "action":
            return {"overall": score(), "depicted": bool(rng.integers(0, 2)), "subject_identity": score(),
                    "subject_action": score(), "object_interaction": score() if rng.random() < 0.6 else None,
                    "motion_quality": score()}
        crits = {c: score() for c in CRITERIA[request.entity_type or "character"]}
        if request.kind == "fidelity":
            return {"overall": score(), "criteria": crits}
        return {"same": bool(rng.integers(0, 2)), "similarity": score(), "criteria": crits}


def fake_suite(seed: int, tables: FakeTables | None = None, strict: bool = False,
               cfg: EvalConfig | None = None, flow_quality: float | None = None,
               aesthetic: float | None = None, imaging: float | None = None) -> BackendSet:
    """Full deterministic backend set. Same seed and tables -> identical behaviour."""
    tables = tables or FakeTables()
    cfg = cfg or EvalConfig()
    return BackendSet(
        grounding=FakeGrounding(seed, tables, strict, cfg.tau_box, cfg.tau_text),
        embedding=FakeEmbedding(seed, tables, strict),
        text_image=FakeTextImage(seed, tables, strict),
        judge=FakeJudge(seed, tables, strict),
        flow=FakeFlow(seed, tables, strict, flow_quality),
        aesthetic=FakeScalar("aesthetic", 0.0, 1.0, seed, tables, strict, aesthetic),
        imaging=FakeScalar("imaging", 0.0, 100.0, seed, tables, strict, imaging),
    )
