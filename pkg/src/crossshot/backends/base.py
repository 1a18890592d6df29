"""Backend capability contracts shared by remote clients and offline fakes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Protocol, runtime_checkable

import numpy as np

from ..media import fingerprint


class BackendError(RuntimeError):
    """A backend call failed; the item counts as n_failed downstream."""


class BackendUnreachable(BackendError):
    """Connectivity failure, distinct from a contract violation."""


class JudgeFailure(BackendError):
    """The judge produced no usable structured verdict."""


class NoScriptedResponse(BackendError):
    """A strict fake was asked something its tables do not cover.

    Deliberately not a JudgeFailure: it signals a broken fixture, so it is
    never absorbed as an ordinary judge failure and fails the episode.
    """


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    confidence: float

    @property
    def area(self) -> float:
        x1, y1, x2, y2 = self.box
        return max(0.0, x2 - x1) * max(0.0, y2 - y1)


@dataclass
class JudgeRequest:
    """One judge call. ``key`` is a stable semantic id (e.g. ``fidelity/ep1/3/Ann``)
    used for audit and by scripted fakes; remote judges see only prompt + images."""

    kind: str
    key: str
    prompt: str
    images: list[np.ndarray] = field(default_factory=list)
    entity_type: str | None = None

    def image_fingerprints(self) -> list[str]:
        return [fingerprint(im) for im in self.images]

    def request_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.prompt.encode())
        for fp in self.image_fingerprints():
            h.update(fp.encode())
        return h.hexdigest()[:32]


@runtime_checkable
class GroundingBackend(Protocol):
    identity: str

    def detect(self, image: np.ndarray, query: str) -> list[Detection]: ...


@runtime_checkable
class EmbeddingBackend(Protocol):
    identity: str

    def embed(self, image: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class TextImageBackend(Protocol):
    identity: str

    def similarity(self, image: np.ndarray, text: str) -> float: ...


@runtime_checkable
class JudgeBackend(Protocol):
    identity: str

    def complete(self, request: JudgeRequest) -> str: ...


@runtime_checkable
class FlowBackend(Protocol):
    identity: str

    def flow(self, frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray: ...

    def interpolation_quality(self, prev: np.ndarray, mid: np.ndarray, nxt: np.ndarray) -> float: ...


@runtime_checkable
class ScalarPredictorBackend(Protocol):
    identity: str
    low: float
    high: float

    def predict(self, image: np.ndarray) -> float: ...


@dataclass
class BackendSet:
    grounding: GroundingBackend
    embedding: EmbeddingBackend
    text_image: TextImageBackend
    judge: JudgeBackend
    flow: FlowBackend
    aesthetic: ScalarPredictorBackend
    imaging: ScalarPredictorBackend

    ROLES = ("grounding", "embedding", "text_image", "judge", "flow", "aesthetic", "imaging")

    def identities(self) -> dict[str, dict[str, str]]:
        out = {}
        for role in self.ROLES:
            b = getattr(self, role)
            out[role] = {"identity": b.identity, "fingerprint": getattr(b, "fingerprint", b.identity)}
        return out


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise BackendError("zero-norm embedding")
    return v / n
