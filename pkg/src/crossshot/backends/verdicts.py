"""Structured judge verdicts: parsing, 1-10 -> [0, 1] normalization, re-ask, audit."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from ..config import CRITERIA
from .base import BackendError, JudgeBackend, JudgeFailure, JudgeRequest, NoScriptedResponse, canonical_json


class VerdictError(ValueError):
    """Judge output is not a structured verdict of the expected shape."""


@dataclass(frozen=True)
class FidelityVerdict:
    overall: float
    criteria: dict[str, float | None]


@dataclass(frozen=True)
class ActionVerdict:
    overall: float
    depicted: float
    subject_identity: float
    subject_action: float
    object_interaction: float | None
    motion_quality: float


@dataclass(frozen=True)
class PairVerdict:
    same: int
    similarity: float
    criteria: dict[str, float | None]


def extract_json(text: str) -> dict:
    text = (text or "").strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.lower().startswith("json"):
            text = text[4:]
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        start, end = text.find("{"), text.rfind("}")
        if start == -1 or end <= start:
            raise VerdictError("non-structured verdict") from None
        try:
            obj = json.loads(text[start:end + 1])
        except json.JSONDecodeError:
            raise VerdictError("non-structured verdict") from None
    if not isinstance(obj, dict):
        raise VerdictError("non-structured verdict")
    return obj


def normalize_score(raw: Any, field_name: str, allow_none: bool = False) -> float | None:
    if raw is None:
        if allow_none:
            return None
        raise VerdictError(f"missing score '{field_name}'")
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise VerdictError(f"score '{field_name}' is not numeric")
    s = float(raw) / 10.0
    if not 0.0 <= s <= 1.0:
        raise VerdictError(f"score '{field_name}' out of range: {raw}")
    return s


def parse_bool(raw: Any, field_name: str) -> int:
    if isinstance(raw, bool):
        return int(raw)
    if isinstance(raw, (int, float)) and raw in (0, 1):
        return int(raw)
    if isinstance(raw, str) and raw.strip().lower() in ("yes", "true", "same", "no", "false", "different"):
        return int(raw.strip().lower() in ("yes", "true", "same"))
    raise VerdictError(f"field '{field_name}' is not a binary verdict")


def _criteria(obj: dict, entity_type: str) -> dict[str, float | None]:
    raw = obj.get("criteria")
    if not isinstance(raw, dict):
        raise VerdictError("missing criteria object")
    expected = CRITERIA[entity_type]
    extra = sorted(set(raw) - set(expected))
    if extra:
        raise VerdictError(f"criteria {extra} do not belong to type {entity_type}")
    return {c: normalize_score(raw.get(c), c, allow_none=True) for c in expected}


def parse_fidelity(text: str, entity_type: str) -> FidelityVerdict:
    obj = extract_json(text)
    return FidelityVerdict(normalize_score(obj.get("overall"), "overall"), _criteria(obj, entity_type))


def parse_action(text: str) -> ActionVerdict:
    obj = extract_json(text)
    if "depicted" not in obj:
        raise VerdictError("missing field 'depicted'")
    return ActionVerdict(
        overall=normalize_score(obj.get("overall"), "overall"),
        depicted=float(parse_bool(obj["depicted"], "depicted")),
        subject_identity=normalize_score(obj.get("subject_identity"), "subject_identity"),
        subject_action=normalize_score(obj.get("subject_action"), "subject_action"),
        object_interaction=normalize_score(obj.get("object_interaction"), "object_interaction", allow_none=True),
        motion_quality=normalize_score(obj.get("motion_quality"), "motion_quality"),
    )


def parse_pair(text: str, entity_type: str) -> PairVerdict:
    obj = extract_json(text)
    if "same" not in obj:
        raise VerdictError("missing field 'same'")
    return PairVerdict(parse_bool(obj["same"], "same"), normalize_score(obj.get("similarity"), "similarity"),
                       _criteria(obj, entity_type))


@dataclass
class AuditLog:
    """Append-only JSONL log of judge exchanges. Thread-safe."""

    path: Path | None = None
    records: list[dict] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def write(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(canonical_json(record) + "\n")


class Judge:
    """Adapter between a raw JudgeBackend and typed verdicts.

    On a parse failure the request is re-asked up to ``reasks`` times; after
    that, or on any backend error, JudgeFailure is raised.
    """

    def __init__(self, backend: JudgeBackend, audit: AuditLog | None = None, reasks: int = 1):
        self.backend = backend
        self.audit = audit or AuditLog()
        self.reasks = reasks

    def ask(self, request: JudgeRequest, parse: Callable[[str], Any], metric_group: str) -> Any:
        attempts = []
        for _ in range(self.reasks + 1):
            try:
                text = self.backend.complete(request)
            except NoScriptedResponse as exc:
                self._log(request, metric_group, None, f"no response scripted: {exc}", None)
                raise
            except BackendError as exc:
                self._log(request, metric_group, None, f"backend error: {exc}", None)
                raise JudgeFailure(str(exc)) from exc
            try:
                verdict = parse(text)
            except VerdictError as exc:
                attempts.append(str(exc))
                self._log(request, metric_group, text, str(exc), None)
                continue
            self._log(request, metric_group, text, None, verdict)
            return verdict
        raise JudgeFailure(f"{request.key}: {'; '.join(attempts)}")

    def _log(self, request: JudgeRequest, group: str, body: str | None, error: str | None, verdict: Any) -> None:
        self.audit.write({
            "key": request.key,
            "kind": request.kind,
            "metric_group": group,
            "request_hash": request.request_hash(),
            "images": request.image_fingerprints(),
            "response": body,
            "error": error,
            "normalized": None if verdict is None else verdict.__dict__,
        })
