"""Contract checks that every backend (remote or fake) must pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .base import BackendError, BackendUnreachable, JudgeRequest
from .verdicts import VerdictError, extract_json

NORM_TOL = 1e-6


@dataclass
class ProbeSuite:
    images: list[np.ndarray]
    texts: list[str]
    judge_requests: list[JudgeRequest] = field(default_factory=list)

    @classmethod
    def default(cls, seed: int = 0) -> "ProbeSuite":
        rng = np.random.default_rng(seed)
        images = [rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8) for _ in range(3)]
        images.append(np.full((48, 64, 3), 128, dtype=np.uint8))
        texts = ["a woman in a red coat", "a wooden table"]
        reqs = [JudgeRequest("fidelity", "probe/fidelity", "probe", images[:1], "character"),
                JudgeRequest("pair", "probe/pair", "probe", images[:2], "object")]
        return cls(images, texts, reqs)


@dataclass
class ContractReport:
    role: str
    checks: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _role(backend: Any) -> str:
    for attr, role in (("detect", "grounding"), ("embed", "embedding"), ("similarity", "text_image"),
                       ("complete", "judge"), ("flow", "flow"), ("predict", "scalar")):
        if callable(getattr(backend, attr, None)):
            return role
    raise TypeError(f"{type(backend).__name__} implements no backend capability")


def _call(report: ContractReport, fn: Callable[[], Any]) -> tuple[bool, Any]:
    """Run one probe. Connectivity errors propagate; other failures must be typed."""
    report.checks += 1
    try:
        return True, fn()
    except BackendUnreachable:
        raise
    except BackendError:
        return False, None
    except Exception as exc:
        report.violations.append(f"untyped failure {type(exc).__name__}: {exc}")
        return False, None


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    return a == b


def verify_backend_contract(backend: Any, probes: ProbeSuite | None = None) -> ContractReport:
    """Check determinism, output ranges and failure typing. Raises BackendUnreachable."""
    probes = probes or ProbeSuite.default()
    report = ContractReport(_role(backend))
    v = report.violations

    def twice(fn: Callable[[], Any], what: str) -> Any:
        ok1, r1 = _call(report, fn)
        ok2, r2 = _call(report, fn)
        if ok1 and ok2 and not _same(r1, r2):
            v.append(f"{what} not deterministic")
        return r1 if ok1 else None

    if report.role == "grounding":
        for img in probes.images:
            h, w = img.shape[:2]
            for text in probes.texts:
                dets = twice(lambda: backend.detect(img, text), "detections")
                for d in dets or []:
                    x1, y1, x2, y2 = d.box
                    if not (0 <= x1 <= x2 <= w and 0 <= y1 <= y2 <= h):
                        v.append("detection box outside image bounds")
                    if not 0.0 <= d.confidence <= 1.0:
                        v.append("detection confidence outside [0, 1]")
    elif report.role == "embedding":
        dims = set()
        for img in probes.images:
            e = twice(lambda: backend.embed(img), "embedding")
            if e is None:
                continue
            dims.add(int(np.asarray(e).size))
            if abs(float(np.linalg.norm(e)) - 1.0) > NORM_TOL:
                v.append("embedding not unit-norm")
        if len(dims) > 1:
            v.append("embedding dimension not constant")
    elif report.role == "text_image":
        for img in probes.images:
            for text in probes.texts:
                s = twice(lambda: backend.similarity(img, text), "similarity")
                if s is not None and not -1.0 <= s <= 1.0:
                    v.append("similarity outside [-1, 1]")
    elif report.role == "judge":
        for req in probes.judge_requests:
            text = twice(lambda: backend.complete(req), "verdict")
            if text is None:
                continue
            try:
                extract_json(text)
            except VerdictError:
                v.append("non-structured verdict")
    elif report.role == "flow":
        a, b, c = probes.images[:3]
        f = twice(lambda: backend.flow(a, b), "flow")
        if f is not None and np.asarray(f).shape != a.shape[:2] + (2,):
            v.append("flow field shape mismatch")
        q = twice(lambda: backend.interpolation_quality(a, b, c), "interpolation quality")
        if q is not None and not 0.0 <= q <= 1.0:
            v.append("interpolation quality outside [0, 1]")
    else:
        for img in probes.images:
            s = twice(lambda: backend.predict(img), "prediction")
            if s is not None and not backend.low <= s <= backend.high:
                v.append(f"prediction outside [{backend.low}, {backend.high}]")
    # one line per distinct problem
    report.violations = sorted(set(v))
    return report
