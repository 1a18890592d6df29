"""Run manifests and the comparability check."""

from __future__ import annotations

import hashlib
import platform as _platform
import subprocess
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Mapping

from .backends.base import BackendSet
from .backends.prompts import TEMPLATE_VERSION, TEMPLATES, VERDICT_SCHEMA_VERSION, template_fingerprints
from .config import CRITERIA, EvalConfig
from .registry import METRIC_NAMES

EXCLUDED = frozenset({"method_name", "timestamp_utc", "platform", "n_llm_keys"})

# fixed conventions that change numbers if they change
CONVENTIONS = {
    "frame_sampling": "floor(1 + (j-1)(F-1)/(n-1)), 1-based, unique indices for grounding",
    "luminance": "BT.601 (0.299, 0.587, 0.114)",
    "laplacian": "4-neighbour, interior pixels, population variance",
    "crop": "pad each side by fraction of box size, floor/ceil, clamp, bilinear resize",
    "lapvar_substrate": "padded resized crop",
    "area_pct": "raw detection box before padding",
    "tie_break": "alpha desc, frame asc, area desc, x1 asc, box asc",
    "anchor": "argmax centroid similarity, ties within 1e-12 go to the earlier shot",
    "scene_anchor_embedding": "canonical location crop",
    "gap_decay_pairs": "all unordered admitted pairs, adjacent flag recorded",
    "pooled_sd": "sqrt((s_A^2 + s_B^2) / 2), paired subset, n-1 variances",
    "effect_size_zero_sd": 1e-12,
    "judge_score_scale": "raw 1-10 divided by 10",
    "aggregation_p1_presence": "episode mean",
    "aggregation_other": "instance-weighted gate-corrected mean",
    "criteria": {k: list(v) for k, v in CRITERIA.items()},
    "metrics": list(METRIC_NAMES),
}

LIBRARIES = ("numpy", "opencv-python-headless", "httpx")


class ManifestError(RuntimeError):
    pass


def code_revision() -> str:
    try:
        version = metadata.version("crossshot")
    except metadata.PackageNotFoundError:
        version = "0+unknown"
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True,
                             timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = "nogit"
    return f"{version}+{rev}"


def library_versions() -> dict[str, str]:
    out = {"python": ".".join(map(str, sys.version_info[:3]))}
    for lib in LIBRARIES:
        try:
            out[lib] = metadata.version(lib)
        except metadata.PackageNotFoundError:
            out[lib] = "missing"
    return out


def file_fingerprint(path: str | Path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise ManifestError(f"cannot fingerprint artifact {path}: {exc}") from exc


def build_manifest(cfg: EvalConfig, backends: BackendSet | Mapping[str, Mapping[str, str]],
                   revision: str | None = None, method_name: str = "unnamed", n_llm_keys: int = 0,
                   artifacts: Mapping[str, str | Path] | None = None,
                   templates: Mapping[str, str] | None = None, timestamp: str | None = None) -> dict[str, Any]:
    templates = dict(template_fingerprints() if templates is None else templates)
    missing = sorted(name for name in TEMPLATES if not templates.get(name))
    if missing:
        raise ManifestError(f"missing prompt-template fingerprint: {', '.join(missing)}")
    ids = backends.identities() if isinstance(backends, BackendSet) else {k: dict(v) for k, v in backends.items()}
    return {
        "method_name": method_name,
        "timestamp_utc": timestamp or datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "platform": _platform.platform(),
        "n_llm_keys": int(n_llm_keys),
        "code_revision": revision or code_revision(),
        "config": cfg.to_dict(),
        "conventions": CONVENTIONS,
        "backends": ids,
        "artifacts": {name: file_fingerprint(p) for name, p in sorted((artifacts or {}).items())},
        "prompt_templates": {"version": TEMPLATE_VERSION, "verdict_schema": VERDICT_SCHEMA_VERSION,
                             "fingerprints": templates},
        "libraries": library_versions(),
    }


def _flatten(obj: Any, prefix: str = "") -> dict[str, Any]:
    if isinstance(obj, Mapping):
        out: dict[str, Any] = {}
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}.{k}" if prefix else str(k)))
        if not obj and prefix:
            out[prefix] = {}
        return out
    if isinstance(obj, (list, tuple)):
        return {prefix: [_canon(x) for x in obj]}
    return {prefix: obj}


def _canon(x: Any) -> Any:
    if isinstance(x, (list, tuple)):
        return [_canon(y) for y in x]
    if isinstance(x, Mapping):
        return {k: _canon(v) for k, v in sorted(x.items())}
    return x


def check_comparability(a: Mapping[str, Any], b: Mapping[str, Any]) -> tuple[bool, list[str]]:
    """Comparable iff every field outside EXCLUDED matches. Returns (verdict, dotted diff keys)."""
    fa = {k: v for k, v in _flatten(a).items() if k.split(".")[0] not in EXCLUDED}
    fb = {k: v for k, v in _flatten(b).items() if k.split(".")[0] not in EXCLUDED}
    diffs = sorted(k for k in set(fa) | set(fb) if fa.get(k, _MISSING) != fb.get(k, _MISSING))
    return not diffs, diffs


class _Missing:
    def __repr__(self) -> str:
        return "<missing>"


_MISSING = _Missing()
