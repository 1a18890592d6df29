"""Metric value contract and all aggregation math.

Missing data is never a number: a metric with nothing evaluated carries
``value=None`` and ``n_eval=0``. Constructing a MetricValue that breaks this
raises immediately.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .registry import BY_NAME, EPISODE_MEAN, GATE_CORRECTED, METRIC_NAMES
from .script import TIERS

log = logging.getLogger(__name__)

ZERO_SD = 1e-12


@dataclass(frozen=True)
class MetricValue:
    """(value, n_eval, n_failed, n_skipped) plus the gate-skipped share of n_skipped."""

    value: float | None
    n_eval: int = 0
    n_failed: int = 0
    n_skipped: int = 0
    n_gated: int = 0

    def __post_init__(self):
        if min(self.n_eval, self.n_failed, self.n_skipped, self.n_gated) < 0:
            raise ValueError("counts must be non-negative")
        if (self.n_eval == 0) != (self.value is None):
            raise ValueError(f"n_eval={self.n_eval} inconsistent with value={self.value!r}")
        if self.value is not None and not math.isfinite(self.value):
            raise ValueError("metric value must be finite")
        if self.n_gated > self.n_skipped:
            raise ValueError("gate-skipped count exceeds skipped count")

    @classmethod
    def missing(cls, n_failed: int = 0, n_skipped: int = 0, n_gated: int = 0) -> "MetricValue":
        return cls(None, 0, n_failed, n_skipped, n_gated)

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "n_eval": self.n_eval, "n_failed": self.n_failed,
                "n_skipped": self.n_skipped, "n_gated": self.n_gated}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MetricValue":
        return cls(d["value"], d["n_eval"], d["n_failed"], d["n_skipped"], d.get("n_gated", 0))


def mean_or_none(values: Iterable[float | None]) -> float | None:
    kept = [v for v in values if v is not None]
    return math.fsum(kept) / len(kept) if kept else None


def none_skip_mean(values: Sequence[float | None], n_failed: int = 0, n_gated: int = 0) -> MetricValue:
    """Mean over non-None entries; None entries are counted as skipped."""
    kept = [v for v in values if v is not None]
    skipped = len(values) - len(kept)
    if not kept:
        return MetricValue.missing(n_failed, skipped + n_gated, n_gated)
    return MetricValue(math.fsum(kept) / len(kept), len(kept), n_failed, skipped + n_gated, n_gated)


@dataclass(frozen=True)
class Aggregate:
    corrected: float | None
    rawmean: float | None
    coverage: float | None
    n_eval: int
    n_skipped: int
    n_failed: int
    n_gated: int
    n_episodes: int

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def gate_corrected_mean(rows: Iterable[tuple[float | None, int, int, int]]
                        ) -> tuple[float | None, float | None, float | None]:
    """Instance-weighted, gate-corrected mean over episode rows (v, n_eval, n_skip, n_fail).

    Returns (corrected, rawmean, coverage) with corrected = rawmean * coverage.
    """
    num: list[float] = []
    evals = 0
    total = 0
    for v, n_eval, n_skip, n_fail in rows:
        if min(n_eval, n_skip, n_fail) < 0:
            raise ValueError("counts must be non-negative")
        total += n_eval + n_skip + n_fail
        if v is not None:
            num.append(v * n_eval)
            evals += n_eval
    if total == 0:
        return None, None, None
    coverage = evals / total
    if evals == 0:
        return None, None, coverage
    s = math.fsum(num)
    return s / total, s / evals, coverage


def aggregate_metric(name: str, values: Iterable[MetricValue]) -> Aggregate:
    values = list(values)
    n_eval = sum(v.n_eval for v in values)
    n_skip = sum(v.n_skipped for v in values)
    n_fail = sum(v.n_failed for v in values)
    n_gated = sum(v.n_gated for v in values)
    info = BY_NAME.get(name)
    kind = info.aggregation if info else EPISODE_MEAN
    if kind == GATE_CORRECTED:
        corrected, raw, cov = gate_corrected_mean((v.value, v.n_eval, v.n_gated, v.n_failed) for v in values)
    else:
        raw = mean_or_none(v.value for v in values)
        corrected, cov = raw, (1.0 if raw is not None else None)
    return Aggregate(corrected, raw, cov, n_eval, n_skip, n_fail, n_gated,
                     sum(1 for v in values if v.value is not None))


def aggregate_episodes(episode_metrics: Mapping[str, Mapping[str, MetricValue]],
                       names: Sequence[str] = METRIC_NAMES) -> dict[str, Aggregate]:
    ordered = [episode_metrics[e] for e in sorted(episode_metrics)]
    return {n: aggregate_metric(n, [m[n] for m in ordered if n in m]) for n in names}


class InsufficientPairing(ValueError):
    pass


@dataclass(frozen=True)
class EffectSize:
    metric: str
    delta: float
    d: float | None
    d_z: float | None
    n_paired: int

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def cohens_d(a: Mapping[str, float | None], b: Mapping[str, float | None], metric: str = "") -> EffectSize:
    """Paired effect size of method A over method B on common episodes.

    Pooled d uses sqrt((s_A^2 + s_B^2) / 2) with n-1 variances on the paired
    subset; d_z = mean(delta) / sd(delta). A standard deviation at or below
    1e-12 counts as zero and the statistic is None.
    """
    common = sorted(e for e in a if e in b and a[e] is not None and b[e] is not None)
    if len(common) < 2:
        raise InsufficientPairing(f"insufficient pairing for {metric or 'metric'}: {len(common)} common episodes")
    xa = [float(a[e]) for e in common]
    xb = [float(b[e]) for e in common]
    deltas = [x - y for x, y in zip(xa, xb)]
    mean_delta = math.fsum(deltas) / len(deltas)
    pooled = math.sqrt((statistics.variance(xa) + statistics.variance(xb)) / 2.0)
    sd_delta = statistics.stdev(deltas)
    d = mean_delta / pooled if pooled > ZERO_SD else None
    d_z = mean_delta / sd_delta if sd_delta > ZERO_SD else None
    return EffectSize(metric, mean_delta, d, d_z, len(common))


@dataclass(frozen=True)
class GapBin:
    lo: int
    hi: int
    mean: float | None
    count: int

    @property
    def label(self) -> str:
        return f"{self.lo}-{self.hi}"


def gap_bin_report(records: Iterable[Any], bins: Sequence[tuple[int, int]],
                   signal: str | None = None) -> tuple[dict[str, list[GapBin]], int]:
    """Per-type binned mean similarity. Returns (report, dropped out-of-bin count).

    Records need ``gap``, ``similarity``, ``entity_type`` and optionally ``signal``.
    """
    sums: dict[str, list[list[float]]] = {}
    dropped = 0
    for r in records:
        if signal is not None and getattr(r, "signal", signal) != signal:
            continue
        slots = sums.setdefault(r.entity_type, [[] for _ in bins])
        for i, (lo, hi) in enumerate(bins):
            if lo <= r.gap <= hi:
                slots[i].append(r.similarity)
                break
        else:
            dropped += 1
    if dropped:
        log.info("dropped %d gap records outside bins %s", dropped, list(bins))
    report = {
        etype: [GapBin(lo, hi, (math.fsum(v) / len(v)) if v else None, len(v))
                for (lo, hi), v in zip(bins, slots)]
        for etype, slots in sorted(sums.items())
    }
    return report, dropped


def per_tier_breakdown(episode_metrics: Mapping[str, Mapping[str, MetricValue]],
                       tiers: Mapping[str, str],
                       names: Sequence[str] = METRIC_NAMES) -> dict[str, dict[str, Aggregate]]:
    for ep in episode_metrics:
        tier = tiers.get(ep)
        if tier not in TIERS:
            raise ValueError(f"episode {ep} has unknown tier {tier!r}")
    out: dict[str, dict[str, Aggregate]] = {}
    for tier in TIERS:
        subset = {e: m for e, m in episode_metrics.items() if tiers[e] == tier}
        if subset:
            out[tier] = aggregate_episodes(subset, names)
    out["all"] = aggregate_episodes(episode_metrics, names)
    return out
