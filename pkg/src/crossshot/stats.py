"""Descriptive statistics over episode scripts (recurrence, gaps, chains, memory signal).

Two gap notions are kept apart on purpose:

* ``intervening_gap`` = k_j - k_i - 1 between consecutive appearances (dataset stats)
* ``index_gap`` = |k_j - k_i| (gap-decay diagnostic, see ``pillar3``)
"""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, field

from .script import ENTITY_TYPES, TIERS, EpisodeScript

CCDF_THRESHOLDS = (1, 2, 3, 5, 10, 15, 20, 30, 40)


def intervening_gaps(appearances: list[int]) -> list[int]:
    return [b - a - 1 for a, b in zip(appearances, appearances[1:])]


def longest_run(appearances: list[int]) -> int:
    if not appearances:
        return 0
    best = run = 1
    for a, b in zip(appearances, appearances[1:]):
        run = run + 1 if b == a + 1 else 1
        best = max(best, run)
    return best


@dataclass
class EpisodeStats:
    episode_id: str
    tier: str
    num_shots: int
    # entity part
    entity_types: dict[str, str] = field(default_factory=dict)
    appearances: dict[str, list[int]] = field(default_factory=dict)
    gaps: dict[str, list[int]] = field(default_factory=dict)
    max_gap: dict[str, int] = field(default_factory=dict)
    persistence: dict[str, int] = field(default_factory=dict)
    scenes_spanned: dict[str, int] = field(default_factory=dict)
    registry_counts: dict[str, int] = field(default_factory=dict)
    total_appearances: dict[str, int] = field(default_factory=dict)
    unique_scheduled: dict[str, int] = field(default_factory=dict)
    reappearances: dict[str, int] = field(default_factory=dict)
    recurring: dict[str, int] = field(default_factory=dict)
    cross_scene_recurring: dict[str, int] = field(default_factory=dict)
    # structure part
    chain_lengths: list[int] = field(default_factory=list)
    num_cuts: int = 0
    cut_rate: float = 0.0
    within_episode_cuts: int = 0
    carry_over_cuts: int = 0
    memory_only_shots: int = 0
    registry_shots: int = 0
    new_entity_curve: list[int] = field(default_factory=list)

    def mean_recurrence_gap(self) -> float | None:
        """Mean intervening gap over all consecutive appearance pairs of all entities."""
        pooled = [g for gs in self.gaps.values() for g in gs]
        return statistics.fmean(pooled) if pooled else None

    def max_recurrence_gap(self) -> int | None:
        return max(self.max_gap.values()) if self.max_gap else None


def compute_entity_stats(script: EpisodeScript, stats: EpisodeStats | None = None) -> EpisodeStats:
    stats = stats or EpisodeStats(script.episode_id, script.tier, script.num_shots)
    scene_of = {s.index: s.scene_id for s in script.shots}
    apps: dict[str, list[int]] = {}
    for shot in script.shots:
        for name in shot.schedule:
            apps.setdefault(name, []).append(shot.index)

    stats.appearances = apps
    stats.entity_types = {n: script.entity(n).entity_type for n in apps}
    for name, ks in apps.items():
        stats.persistence[name] = longest_run(ks)
        stats.scenes_spanned[name] = len({scene_of[k] for k in ks})
        if len(ks) >= 2:
            stats.gaps[name] = intervening_gaps(ks)
            stats.max_gap[name] = max(stats.gaps[name])

    for etype in ENTITY_TYPES:
        names = [n for n, t in stats.entity_types.items() if t == etype]
        stats.registry_counts[etype] = len(script.entities_of(etype))
        stats.total_appearances[etype] = sum(len(apps[n]) for n in names)
        stats.unique_scheduled[etype] = len(names)
        stats.reappearances[etype] = stats.total_appearances[etype] - stats.unique_scheduled[etype]
        stats.recurring[etype] = sum(1 for n in names if len(apps[n]) >= 2)
        stats.cross_scene_recurring[etype] = sum(1 for n in names if stats.scenes_spanned[n] >= 2)
    return stats


def compute_structure_stats(script: EpisodeScript, stats: EpisodeStats | None = None) -> EpisodeStats:
    stats = stats or EpisodeStats(script.episode_id, script.tier, script.num_shots)
    chains: list[int] = []
    for shot in script.shots:
        if shot.cut or not chains:
            chains.append(1)
        else:
            chains[-1] += 1
    stats.chain_lengths = chains
    stats.num_cuts = sum(1 for s in script.shots if s.cut)
    stats.cut_rate = stats.num_cuts / script.num_shots if script.num_shots else 0.0

    carry = within = 0
    for prev, cur in zip(script.shots, script.shots[1:]):
        if not cur.cut:
            continue
        within += 1
        shared = (set(prev.characters) | set(prev.objects)) & (set(cur.characters) | set(cur.objects))
        if shared:
            carry += 1
    stats.within_episode_cuts = within
    stats.carry_over_cuts = carry

    firsts = script.first_appearance_map()
    memory_only = registry = 0
    curve = []
    for shot in script.shots:
        n_first = len(firsts[shot.index])
        curve.append(n_first)
        if n_first:
            registry += 1
        elif shot.schedule:
            memory_only += 1
    stats.memory_only_shots = memory_only
    stats.registry_shots = registry
    stats.new_entity_curve = curve
    return stats


def compute_episode_stats(script: EpisodeScript) -> EpisodeStats:
    return compute_structure_stats(script, compute_entity_stats(script))


def _mean_sd(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return statistics.fmean(values), sd


def _slice_report(stats: list[EpisodeStats], scripts: list[EpisodeScript], prefix: str) -> dict[str, float | int | None]:
    rep: dict[str, float | int | None] = {}
    n_shots = sum(s.num_shots for s in stats)
    rep[f"{prefix}episodes"] = len(stats)
    rep[f"{prefix}shots"] = n_shots
    rep[f"{prefix}scenes"] = sum(s.num_cuts for s in stats)

    tot_reg = tot_app = tot_unique = tot_re = 0
    for etype in ENTITY_TYPES:
        reg = sum(s.registry_counts[etype] for s in stats)
        app = sum(s.total_appearances[etype] for s in stats)
        uniq = sum(s.unique_scheduled[etype] for s in stats)
        re_ = sum(s.reappearances[etype] for s in stats)
        rep[f"{prefix}registry.{etype}"] = reg
        rep[f"{prefix}appearances.{etype}"] = app
        rep[f"{prefix}first_appearances.{etype}"] = uniq
        rep[f"{prefix}reappearances.{etype}"] = re_
        rep[f"{prefix}reappearance_rate.{etype}"] = re_ / app if app else None
        rep[f"{prefix}recurring.{etype}"] = sum(s.recurring[etype] for s in stats)
        per_ep = [float(s.recurring[etype]) for s in stats]
        rep[f"{prefix}cross_shot_per_episode.{etype}.mean"], rep[f"{prefix}cross_shot_per_episode.{etype}.sd"] = _mean_sd(per_ep)
        rep[f"{prefix}appearances_per_shot.{etype}"] = app / n_shots if n_shots else None
        tot_reg += reg
        tot_app += app
        tot_unique += uniq
        tot_re += re_
    rep[f"{prefix}registry.total"] = tot_reg
    rep[f"{prefix}appearances.total"] = tot_app
    rep[f"{prefix}first_appearances.total"] = tot_unique
    rep[f"{prefix}reappearances.total"] = tot_re
    rep[f"{prefix}reappearance_rate.total"] = tot_re / tot_app if tot_app else None
    rep[f"{prefix}reappearance_identity_holds"] = int(tot_app - tot_unique == tot_re)

    recurring = sum(sum(s.recurring.values()) for s in stats)
    rep[f"{prefix}recurring.total"] = recurring
    rep[f"{prefix}recurring_rate"] = recurring / tot_unique if tot_unique else None
    cross_scene = sum(sum(s.cross_scene_recurring.values()) for s in stats)
    rep[f"{prefix}cross_scene_recurring.total"] = cross_scene
    rep[f"{prefix}cross_scene_recurring_rate"] = cross_scene / tot_unique if tot_unique else None

    max_gaps = [g for s in stats for g in s.max_gap.values()]
    rep[f"{prefix}max_gap.mean"] = statistics.fmean(max_gaps) if max_gaps else None
    rep[f"{prefix}max_gap.median"] = statistics.median(max_gaps) if max_gaps else None
    rep[f"{prefix}max_gap.global"] = max(max_gaps) if max_gaps else None
    for t in CCDF_THRESHOLDS:
        rep[f"{prefix}max_gap.ccdf.ge_{t}"] = sum(1 for g in max_gaps if g >= t) / len(max_gaps) if max_gaps else None

    ep_mean_gap = [g for g in (s.mean_recurrence_gap() for s in stats) if g is not None]
    ep_max_gap = [float(g) for g in (s.max_recurrence_gap() for s in stats) if g is not None]
    rep[f"{prefix}episode_mean_recurrence_gap.mean"], rep[f"{prefix}episode_mean_recurrence_gap.sd"] = _mean_sd(ep_mean_gap)
    rep[f"{prefix}episode_max_recurrence_gap.mean"], rep[f"{prefix}episode_max_recurrence_gap.sd"] = _mean_sd(ep_max_gap)

    persist = [p for s in stats for p in s.persistence.values()]
    rep[f"{prefix}persistence.median"] = statistics.median(persist) if persist else None
    rep[f"{prefix}persistence.max"] = max(persist) if persist else None
    n_apps = [len(a) for s in stats for a in s.appearances.values()]
    rep[f"{prefix}appearance_count.median"] = statistics.median(n_apps) if n_apps else None

    chains = [c for s in stats for c in s.chain_lengths]
    rep[f"{prefix}chains.count"] = len(chains)
    rep[f"{prefix}chains.mean_length"] = statistics.fmean(chains) if chains else None
    rep[f"{prefix}chains.max_length"] = max(chains) if chains else None
    for length, count in sorted(Counter(chains).items()):
        rep[f"{prefix}chains.hist.{length}"] = count
    cuts = sum(s.num_cuts for s in stats)
    rep[f"{prefix}cut_rate"] = cuts / n_shots if n_shots else None
    within = sum(s.within_episode_cuts for s in stats)
    carry = sum(s.carry_over_cuts for s in stats)
    rep[f"{prefix}within_episode_cuts"] = within
    rep[f"{prefix}carry_over_cuts"] = carry
    rep[f"{prefix}carry_over_rate"] = carry / within if within else None
    rep[f"{prefix}memory_only_rate"] = sum(s.memory_only_shots for s in stats) / n_shots if n_shots else None
    rep[f"{prefix}registry_shot_rate"] = sum(s.registry_shots for s in stats) / n_shots if n_shots else None

    # per-shot composition
    shots = [shot for sc in scripts for shot in sc.shots]
    if shots:
        n = len(shots)
        chars = [len(s.characters) for s in shots]
        rep[f"{prefix}composition.zero_characters"] = sum(1 for c in chars if c == 0) / n
        rep[f"{prefix}composition.one_character"] = sum(1 for c in chars if c == 1) / n
        rep[f"{prefix}composition.two_characters"] = sum(1 for c in chars if c == 2) / n
        rep[f"{prefix}composition.ge3_characters"] = sum(1 for c in chars if c >= 3) / n
        rep[f"{prefix}composition.max_characters"] = max(chars)
        rep[f"{prefix}composition.2c1o"] = sum(1 for s in shots if len(s.characters) >= 2 and s.objects) / n
        rep[f"{prefix}composition.tri_type"] = sum(1 for s in shots if s.characters and s.objects and s.locations) / n
        rep[f"{prefix}composition.entities_per_shot"] = sum(len(s.schedule) for s in shots) / n
    return rep


def new_entity_curve(stats: list[EpisodeStats]) -> list[tuple[int, float, int]]:
    """(shot index, mean new entities among episodes that reach the index, #episodes)."""
    longest = max((s.num_shots for s in stats), default=0)
    out = []
    for k in range(1, longest + 1):
        vals = [s.new_entity_curve[k - 1] for s in stats if s.num_shots >= k]
        out.append((k, statistics.fmean(vals), len(vals)))
    return out


def dataset_stats(scripts: list[EpisodeScript]) -> dict[str, float | int | None]:
    """Flat key -> number report over a dataset, overall and per tier."""
    per_ep = [compute_episode_stats(s) for s in scripts]
    report = _slice_report(per_ep, scripts, "all.")
    for tier in TIERS:
        idx = [i for i, s in enumerate(scripts) if s.tier == tier]
        if idx:
            report.update(_slice_report([per_ep[i] for i in idx], [scripts[i] for i in idx], f"tier.{tier}."))
    for k, mean, n in new_entity_curve(per_ep):
        report[f"all.new_entity_curve.{k}"] = mean
        report[f"all.new_entity_curve_episodes.{k}"] = n
    return report
