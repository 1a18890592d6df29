"""Episode script schema: entity registry, per-shot schedules, scene/cut structure.

A script document is a JSON object::

    {
      "episode_id": "ep001",
      "tier": "easy",
      "story_overview": "...",
      "entities": {"characters": [{"name": ..., "description": ...}],
                   "objects": [...], "locations": [...]},
      "shots": [{"index": 1, "scene_id": 1, "cut": true,
                 "action_description": "...",
                 "entity_schedule": {"characters": [...], "objects": [...],
                                     "locations": [...]},
                 "first_appearances": [...]}]
    }

``first_appearances`` is optional per shot; when absent the first scheduled
occurrence of each entity is taken as its first appearance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

ENTITY_TYPES = ("character", "object", "location")
TIERS = ("easy", "medium", "hard")

# document key <-> entity type
_GROUP_TO_TYPE = {"characters": "character", "objects": "object", "locations": "location"}
_TYPE_TO_GROUP = {v: k for k, v in _GROUP_TO_TYPE.items()}


class ScriptError(ValueError):
    """Schema violation while parsing a script document."""


class ScriptValidationError(ScriptError):
    """Parsed document breaks a script invariant."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class Entity:
    name: str
    entity_type: str
    description: str


@dataclass(frozen=True)
class ShotSpec:
    index: int
    scene_id: int
    cut: bool
    action_description: str
    characters: tuple[str, ...] = ()
    objects: tuple[str, ...] = ()
    locations: tuple[str, ...] = ()
    first_appearances: frozenset[str] | None = None

    @property
    def schedule(self) -> tuple[str, ...]:
        return self.characters + self.objects + self.locations

    def scheduled(self, entity_type: str) -> tuple[str, ...]:
        return {"character": self.characters, "object": self.objects, "location": self.locations}[entity_type]


@dataclass(frozen=True)
class EpisodeScript:
    episode_id: str
    tier: str
    story_overview: str
    entities: tuple[Entity, ...]
    shots: tuple[ShotSpec, ...]
    _by_name: dict = field(default=None, compare=False, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {e.name: e for e in self.entities})

    @property
    def num_shots(self) -> int:
        return len(self.shots)

    def entity(self, name: str) -> Entity:
        return self._by_name[name]

    def has_entity(self, name: str) -> bool:
        return name in self._by_name

    def entities_of(self, entity_type: str) -> list[Entity]:
        return [e for e in self.entities if e.entity_type == entity_type]

    def shot(self, index: int) -> ShotSpec:
        return self.shots[index - 1]

    def first_appearance_map(self) -> dict[int, frozenset[str]]:
        """Shot index -> entity names whose description is injected at that shot."""
        out: dict[int, frozenset[str]] = {}
        seen: set[str] = set()
        for shot in self.shots:
            inferred = frozenset(n for n in shot.schedule if n not in seen)
            seen.update(shot.schedule)
            out[shot.index] = shot.first_appearances if shot.first_appearances is not None else inferred
        return out


def _require(obj: dict, key: str, kind: type | tuple[type, ...], where: str) -> Any:
    if not isinstance(obj, dict) or key not in obj:
        raise ScriptError(f"missing field '{where}{key}'")
    value = obj[key]
    # bool is an int subclass; keep the two apart
    if kind is int and isinstance(value, bool):
        raise ScriptError(f"field '{where}{key}' must be int")
    if not isinstance(value, kind):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ScriptError(f"field '{where}{key}' must be {names}")
    return value


def _names(value: Any, where: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ScriptError(f"field '{where}' must be a list of strings")
    return tuple(value)


def parse_document(doc: dict) -> EpisodeScript:
    """Build an EpisodeScript from a decoded document without invariant checks."""
    if not isinstance(doc, dict):
        raise ScriptError("script document must be an object")
    episode_id = _require(doc, "episode_id", str, "")
    tier = _require(doc, "tier", str, "")
    overview = doc.get("story_overview", "")
    if not isinstance(overview, str):
        raise ScriptError("field 'story_overview' must be str")

    groups = _require(doc, "entities", dict, "")
    entities: list[Entity] = []
    for group, raw_list in groups.items():
        if group not in _GROUP_TO_TYPE:
            raise ScriptError(f"unknown entity group 'entities.{group}'")
        if not isinstance(raw_list, list):
            raise ScriptError(f"field 'entities.{group}' must be a list")
        for i, raw in enumerate(raw_list):
            where = f"entities.{group}[{i}]."
            entities.append(Entity(
                name=_require(raw, "name", str, where),
                entity_type=_GROUP_TO_TYPE[group],
                description=_require(raw, "description", str, where),
            ))

    raw_shots = _require(doc, "shots", list, "")
    shots: list[ShotSpec] = []
    for i, raw in enumerate(raw_shots):
        where = f"shots[{i}]."
        schedule = _require(raw, "entity_schedule", dict, where)
        for group in schedule:
            if group not in _GROUP_TO_TYPE:
                raise ScriptError(f"unknown schedule group '{where}entity_schedule.{group}'")
        firsts = raw.get("first_appearances")
        shots.append(ShotSpec(
            index=_require(raw, "index", int, where),
            scene_id=_require(raw, "scene_id", int, where),
            cut=_require(raw, "cut", bool, where),
            action_description=_require(raw, "action_description", str, where),
            characters=_names(schedule.get("characters", []), f"{where}entity_schedule.characters"),
            objects=_names(schedule.get("objects", []), f"{where}entity_schedule.objects"),
            locations=_names(schedule.get("locations", []), f"{where}entity_schedule.locations"),
            first_appearances=None if firsts is None else frozenset(_names(firsts, f"{where}first_appearances")),
        ))
    return EpisodeScript(episode_id, tier, overview, tuple(entities), tuple(shots))


def validate_script(script: EpisodeScript) -> list[str]:
    """Return every invariant violation; an empty list means the script is valid."""
    problems: list[str] = []
    if not script.episode_id:
        problems.append("episode_id must be non-empty")
    if script.tier not in TIERS:
        problems.append(f"unknown tier '{script.tier}'")

    declared: dict[str, list[str]] = {}
    for e in script.entities:
        label = f"{_TYPE_TO_GROUP[e.entity_type]}:{e.name}"
        declared.setdefault(e.name, []).append(label)
        if not e.name.strip():
            problems.append(f"empty entity name in {_TYPE_TO_GROUP[e.entity_type]}")
        if not e.description.strip():
            problems.append(f"entity {e.name} has an empty description")
    for name, labels in declared.items():
        if len(labels) > 1:
            problems.append(f"duplicate entity name {name}: declared as {', '.join(labels)}")

    if not script.shots:
        problems.append("episode has no shots")
        return problems

    for pos, shot in enumerate(script.shots, start=1):
        if shot.index != pos:
            problems.append(f"shot indices must be 1..K contiguous: position {pos} has index {shot.index}")
        for etype in ENTITY_TYPES:
            for name in shot.scheduled(etype):
                ent = script._by_name.get(name)
                if ent is None:
                    problems.append(f"unresolved entity {name} @ shot {shot.index}")
                elif ent.entity_type != etype:
                    problems.append(f"entity {name} scheduled as {etype} @ shot {shot.index} but declared {ent.entity_type}")
        if len(set(shot.schedule)) != len(shot.schedule):
            problems.append(f"duplicate schedule entry @ shot {shot.index}")
        if shot.first_appearances is not None:
            extra = sorted(shot.first_appearances - set(shot.schedule))
            if extra:
                problems.append(f"first_appearances not in schedule @ shot {shot.index}: {', '.join(extra)}")

    first = script.shots[0]
    if not first.cut:
        problems.append("episode must open with a cut")
    for prev, cur in zip(script.shots, script.shots[1:]):
        expected = prev.scene_id + 1 if cur.cut else prev.scene_id
        if cur.scene_id != expected:
            problems.append(
                f"scene_id must increment exactly at cuts: shot {cur.index} has scene_id {cur.scene_id}, expected {expected}"
            )
    return problems


def parse_script(raw: str | bytes | dict) -> EpisodeScript:
    """Parse and validate one script document (JSON text or decoded object)."""
    if isinstance(raw, (str, bytes)):
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScriptError(f"invalid JSON: {exc}") from exc
    else:
        doc = raw
    script = parse_document(doc)
    problems = validate_script(script)
    if problems:
        raise ScriptValidationError(problems)
    return script


def load_script(path: str | Path) -> EpisodeScript:
    return parse_script(Path(path).read_text(encoding="utf-8"))


def script_to_document(script: EpisodeScript) -> dict:
    doc: dict[str, Any] = {
        "episode_id": script.episode_id,
        "tier": script.tier,
        "story_overview": script.story_overview,
        "entities": {g: [] for g in ("characters", "objects", "locations")},
        "shots": [],
    }
    for e in script.entities:
        doc["entities"][_TYPE_TO_GROUP[e.entity_type]].append({"name": e.name, "description": e.description})
    for s in script.shots:
        row: dict[str, Any] = {
            "index": s.index,
            "scene_id": s.scene_id,
            "cut": s.cut,
            "action_description": s.action_description,
            "entity_schedule": {
                "characters": list(s.characters),
                "objects": list(s.objects),
                "locations": list(s.locations),
            },
        }
        if s.first_appearances is not None:
            row["first_appearances"] = sorted(s.first_appearances)
        doc["shots"].append(row)
    return doc


def dataset_files(dataset_dir: str | Path) -> list[Path]:
    return sorted(p for p in Path(dataset_dir).glob("*.json") if p.is_file())


def load_dataset(dataset_dir: str | Path) -> list[EpisodeScript]:
    scripts = [load_script(p) for p in dataset_files(dataset_dir)]
    return sorted(scripts, key=lambda s: s.episode_id)


def select_episodes(scripts: Iterable[EpisodeScript], episodes: Iterable[str] | None = None,
                    tier: str | None = None) -> list[EpisodeScript]:
    wanted = set(episodes) if episodes else None
    return [s for s in scripts
            if (wanted is None or s.episode_id in wanted) and (tier is None or s.tier == tier)]
