import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossshot.script import (ScriptError, ScriptValidationError, load_dataset, parse_document, parse_script,
                              script_to_document, select_episodes, validate_script)
from crossshot.stats import (dataset_stats, intervening_gaps, longest_run, new_entity_curve, compute_episode_stats)
from crossshot.synthetic import random_document, write_dataset


def _doc(**over):
    doc = {
        "episode_id": "ep1", "tier": "easy", "story_overview": "two friends",
        "entities": {"characters": [{"name": "Ann", "description": "tall woman"}],
                     "objects": [{"name": "Cup", "description": "red cup"}],
                     "locations": [{"name": "Hall", "description": "stone hall"}]},
        "shots": [
            {"index": 1, "scene_id": 1, "cut": True, "action_description": "Ann enters",
             "entity_schedule": {"characters": ["Ann"], "locations": ["Hall"]}},
            {"index": 2, "scene_id": 1, "cut": False, "action_description": "Ann lifts the cup",
             "entity_schedule": {"characters": ["Ann"], "objects": ["Cup"], "locations": ["Hall"]}},
            {"index": 3, "scene_id": 2, "cut": True, "action_description": "Ann sits",
             "entity_schedule": {"characters": ["Ann"]}},
        ],
    }
    doc.update(over)
    return doc


def test_valid_document_parses():
    s = parse_script(_doc())
    assert s.num_shots == 3
    assert s.entity("Cup").entity_type == "object"
    assert s.shot(2).schedule == ("Ann", "Cup", "Hall")
    assert s.first_appearance_map() == {1: frozenset({"Ann", "Hall"}), 2: frozenset({"Cup"}), 3: frozenset()}


def _violations(doc):
    with pytest.raises(ScriptValidationError) as exc:
        parse_script(doc)
    return exc.value.violations


def test_unresolved_and_mistyped_entities():
    doc = _doc()
    doc["shots"][0]["entity_schedule"]["characters"] = ["Ann", "Zed"]
    doc["shots"][1]["entity_schedule"]["objects"] = ["Ann"]
    v = _violations(doc)
    assert any("unresolved entity Zed @ shot 1" in x for x in v)
    assert any("entity Ann scheduled as object" in x for x in v)


def test_cut_and_scene_rules():
    doc = _doc()
    doc["shots"][0]["cut"] = False
    doc["shots"][2]["scene_id"] = 1
    v = _violations(doc)
    assert any("open with a cut" in x for x in v)
    assert any("scene_id must increment exactly at cuts" in x for x in v)


def test_index_and_duplicate_rules():
    doc = _doc()
    doc["shots"][2]["index"] = 5
    doc["entities"]["objects"].append({"name": "Ann", "description": "a doll"})
    v = _violations(doc)
    assert any("contiguous" in x for x in v)
    assert any("duplicate entity name Ann" in x for x in v)


def test_explicit_first_appearances_must_be_scheduled():
    doc = _doc()
    doc["shots"][1]["first_appearances"] = ["Cup", "Hall"]
    s = parse_script(doc)
    assert s.first_appearance_map()[2] == frozenset({"Cup", "Hall"})
    doc["shots"][2]["first_appearances"] = ["Cup"]
    assert any("first_appearances not in schedule" in x for x in _violations(doc))


@pytest.mark.parametrize("mutate,needle", [
    (lambda d: d.pop("shots"), "shots"),
    (lambda d: d["entities"].update(props=[]), "unknown entity group"),
    (lambda d: d["shots"][0].update(cut="yes"), "cut"),
])
def test_schema_errors(mutate, needle):
    doc = _doc()
    mutate(doc)
    with pytest.raises(ScriptError, match=needle):
        parse_script(doc)


def test_invalid_json_text():
    with pytest.raises(ScriptError, match="invalid JSON"):
        parse_script("{nope")


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_random_documents_round_trip(seed, explicit):
    doc = random_document(np.random.default_rng(seed), "ep", explicit_first=explicit)
    s = parse_script(doc)
    assert validate_script(s) == []
    again = parse_script(json.dumps(script_to_document(s)))
    assert again == s
    # first appearances partition the scheduled names
    firsts = s.first_appearance_map()
    seen = [n for k in sorted(firsts) for n in firsts[k]]
    assert len(seen) == len(set(seen)) == len({n for sh in s.shots for n in sh.schedule})


def test_dataset_loading_and_filters(tmp_path):
    docs = [_doc(episode_id="b", tier="hard"), _doc(episode_id="a"), _doc(episode_id="c", tier="medium")]
    write_dataset(docs, tmp_path)
    scripts = load_dataset(tmp_path)
    assert [s.episode_id for s in scripts] == ["a", "b", "c"]
    assert [s.episode_id for s in select_episodes(scripts, tier="hard")] == ["b"]
    assert [s.episode_id for s in select_episodes(scripts, ["a", "c"], "easy")] == ["a"]


# stats helpers

def test_gap_and_run_helpers():
    assert intervening_gaps([1, 2, 5, 9]) == [0, 2, 3]
    assert longest_run([1, 2, 3, 5, 6]) == 3
    assert longest_run([]) == 0


def test_small_dataset_stats_by_hand():
    s = parse_script(_doc())
    st_ = compute_episode_stats(s)
    assert st_.total_appearances == {"character": 3, "object": 1, "location": 2}
    assert st_.reappearances == {"character": 2, "object": 0, "location": 1}
    assert st_.chain_lengths == [2, 1]
    assert st_.max_gap == {"Ann": 0, "Hall": 0}
    assert (st_.within_episode_cuts, st_.carry_over_cuts) == (1, 1)
    assert st_.new_entity_curve == [2, 1, 0]
    assert (st_.memory_only_shots, st_.registry_shots) == (1, 2)
    rep = dataset_stats([s])
    assert rep["all.reappearances.total"] == 3
    assert rep["all.reappearance_rate.character"] == pytest.approx(2 / 3)
    assert rep["tier.easy.shots"] == 3 and "tier.hard.shots" not in rep
    assert new_entity_curve([st_]) == [(1, 2.0, 1), (2, 1.0, 1), (3, 0.0, 1)]
