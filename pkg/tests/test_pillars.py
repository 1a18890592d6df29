import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossshot.backends import BackendError, Detection, Judge
from crossshot.backends.base import BackendSet
from crossshot.config import EvalConfig
from crossshot.grounding import ABSENT, PRESENT, WEAK, GroundedAppearance
from crossshot.media import VideoSource
from crossshot.pillar1 import (P1_METRICS, ShotQuality, dynamic_degree, episode_quality, failed_shot,
                               motion_smoothness, shot_quality, subject_consistency, temporal_flickering)
from crossshot.pillar2 import (PALETTE, ActionJudgment, FidelityJudgment, aggregate_pillar2, build_action_grid,
                               entity_color)
from crossshot.pillar3 import (CrossShotPool, _shortfall, centroid_similarities, llm_gap_records,
                               pairwise_llm_metrics, scene_llm_metrics, transition_boundary)
from crossshot.script import Entity, parse_script


def _frames(n, seed=0, h=16, w=20):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8) for _ in range(n)]


# pillar 1

class _Emb:
    identity = "emb"

    def embed(self, image):
        v = np.array([float(image.mean()) + 1.0, 1.0])
        return v / np.linalg.norm(v)


class _Flow:
    identity = "flow"

    def __init__(self, mags, fail=False):
        self.mags, self.fail, self.i = list(mags), fail, 0

    def flow(self, a, b):
        m = self.mags[self.i]
        self.i += 1
        field_ = np.zeros((4, 4, 2))
        field_[..., 0] = m
        return field_

    def interpolation_quality(self, p, m, n):
        if self.fail:
            raise BackendError("flow down")
        return 0.5


class _Scalar:
    def __init__(self, v, fail=False):
        self.v, self.fail, self.identity = v, fail, "s"

    def predict(self, image):
        if self.fail:
            raise BackendError("down")
        return self.v


def test_temporal_flickering_brute_force():
    fr = _frames(4)
    maes = [sum(abs(int(x) - int(y)) for x, y in zip(a.ravel(), b.ravel())) / a.size / 255 for a, b in zip(fr, fr[1:])]
    assert temporal_flickering(fr) == pytest.approx(1 - sum(maes) / 3, abs=1e-12)
    assert temporal_flickering(fr[:1]) is None
    assert temporal_flickering([fr[0], fr[0]]) == 1.0


def test_subject_consistency_adjacent_mean():
    fr = _frames(3)
    e = [_Emb().embed(f) for f in fr]
    assert subject_consistency(fr, _Emb()) == pytest.approx((e[0] @ e[1] + e[1] @ e[2]) / 2)
    assert subject_consistency(fr[:1], _Emb()) is None


def test_motion_needs_three_frames_and_dynamic_degree_threshold():
    assert motion_smoothness(_frames(2), _Flow([])) is None
    assert motion_smoothness(_frames(4), _Flow([])) == 0.5
    assert dynamic_degree(_frames(4), _Flow([0.5, 1.0, 3.0]), threshold=1.0) == pytest.approx(1 / 3)


def test_shot_quality_isolates_backend_failures():
    b = BackendSet(None, _Emb(), None, None, _Flow([2, 2, 2], fail=True), _Scalar(0.4), _Scalar(0, fail=True))
    q = shot_quality(1, _frames(4), b, EvalConfig())
    assert q.failed == {"motion_smoothness", "imaging_quality"}
    assert q.values["aesthetic_quality"] == 0.4 and q.values["dynamic_degree"] == 1.0


def test_episode_quality_counts_in_shots():
    shots = [ShotQuality(1, {m: 0.2 for m in P1_METRICS}), ShotQuality(2, {m: None for m in P1_METRICS}),
             failed_shot(3), ShotQuality(4, {m: 0.6 for m in P1_METRICS})]
    out = episode_quality(shots)
    for m in P1_METRICS:
        assert out[m].value == pytest.approx(0.4)
        assert (out[m].n_eval, out[m].n_failed, out[m].n_skipped) == (2, 1, 1)


# pillar 2

def test_palette_and_extended_colors():
    cols = [entity_color(i) for i in range(20)]
    assert cols[:8] == list(PALETTE)
    assert len(set(cols)) == 20


def test_action_grid_layout_and_legend():
    src = VideoSource("ep", 1, _frames(9, h=20, w=30))
    ents = [Entity("Ann", "character", "w"), Entity("Cup", "object", "c"), Entity("Hall", "location", "h")]

    def detect(i, e):
        if e.name == "Cup":
            return []
        return [Detection((2, 2, 10, 12), 0.8), Detection((1, 1, 3, 3), 0.3)]

    grid = build_action_grid(src, ents, detect, EvalConfig())
    assert grid.image.shape == (40, 90, 3)
    assert grid.frame_indices == [1, 2, 4, 5, 7, 9]
    assert any(line.endswith("= Ann [character]") for line in grid.legend)
    assert any(line.endswith("= Cup [object] (not localized)") for line in grid.legend)
    assert not any("Hall" in line for line in grid.legend)
    assert len(grid.boxes) == 6 and all(b[2] == (2, 2, 10, 12) for b in grid.boxes)


def _script():
    return parse_script({
        "episode_id": "ep", "tier": "easy", "story_overview": "",
        "entities": {"characters": [{"name": "A", "description": "a"}, {"name": "B", "description": "b"}],
                     "objects": [], "locations": []},
        "shots": [{"index": 1, "scene_id": 1, "cut": True, "action_description": "x",
                   "entity_schedule": {"characters": ["A", "B"]}},
                  {"index": 2, "scene_id": 1, "cut": False, "action_description": "y",
                   "entity_schedule": {"characters": ["A"]}}],
    })


def _fj(k, name, overall, face=None):
    return FidelityJudgment(k, name, "character", overall, {"face": face, "hair": 0.5, "clothing": 0.5,
                                                             "build": 0.5}, False)


def _ga(k, name, status=PRESENT):
    return GroundedAppearance("ep", k, name, "character", status,
                              crop=None if status == ABSENT else np.zeros((2, 2, 3), np.uint8))


def test_pillar2_two_stage_mean():
    apps = {(1, "A"): _ga(1, "A"), (1, "B"): _ga(1, "B", WEAK), (2, "A"): _ga(2, "A")}
    fid = {(1, "A"): _fj(1, "A", 0.2, 0.4), (1, "B"): _fj(1, "B", 0.6), (2, "A"): _fj(2, "A", 1.0, 0.8)}
    acts = {1: ActionJudgment(1, 0.5, 1.0, 0.5, 0.5, None, 0.5), 2: None}
    out = aggregate_pillar2(_script(), apps, fid, acts)
    # mean of shot means: ((0.2 + 0.6) / 2 + 1.0) / 2
    assert out["intra_face_fidelity"].value == pytest.approx(0.7)
    assert out["intra_face_fidelity"].n_eval == 3
    assert out["intra_face_face"].value == pytest.approx(0.6) and out["intra_face_face"].n_skipped == 1
    assert out["intra_character_presence"].value == pytest.approx(0.75)
    assert out["intra_action_overall"].value == 0.5 and out["intra_action_overall"].n_failed == 1
    assert out["intra_action_object_interaction"].value is None
    assert out["intra_object_fidelity"].value is None and out["intra_object_presence"].n_skipped == 2


def test_pillar2_absent_and_failed_counts():
    apps = {(1, "A"): _ga(1, "A", ABSENT), (1, "B"): None, (2, "A"): _ga(2, "A")}
    out = aggregate_pillar2(_script(), apps, {(2, "A"): None}, {1: None, 2: None})
    mv = out["intra_face_fidelity"]
    assert mv.value is None and mv.n_failed == 2 and mv.n_skipped == 1


def test_fidelity_judgment_rejects_foreign_criteria():
    j = _fj(1, "A", 0.5)
    with pytest.raises(KeyError):
        j.criterion("shape")
    with pytest.raises(ValueError):
        FidelityJudgment(1, "A", "character", 0.5, {"shape": 0.1}, False)


# pillar 3

def _pool(name, shots, etype="character", gated=(), failed=(), seed=0):
    rng = np.random.default_rng(seed)
    p = CrossShotPool(name, etype, gate_skipped=list(gated), failed=list(failed))
    for k in shots:
        img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        p.admitted.append(GroundedAppearance("ep", k, name, etype, PRESENT, crop=img))
        v = rng.normal(size=5)
        p.embeddings[k] = v / np.linalg.norm(v)
    return centroid_similarities(p)


@pytest.mark.parametrize("size,gated,failed,want", [
    (3, 0, 0, (0, 0)), (2, 1, 0, (0, 1)), (2, 0, 1, (1, 0)), (1, 1, 1, (1, 1)), (0, 2, 1, (1, 1)), (0, 1, 0, (0, 0)),
])
def test_shortfall_attribution(size, gated, failed, want):
    p = CrossShotPool("E", "character", gate_skipped=list(range(10, 10 + gated)),
                      failed=list(range(20, 20 + failed)))
    p.admitted = [GroundedAppearance("ep", k, "E", "character", PRESENT, crop=np.zeros((1, 1, 3), np.uint8))
                  for k in range(1, size + 1)]
    assert _shortfall(p) == want


class _ScriptedJudge:
    identity = "judge"

    def __init__(self, fail_keys=()):
        self.fail_keys, self.keys = set(fail_keys), []

    def complete(self, request):
        self.keys.append(request.key)
        if request.key in self.fail_keys:
            raise BackendError("down")
        crit = {"character": ["face", "hair", "clothing", "build"],
                "location": ["layout", "color_mood", "landmarks", "perspective"]}[request.entity_type]
        return json.dumps({"same": True, "similarity": 8, "criteria": {c: 6 for c in crit}})


def test_anchor_vs_each_judging_and_counts():
    a = _pool("A", [1, 2, 4], gated=[5])
    b = _pool("B", [3], failed=[6])
    ents = {"A": Entity("A", "character", "a"), "B": Entity("B", "character", "b")}
    judge = _ScriptedJudge({f"pair/ep/A/{a.anchor}/{[k for k in a.shots if k != a.anchor][0]}"})
    metrics, js = pairwise_llm_metrics([a, b], ents, Judge(judge), "ep", "character")
    assert len(judge.keys) == 2 and all(k.startswith(f"pair/ep/A/{a.anchor}/") for k in judge.keys)
    mv = metrics["llm_face_accuracy"]
    # A: 1 judged + 1 judge failure + 1 gated; B: 1 embedding failure shortfall
    assert (mv.value, mv.n_eval, mv.n_failed, mv.n_gated) == (1.0, 1, 2, 1)
    assert metrics["llm_face_mean_score"].value == pytest.approx(0.8)
    gaps = llm_gap_records(js, {"A": a}, "ep")
    assert len(gaps) == 1 and gaps[0].signal == "llm"


def test_scene_location_counting():
    src = {k: VideoSource("ep", k, _frames(3, seed=k)) for k in range(1, 6)}
    ents = {n: Entity(n, "location", n) for n in ("L1", "L2", "L3", "L4")}
    l1 = _pool("L1", [1, 2, 3], "location")
    l2 = _pool("L2", [4], "location", failed=[5])        # would have had a pair: failed
    l3 = _pool("L3", [4], "location", gated=[5])         # lost to the gate
    l4 = _pool("L4", [2, 5], "location")
    judge = _ScriptedJudge({f"scene/ep/L4/{l4.anchor}/{[k for k in l4.shots if k != l4.anchor][0]}"})
    metrics, locs = scene_llm_metrics([l1, l2, l3, l4], ents, src.get, Judge(judge), EvalConfig(), "ep")
    mv = metrics["llm_scene_accuracy"]
    assert (mv.value, mv.n_eval, mv.n_failed, mv.n_gated, mv.n_skipped) == (1.0, 1, 2, 1, 1)
    assert len(locs[0].comparisons) == 2
    # each scene request carries the two sharpest frames of both shots
    assert all(k.startswith("scene/ep/") for k in judge.keys)


def test_transition_boundary_only_on_continuations():
    s = _script()
    srcs = {1: VideoSource("ep", 1, _frames(3, 1)), 2: VideoSource("ep", 2, _frames(3, 2))}
    mv, recs = transition_boundary(s, srcs.get, _Emb())
    e1, e2 = _Emb().embed(srcs[1].frame(3)), _Emb().embed(srcs[2].frame(1))
    assert [r.shot for r in recs] == [2]
    assert mv.value == pytest.approx(float(e1 @ e2)) and mv.n_eval == 1
    mv, _ = transition_boundary(s, {1: srcs[1]}.get, _Emb())
    assert mv.value is None and mv.n_failed == 1


@settings(max_examples=40)
@given(st.lists(st.integers(1, 30), min_size=2, max_size=8, unique=True), st.integers(0, 1000))
def test_anchor_is_argmax_of_centroid_similarity(shots, seed):
    p = _pool("E", sorted(shots), seed=seed)
    best = max(p.sims.values())
    assert p.sims[p.anchor] >= best - 1e-12
    assert all(-1 - 1e-12 <= v <= 1 + 1e-12 for v in p.sims.values())
    m = np.mean([p.embeddings[k] for k in p.shots], axis=0)
    for k in p.shots:
        assert p.sims[k] == pytest.approx(float(p.embeddings[k] @ m / np.linalg.norm(m)), abs=1e-12)
    assert math.isclose(p.diagnostics["mean"], sum(p.sims.values()) / len(p.sims))
