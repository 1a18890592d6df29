"""Synthetic datasets: random scripts, a benchmark-shaped script set, and a
fully scripted end-to-end evaluation fixture (videos + fake backend tables).

The end-to-end fixture also writes ``truth.json``: per-shot frame
fingerprints, per-candidate crop fingerprints and crop sharpness, and
adjacent-frame mean absolute differences. These are the only pixel-derived
quantities an independent recomputation needs besides the tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends.fakes import FAIL, FakeTables
from .config import CRITERIA, EvalConfig
from .media import crop_with_padding, even_indices, fingerprint, sharpness, write_png_sequence
from .script import TIERS, EpisodeScript, parse_document


# random scripts for property tests

def random_document(rng: np.random.Generator, episode_id: str = "ep", max_shots: int = 12,
                    max_entities: int = 6, explicit_first: bool = False) -> dict:
    k_total = int(rng.integers(1, max_shots + 1))
    n_ent = int(rng.integers(1, max_entities + 1))
    groups = {"characters": [], "objects": [], "locations": []}
    names = []
    for i in range(n_ent):
        group = ("characters", "objects", "locations")[int(rng.integers(0, 3))]
        name = f"E{i}"
        groups[group].append({"name": name, "description": f"entity {i}"})
        names.append((name, group))
    shots = []
    scene = 0
    seen: set[str] = set()
    for k in range(1, k_total + 1):
        cut = k == 1 or bool(rng.random() < 0.35)
        scene += 1 if cut else 0
        sched = {"characters": [], "objects": [], "locations": []}
        for name, group in names:
            if rng.random() < 0.45:
                sched[group].append(name)
        shot = {"index": k, "scene_id": scene, "cut": cut, "action_description": f"action {k}",
                "entity_schedule": sched}
        if explicit_first:
            scheduled = [n for g in sched.values() for n in g]
            shot["first_appearances"] = [n for n in scheduled if n not in seen]
            seen.update(scheduled)
        shots.append(shot)
    return {"episode_id": episode_id, "tier": TIERS[int(rng.integers(0, 3))], "story_overview": "synthetic",
            "entities": groups, "shots": shots}


def random_script(rng: np.random.Generator, episode_id: str = "ep", max_shots: int = 12, **kw) -> EpisodeScript:
    return parse_document(random_document(rng, episode_id, max_shots, **kw))


# benchmark-shaped dataset

BENCHMARK_SHAPE = {
    "tiers": {"easy": (80, 873), "medium": (40, 618), "hard": (20, 1000)},
    "registry": 3718,
    "cuts": 1136,
    # type -> (appearances, unique scheduled entities)
    "types": {"character": (4989, 984), "location": (2436, 648), "object": (4020, 1961)},
}


def _split(total: int, weights: list[float]) -> list[int]:
    """Largest-remainder apportionment of ``total`` proportional to ``weights``."""
    s = sum(weights)
    raw = [total * w / s for w in weights]
    base = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[: total - sum(base)]:
        base[i] += 1
    return base


def benchmark_like_documents(seed: int = 0, shape: dict | None = None) -> list[dict]:
    """Scripts whose dataset-level totals equal ``shape`` exactly."""
    shape = shape or BENCHMARK_SHAPE
    rng = np.random.default_rng(seed)
    lengths: list[tuple[str, int]] = []
    for tier, (n_eps, n_shots) in shape["tiers"].items():
        per = _split(n_shots, [1.0] * n_eps)
        lengths.extend((tier, k) for k in per)
    n_eps = len(lengths)
    total_shots = sum(k for _, k in lengths)
    # every episode opens with a cut; spread the rest by length
    extra_cuts = _split(shape["cuts"] - n_eps, [k - 1 for _, k in lengths])
    type_split = {}
    for etype, (apps, uniq) in shape["types"].items():
        u = _split(uniq, [k for _, k in lengths])
        a = _split(apps - uniq, [k for _, k in lengths])
        type_split[etype] = (u, a)
    scheduled_unique = sum(u for _, u in shape["types"].values())
    unscheduled = _split(shape["registry"] - scheduled_unique, [1.0] * n_eps)
    group_of = {"character": "characters", "object": "objects", "location": "locations"}

    docs = []
    for e, (tier, k_total) in enumerate(lengths):
        cut_shots = {1} | {int(x) + 2 for x in rng.choice(k_total - 1, size=extra_cuts[e], replace=False)}
        groups = {"characters": [], "objects": [], "locations": []}
        sched = {k: {"characters": [], "objects": [], "locations": []} for k in range(1, k_total + 1)}
        for etype, (u_list, extra_list) in type_split.items():
            u, extra = u_list[e], extra_list[e]
            if u == 0 and extra:
                raise ValueError("cannot place re-appearances without entities")
            if extra > u * (k_total - 1):
                raise ValueError("episode too short for requested appearances")
            names = [f"{etype[:3]}{e:03d}_{i}" for i in range(u)]
            g = group_of[etype]
            for n in names:
                groups[g].append({"name": n, "description": f"{etype} {n}"})
            occupied: set[tuple[str, int]] = set()
            for n in names:
                k = int(rng.integers(1, k_total + 1))
                occupied.add((n, k))
            free = [(n, k) for n in names for k in range(1, k_total + 1) if (n, k) not in occupied]
            for idx in rng.choice(len(free), size=extra, replace=False):
                occupied.add(free[int(idx)])
            for n, k in sorted(occupied, key=lambda x: (x[1], x[0])):
                sched[k][g].append(n)
        for i in range(unscheduled[e]):
            groups["objects"].append({"name": f"spare{e:03d}_{i}", "description": "unused prop"})
        shots, scene = [], 0
        for k in range(1, k_total + 1):
            cut = k in cut_shots
            scene += int(cut)
            shots.append({"index": k, "scene_id": scene, "cut": cut, "action_description": f"beat {k}",
                          "entity_schedule": sched[k]})
        docs.append({"episode_id": f"bench{e:03d}", "tier": tier, "story_overview": "benchmark-shaped",
                     "entities": groups, "shots": shots})
    assert sum(len(d["shots"]) for d in docs) == total_shots
    return docs


def write_dataset(docs: list[dict], directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for d in docs:
        (directory / f"{d['episode_id']}.json").write_text(json.dumps(d, indent=1, sort_keys=True), encoding="utf-8")
    return directory


# end-to-end fixture

E2E_EPISODES = [
    {
        "episode_id": "ep001", "tier": "easy",
        "entities": {"characters": [("Ann", "a tall woman with short red hair in a green raincoat"),
                                    ("Bo", "a small boy with curly black hair and a yellow sweater")],
                     "objects": [("Lamp", "a brass oil lamp with a cracked glass chimney")],
                     "locations": [("Kitchen", "a narrow farmhouse kitchen with a blue tiled wall")]},
        "shots": [(True, ["Ann", "Bo", "Kitchen"], "Ann waves at Bo", 7),
                  (False, ["Ann", "Lamp", "Kitchen"], "Ann lights the lamp", 8),
                  (False, ["Ann", "Bo", "Lamp", "Kitchen"], "Bo points at the lamp", 2),
                  (True, ["Ann", "Bo", "Lamp", "Kitchen"], "Ann carries the lamp past Bo", 6)],
    },
    {
        "episode_id": "ep002", "tier": "medium",
        "entities": {"characters": [("Cy", "an old man with a white beard and a brown flat cap")],
                     "objects": [("Cup", "a chipped white enamel cup with a red rim")],
                     "locations": [("Hall", "a dim stone hall with tall arched windows")]},
        "shots": [(True, ["Cy", "Cup", "Hall"], "Cy drinks from the cup", 6),
                  (True, ["Cy", "Hall"], "Cy walks toward the door", 7),
                  (False, ["Cy", "Cup", "Hall"], "Cy sets the cup down", 8)],
    },
    {
        "episode_id": "ep003", "tier": "hard",
        "entities": {"characters": [("Dee", "a young woman with a silver braid and a leather jacket"),
                                    ("Eli", "a bald man with round glasses and a grey suit")],
                     "objects": [("Key", "a large iron key with a ring-shaped bow")],
                     "locations": [("Attic", "a dusty attic with slanted beams and a round window"),
                                   ("Yard", "a muddy back yard with a wooden fence")]},
        "shots": [(True, ["Dee", "Eli", "Attic"], "Dee greets Eli", 7),
                  (False, ["Dee", "Key", "Attic"], "Dee picks up the key", 6),
                  (True, ["Eli", "Key", "Yard"], "Eli turns the key in the gate", 8),
                  (False, ["Dee", "Eli", "Yard"], "Dee runs to Eli", 6),
                  (True, ["Dee", "Eli", "Key", "Attic"], "Eli hands Dee the key", 7)],
    },
]

# (episode, shot, entity) -> special case; everything else is "present"
E2E_CASES = {
    ("ep001", 2, "Lamp"): "weak",
    ("ep001", 4, "Bo"): "absent",
    ("ep001", 3, "Bo"): "bypass",          # fidelity judge errors -> phi None
    ("ep002", 3, "Cup"): "embed_fail",
    ("ep003", 1, "Attic"): "garbled",       # fidelity judge returns free text
    ("ep003", 2, "Dee"): "partial",         # one sampled frame fails to ground
    ("ep003", 4, "Eli"): "gated",           # fidelity below the gate
    ("ep003", 5, "Key"): "ground_fail",     # every sampled frame fails
}
E2E_ACTION_FAIL = {("ep002", 2)}
E2E_AO_NONE = {("ep001", 1), ("ep003", 4)}
E2E_PAIR_FAIL = {("ep003", "Dee", 4)}       # any anchor vs this comparison shot fails
E2E_SCENE_FAIL = {("ep003", "Attic", 2)}
E2E_IMAGING_FAIL = {("ep002", 2)}           # one frame of this shot fails the imaging predictor


@dataclass
class E2EFixture:
    root: Path
    dataset: Path
    videos: Path
    tables_path: Path
    truth_path: Path


def _frames(rng: np.random.Generator, n: int, h: int = 48, w: int = 64) -> list[np.ndarray]:
    tex = rng.integers(0, 256, size=(h, w, 3)).astype(np.float64)
    base = rng.uniform(60, 190, size=3)
    out = []
    for i in range(n):
        amp = rng.uniform(0.15, 0.9)
        noise = rng.normal(0, 6, size=(h, w, 3))
        f = base + amp * (tex - 128) + noise + i
        out.append(np.clip(np.rint(f), 0, 255).astype(np.uint8))
    return out


def _box(rng: np.random.Generator, w: int, h: int, big: bool) -> list[float]:
    if big:
        return [float(rng.integers(0, 4)), float(rng.integers(0, 4)), float(w - rng.integers(0, 4)),
                float(h - rng.integers(0, 4))]
    bw, bh = int(rng.integers(10, 34)), int(rng.integers(10, 30))
    x1, y1 = int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh))
    return [float(x1), float(y1), float(x1 + bw), float(y1 + bh)]


def _score(rng: np.random.Generator, lo: int = 1, hi: int = 10) -> int:
    return int(rng.integers(lo, hi + 1))


def _crit(rng: np.random.Generator, etype: str, allow_null: bool = False) -> dict:
    out = {}
    for c in CRITERIA[etype]:
        out[c] = None if allow_null and rng.random() < 0.15 else _score(rng, 3, 10)
    return out


def build_e2e_fixture(root: str | Path, seed: int = 7, cfg: EvalConfig | None = None) -> E2EFixture:
    """Write dataset/, videos/ (png sequences), videos/fake_tables.json and truth.json."""
    cfg = cfg or EvalConfig()
    root = Path(root)
    rng = np.random.default_rng(seed)
    dataset, videos = root / "dataset", root / "videos"
    tables = FakeTables()
    truth: dict = {"episodes": {}}
    dim = 16
    docs = []
    for ep_def in E2E_EPISODES:
        ep = ep_def["episode_id"]
        groups = {g: [{"name": n, "description": d} for n, d in ep_def["entities"][g]]
                  for g in ("characters", "objects", "locations")}
        etype = {n: t for g, t in (("characters", "character"), ("objects", "object"), ("locations", "location"))
                 for n, _ in ep_def["entities"][g]}
        desc = {n: d for g in ep_def["entities"].values() for n, d in g}
        ent_base = {n: rng.normal(size=dim) for n in etype}
        shots_doc, scene = [], 0
        ep_truth = {"shots": {}}
        present_shots: dict[str, list[int]] = {}
        prev_last = None
        for k, (cut, names, action, n_frames) in enumerate(ep_def["shots"], start=1):
            scene += int(cut)
            sched = {"characters": [n for n in names if etype[n] == "character"],
                     "objects": [n for n in names if etype[n] == "object"],
                     "locations": [n for n in names if etype[n] == "location"]}
            shots_doc.append({"index": k, "scene_id": scene, "cut": cut, "action_description": action,
                              "entity_schedule": sched})
            frames = _frames(rng, n_frames)
            write_png_sequence(frames, videos / ep / f"shot_{k}")
            fps = [fingerprint(f) for f in frames]
            h, w = frames[0].shape[:2]
            shot_base = rng.normal(size=dim)
            for i, fp in enumerate(fps):
                v = shot_base + 0.3 * rng.normal(size=dim)
                if i == 0 and prev_last is not None and not cut:
                    v = prev_last + 0.5 * rng.normal(size=dim)
                tables.embedding[fp] = [round(float(x), 6) for x in v]
                tables.aesthetic[fp] = round(float(rng.uniform(0.3, 0.8)), 4)
                tables.imaging[fp] = round(float(rng.uniform(40, 80)), 3)
            prev_last = np.asarray(tables.embedding[fps[-1]])
            if (ep, k) in E2E_IMAGING_FAIL:
                tables.imaging[fps[1]] = FAIL
            for a, b in zip(fps, fps[1:]):
                tables.flow[f"{a}|{b}"] = round(float(rng.uniform(0.2, 2.0)), 4)
            for a, b, c in zip(fps, fps[1:], fps[2:]):
                tables.interp[f"{a}|{b}|{c}"] = round(float(rng.uniform(0.85, 0.99)), 4)
            mad = [float(np.abs(x.astype(np.float64) - y.astype(np.float64)).mean()) for x, y in zip(frames, frames[1:])]
            shot_truth = {"num_frames": n_frames, "frame_fps": fps, "adjacent_mad": mad, "size": [w, h],
                          "candidates": {}}

            sampled = sorted(set(even_indices(n_frames, cfg.n_frame)))
            for name in names:
                case = E2E_CASES.get((ep, k, name), "present")
                query = desc[name]
                if case == "absent":
                    continue
                if case == "ground_fail":
                    for i in sampled:
                        tables.grounding[f"{fps[i - 1]}|{query}"] = FAIL
                    continue
                chosen = [sampled[int(j)] for j in rng.choice(len(sampled), size=min(2, len(sampled)), replace=False)]
                if case == "partial":
                    failing = [i for i in sampled if i not in chosen][:1] or [chosen.pop()]
                    tables.grounding[f"{fps[failing[0]-1]}|{query}"] = FAIL
                for i in chosen:
                    rows = []
                    for _ in range(int(rng.integers(1, 3))):
                        box = _box(rng, w, h, etype[name] == "location")
                        conf = round(float(rng.uniform(0.3, 0.95)), 3)
                        rows.append(box + [conf])
                        crop = crop_with_padding(frames[i - 1], box, cfg.crop_padding, cfg.crop_size)
                        cfp = fingerprint(crop)
                        shot_truth["candidates"][f"{fps[i - 1]}|{json.dumps(box)}"] = {
                            "crop_fp": cfp, "lapvar": sharpness(crop)}
                        clip = rng.uniform(0.05, 0.19) if case == "weak" else rng.uniform(0.21, 0.45)
                        tables.clip[f"{cfp}|{query}"] = round(float(clip), 5)
                        if case == "embed_fail":
                            tables.embedding[cfp] = FAIL
                        else:
                            v = ent_base[name] + 0.6 * rng.normal(size=dim)
                            tables.embedding[cfp] = [round(float(x), 6) for x in v]
                    # a below-threshold box the backend must filter out
                    if rng.random() < 0.3:
                        rows.append(_box(rng, w, h, False) + [0.1])
                    tables.grounding[f"{fps[i - 1]}|{query}"] = rows
                if case != "weak":
                    present_shots.setdefault(name, []).append(k)
                # fidelity verdicts
                key = f"fidelity/{ep}/{k}/{name}"
                if case == "bypass":
                    tables.judge[key] = FAIL
                elif case == "garbled":
                    tables.judge[key] = "The crop looks about right to me."
                else:
                    overall = _score(rng, 2, 4) if case == "gated" else _score(rng, 5, 10)
                    tables.judge[key] = {"overall": overall, "criteria": _crit(rng, etype[name], allow_null=True)}
            # action verdict
            akey = f"action/{ep}/{k}"
            if (ep, k) in E2E_ACTION_FAIL:
                tables.judge[akey] = FAIL
            else:
                tables.judge[akey] = {
                    "overall": _score(rng), "depicted": bool(rng.random() < 0.7), "subject_identity": _score(rng),
                    "subject_action": _score(rng),
                    "object_interaction": None if (ep, k) in E2E_AO_NONE else _score(rng),
                    "motion_quality": _score(rng)}
            ep_truth["shots"][str(k)] = shot_truth
        # pair and scene verdicts for every possible (anchor, comparison) ordering
        for name, shots in present_shots.items():
            t = etype[name]
            for anchor in shots:
                for comp in shots:
                    if anchor == comp:
                        continue
                    if t == "location":
                        key = f"scene/{ep}/{name}/{anchor}/{comp}"
                        if (ep, name, comp) in E2E_SCENE_FAIL:
                            tables.judge[key] = FAIL
                            continue
                        verdict = {"frame_descriptions": ["a room"] * 4, "same": bool(rng.random() < 0.75),
                                   "similarity": _score(rng, 3, 10), "criteria": _crit(rng, t, allow_null=True)}
                    else:
                        key = f"pair/{ep}/{name}/{anchor}/{comp}"
                        if (ep, name, comp) in E2E_PAIR_FAIL:
                            tables.judge[key] = FAIL
                            continue
                        verdict = {"same": bool(rng.random() < 0.7), "similarity": _score(rng, 3, 10),
                                   "criteria": _crit(rng, t, allow_null=True)}
                    tables.judge[key] = verdict
        truth["episodes"][ep] = ep_truth
        docs.append({"episode_id": ep, "tier": ep_def["tier"], "story_overview": f"fixture {ep}",
                     "entities": groups, "shots": shots_doc})
    write_dataset(docs, dataset)
    tables_path = videos / "fake_tables.json"
    tables.save(tables_path)
    truth_path = root / "truth.json"
    truth_path.write_text(json.dumps(truth, sort_keys=True), encoding="utf-8")
    return E2EFixture(root, dataset, videos, tables_path, truth_path)
