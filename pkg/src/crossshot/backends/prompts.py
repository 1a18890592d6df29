"""Judge prompt templates. Any wording change must bump TEMPLATE_VERSION."""

from __future__ import annotations

import hashlib

from ..config import CRITERIA

TEMPLATE_VERSION = "2026.1"
VERDICT_SCHEMA_VERSION = "1"

_CRITERIA_HELP = {
    "face": "facial structure, skin tone, age, distinguishing facial features",
    "hair": "hair color, length, style",
    "clothing": "garments, colors, accessories",
    "build": "body type, height, posture",
    "shape": "overall silhouette and geometry",
    "color_texture": "colors, materials, surface texture",
    "proportions": "relative size of parts and scale",
    "details": "markings, small parts, distinctive features",
    "layout": "spatial arrangement of the place",
    "color_mood": "palette, lighting, atmosphere",
    "landmarks": "distinctive fixtures, furniture, architecture",
    "perspective": "plausibility of the viewpoint for this place",
}

FIDELITY = """You are grading whether an image crop depicts a specific {entity_type}.

Registry description:
{description}
{confidence_note}
Score each criterion from 1 (contradicts the description) to 10 (matches it exactly):
{criteria}
Give an overall fidelity score on the same scale.

Return ONLY JSON: {{"overall": <1-10>, "criteria": {{{criteria_keys}}}}}
Use null for a criterion that cannot be judged from the crop."""

ACTION = """The image is a 2x3 grid of frames from one video shot, in reading order.
Colored boxes label entities:
{legend}

Prompted action:
{action}

Judge the shot against the prompted action. Scores are 1 (wrong) to 10 (correct).
- overall: overall action fidelity
- depicted: true if the action is depicted at all, else false
- subject_identity: are the labeled boxes the right characters for the action?
- subject_action: does the named subject perform the verb?
- object_interaction: is the referenced object used correctly? null if the action names no object
- motion_quality: is motion natural across frames?

Return ONLY JSON with keys overall, depicted, subject_identity, subject_action, object_interaction, motion_quality."""

PAIR = """Two crops are shown. Both are meant to depict the same {entity_type}:
{description}

Decide whether they show the SAME {entity_type}. Then score similarity from 1 (clearly different)
to 10 (identical) overall and on each criterion:
{criteria}

Return ONLY JSON: {{"same": true|false, "similarity": <1-10>, "criteria": {{{criteria_keys}}}}}"""

SCENE = """Up to four full frames are shown: the first group comes from one shot, the second group
from another shot. Both are meant to depict this location:
{description}

Camera angle, distance, framing, zoom and partial views may differ between shots; these are NOT
inconsistencies. Ignore foreground characters and focus on the place itself.
First describe the location seen in each frame in one sentence. Then decide whether both groups
show the SAME location, and score similarity from 1 (different place) to 10 (same place):
{criteria}

Return ONLY JSON: {{"frame_descriptions": [...], "same": true|false, "similarity": <1-10>,
"criteria": {{{criteria_keys}}}}}"""

TEMPLATES = {"fidelity": FIDELITY, "action": ACTION, "pair": PAIR, "scene": SCENE}


def template_fingerprints() -> dict[str, str]:
    return {name: hashlib.sha256(f"{TEMPLATE_VERSION}\n{text}".encode()).hexdigest()[:32]
            for name, text in sorted(TEMPLATES.items())}


def _criteria_lines(entity_type: str) -> tuple[str, str]:
    crits = CRITERIA[entity_type]
    lines = "\n".join(f"- {c}: {_CRITERIA_HELP[c]}" for c in crits)
    keys = ", ".join(f'"{c}": <1-10>' for c in crits)
    return lines, keys


def fidelity_prompt(description: str, entity_type: str, status: str) -> str:
    lines, keys = _criteria_lines(entity_type)
    note = ("\nNote: the detector was not confident this crop shows the entity.\n"
            if status == "weak" else "")
    return FIDELITY.format(entity_type=entity_type, description=description, confidence_note=note,
                           criteria=lines, criteria_keys=keys)


def action_prompt(action: str, legend: list[str]) -> str:
    return ACTION.format(action=action, legend="\n".join(f"- {row}" for row in legend) or "- (none)")


def pair_prompt(description: str, entity_type: str) -> str:
    lines, keys = _criteria_lines(entity_type)
    return PAIR.format(entity_type=entity_type, description=description, criteria=lines, criteria_keys=keys)


def scene_prompt(description: str) -> str:
    lines, keys = _criteria_lines("location")
    return SCENE.format(description=description, criteria=lines, criteria_keys=keys)
