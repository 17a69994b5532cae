"""Shared label conventions: parse classes, pose keypoints, garment categories.

The parse label set is fixed and closed: every parsing map in a dataset must
only use the ids below. The set is the smallest one that lets the mask engine
distinguish every region it reasons about (garments, adjoining skin, the
hands/feet that must stay visible, and the identity regions that must never
be inpainted).
"""

from __future__ import annotations

PARSE_LABELS: dict[str, int] = {
    "background": 0,
    "hair": 1,
    "face": 2,
    "neck": 3,
    "torso_skin": 4,
    "upper_clothes": 5,
    "lower_clothes": 6,
    "dress": 7,
    "arms": 8,
    "hands": 9,
    "legs": 10,
    "feet": 11,
}

LABEL_NAMES: dict[int, str] = {v: k for k, v in PARSE_LABELS.items()}
LABEL_IDS = frozenset(PARSE_LABELS.values())

# Regions that are always retained (kept outside every inpainting mask).
HAND_FOOT_CLASSES = ("hands", "feet")
HAND_FOOT_IDS = tuple(PARSE_LABELS[name] for name in HAND_FOOT_CLASSES)

CATEGORIES = ("upper_body", "lower_body", "dresses")

# Garment class per category, and the skin classes the fine mask absorbs
# (skin exposed by the current garment may be covered by the next one).
GARMENT_CLASS: dict[str, str] = {
    "upper_body": "upper_clothes",
    "lower_body": "lower_clothes",
    "dresses": "dress",
}
FINE_SKIN_CLASSES: dict[str, tuple[str, ...]] = {
    "upper_body": ("arms", "torso_skin"),
    "lower_body": ("legs",),
    "dresses": ("arms", "legs", "torso_skin"),
}

# 14-point pose convention, (x, y, confidence) per point, pixel units.
KEYPOINT_NAMES = (
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "left_hip",
    "right_knee",
    "left_knee",
    "right_ankle",
    "left_ankle",
)
KEYPOINT_INDEX: dict[str, int] = {name: i for i, name in enumerate(KEYPOINT_NAMES)}
