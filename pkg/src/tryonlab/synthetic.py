"""Procedural dataset generator: blocky person silhouettes with exact parse maps.

Every sample is drawn from a parameterized template (64 x 48 base grid,
integer-scalable), so parse maps, keypoints, and the visual ground truth
captions are known by construction. That makes the whole pipeline testable
with zero external data: fine/coarse masks have hand-computable shapes, the
mock LMM can answer from the recorded ground truth, and paired entries give
codec-exact reconstruction targets.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import TryOnSample, save_image_rgb, save_parse_map, save_pose
from .labels import KEYPOINT_INDEX, PARSE_LABELS
from .masks import build_fine_mask

BASE_H, BASE_W = 64, 48

_SKIN_TONES = ((0.94, 0.80, 0.68), (0.82, 0.64, 0.50), (0.56, 0.40, 0.30))
_HAIR_COLORS = ((0.15, 0.10, 0.08), (0.35, 0.22, 0.10), (0.08, 0.08, 0.08), (0.75, 0.65, 0.35))
_GARMENT_COLORS = ((0.80, 0.15, 0.20), (0.15, 0.30, 0.70), (0.10, 0.55, 0.30),
                   (0.90, 0.75, 0.15), (0.45, 0.15, 0.55), (0.10, 0.10, 0.12),
                   (0.95, 0.95, 0.92), (0.95, 0.50, 0.15))
_BACKGROUNDS = ((0.92, 0.92, 0.94), (0.85, 0.88, 0.85), (0.96, 0.93, 0.88))

_BODY_SHAPES = {9: "slim", 10: "average", 11: "curvy"}
_GENDERS = ("woman", "man")
_MATERIALS = ("cotton", "denim", "wool", "linen")
_UPPER_CATS = ("t-shirt", "shirt", "sweater")
_LOWER_CATS = ("pants", "jeans", "trousers")
_DRESS_CATS = ("dress", "sundress")
_NECKLINES = ("round neckline", "v neckline")


def _fill(parse, img, r0, r1, c0, c1, label, color, s):
    """Paint a template rectangle (inclusive base coords) at scale s."""
    rows = slice(r0 * s, (r1 + 1) * s)
    cols = slice(c0 * s, (c1 + 1) * s)
    parse[rows, cols] = PARSE_LABELS[label]
    img[rows, cols] = color


def generate_sample(
    sample_id: str,
    category: str = "upper_body",
    size: tuple[int, int] = (BASE_H, BASE_W),
    rng: np.random.Generator | None = None,
) -> tuple[TryOnSample, dict[str, dict[str, str]]]:
    """One procedural sample plus its ground-truth captions.

    size must be an integer multiple of the 64 x 48 template.
    """
    h, w = size
    s = h // BASE_H
    if s < 1 or h != BASE_H * s or w != BASE_W * s:
        raise ValueError(f"size {size} must be a multiple of {(BASE_H, BASE_W)}")
    rng = rng or np.random.default_rng(0)

    half_w = int(rng.integers(9, 12))            # torso half-width -> body shape
    loose = bool(rng.integers(0, 2))             # garment 1 col wider each side
    gender = _GENDERS[rng.integers(0, len(_GENDERS))]
    skin = _SKIN_TONES[rng.integers(0, len(_SKIN_TONES))]
    hair = _HAIR_COLORS[rng.integers(0, len(_HAIR_COLORS))]
    bg = _BACKGROUNDS[rng.integers(0, len(_BACKGROUNDS))]
    garment_color = _GARMENT_COLORS[rng.integers(0, len(_GARMENT_COLORS))]
    other_color = _GARMENT_COLORS[rng.integers(0, len(_GARMENT_COLORS))]
    material = _MATERIALS[rng.integers(0, len(_MATERIALS))]
    long_sleeves = bool(rng.integers(0, 2))
    neckline = _NECKLINES[rng.integers(0, len(_NECKLINES))]

    tl, tr = 24 - half_w, 23 + half_w            # torso columns
    gl, gr = (tl - 1, tr + 1) if loose else (tl, tr)
    arm_l = (tl - 4, tl - 1)
    arm_r = (tr + 1, tr + 4)

    parse = np.zeros((h, w), dtype=np.uint8)
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = bg

    _fill(parse, img, 2, 6, 18, 29, "hair", hair, s)
    _fill(parse, img, 7, 13, 19, 28, "face", skin, s)
    _fill(parse, img, 14, 15, 21, 26, "neck", skin, s)
    _fill(parse, img, 16, 30, *arm_l, "arms", skin, s)
    _fill(parse, img, 16, 30, *arm_r, "arms", skin, s)
    _fill(parse, img, 36, 58, 16, 21, "legs", skin, s)
    _fill(parse, img, 36, 58, 26, 31, "legs", skin, s)

    gt_person = {
        "body shape": _BODY_SHAPES[half_w],
        "gender": gender,
        "fit": "loose fit" if loose else "tight fit",
        "pose description": "standing upright facing forward",
        "hand pose": "arms at sides",
    }

    if category == "upper_body":
        untucked = bool(rng.integers(0, 2))
        crop = (not untucked) and rng.random() < 0.3
        lu = int(rng.integers(38, 42)) if untucked else (int(rng.integers(31, 34)) if crop else 35)
        _fill(parse, img, 34, 52, tl + 1, tr - 1, "lower_clothes", other_color, s)
        if crop:
            _fill(parse, img, lu + 1, 33, tl, tr, "torso_skin", skin, s)
        _fill(parse, img, 16, lu, gl, gr, "upper_clothes", garment_color, s)
        if long_sleeves:
            _fill(parse, img, 16, 26, *arm_l, "upper_clothes", garment_color, s)
            _fill(parse, img, 16, 26, *arm_r, "upper_clothes", garment_color, s)
        gt_person["tucking style"] = "untucked" if untucked else "fully tucked in"
        gt_clothing = {
            "cloth category": _UPPER_CATS[rng.integers(0, len(_UPPER_CATS))],
            "material": material,
            "sleeve": "long sleeves" if long_sleeves else "short sleeves",
            "neckline": neckline,
        }
    elif category == "lower_body":
        l2 = 56 if rng.random() < 0.5 else 48
        _fill(parse, img, 34, l2, tl + 1, tr - 1, "lower_clothes", garment_color, s)
        _fill(parse, img, 16, 35, gl, gr, "upper_clothes", other_color, s)
        gt_clothing = {
            "cloth category": _LOWER_CATS[rng.integers(0, len(_LOWER_CATS))],
            "material": material,
            "length": "ankle-length" if l2 >= 54 else "knee-length",
        }
    elif category == "dresses":
        ld = int(rng.integers(42, 51))
        _fill(parse, img, 16, ld, gl, gr, "dress", garment_color, s)
        if long_sleeves:
            _fill(parse, img, 16, 26, *arm_l, "dress", garment_color, s)
            _fill(parse, img, 16, 26, *arm_r, "dress", garment_color, s)
        gt_clothing = {
            "cloth category": _DRESS_CATS[rng.integers(0, len(_DRESS_CATS))],
            "material": material,
            "sleeve": "long sleeves" if long_sleeves else "short sleeves",
            "length": "midi-length" if ld >= 47 else "knee-length",
            "neckline": neckline,
        }
    else:
        raise ValueError(f"unknown category {category!r}")

    # hands/feet painted last so nothing overwrites them
    _fill(parse, img, 31, 34, *arm_l, "hands", skin, s)
    _fill(parse, img, 31, 34, *arm_r, "hands", skin, s)
    _fill(parse, img, 59, 62, 16, 21, "feet", skin, s)
    _fill(parse, img, 59, 62, 26, 31, "feet", skin, s)

    kp = np.zeros((len(KEYPOINT_INDEX), 3), dtype=np.float64)

    def put(name, x, y):
        kp[KEYPOINT_INDEX[name]] = (x * s, y * s, 1.0)

    put("nose", 23, 10)
    put("neck", 23, 14)
    put("right_shoulder", tl, 16)
    put("left_shoulder", tr, 16)
    put("right_elbow", tl - 3, 24)
    put("left_elbow", tr + 2, 24)
    put("right_wrist", tl - 3, 30)
    put("left_wrist", tr + 2, 30)
    put("right_hip", tl + 1, 36)
    put("left_hip", tr - 1, 36)
    put("right_knee", 18, 53)
    put("left_knee", 28, 53)
    put("right_ankle", 18, 59)
    put("left_ankle", 28, 59)

    # flat-lay clothing photo: same garment color, canonical silhouette
    cloth = np.full((h, w, 3), 0.98, dtype=np.float32)
    cloth[18 * s:45 * s, 12 * s:36 * s] = garment_color
    if category != "lower_body" and long_sleeves:
        cloth[18 * s:40 * s, 6 * s:12 * s] = garment_color
        cloth[18 * s:40 * s, 36 * s:42 * s] = garment_color

    sample = TryOnSample(
        sample_id=sample_id,
        person_image=img,
        clothing_image=cloth,
        agnostic_image=img.copy(),
        parsing_map=parse,
        pose_keypoints=kp,
        category=category,
    )
    # agnostic view: neutralize everything the fine mask would repaint
    fine = build_fine_mask(sample)
    agnostic = img.copy()
    agnostic[fine.bits] = 0.5
    sample.agnostic_image = agnostic

    return sample, {"person": gt_person, "clothing": gt_clothing}


def generate_dataset(
    root: str | Path,
    n_train: int = 8,
    n_test: int = 4,
    category: str = "upper_body",
    size: tuple[int, int] = (BASE_H, BASE_W),
    seed: int = 0,
) -> dict[str, list[str]]:
    """Write a full synthetic tree (both splits, both pair lists, GT captions).

    Returns the sample ids per split. Regenerating with the same arguments
    reproduces the tree bit-for-bit.
    """
    root = Path(root)
    ids: dict[str, list[str]] = {}
    for split, count in (("train", n_train), ("test", n_test)):
        base = root / split
        for sub in ("image", "cloth", "agnostic", "image-parse", "pose", "captions-gt"):
            (base / sub).mkdir(parents=True, exist_ok=True)
        stems = [f"{i:05d}" for i in range(count)]
        for i, stem in enumerate(stems):
            rng = np.random.default_rng([seed, 0 if split == "train" else 1, i])
            sample, gt = generate_sample(stem, category, size, rng)
            save_image_rgb(base / "image" / f"{stem}.png", sample.person_image)
            save_image_rgb(base / "cloth" / f"{stem}.png", sample.clothing_image)
            save_image_rgb(base / "agnostic" / f"{stem}.png", sample.agnostic_image)
            save_parse_map(base / "image-parse" / f"{stem}.png", sample.parsing_map)
            save_pose(base / "pose" / f"{stem}.json", sample.pose_keypoints)
            for subject in ("person", "clothing"):
                path = base / "captions-gt" / f"{stem}_{subject}.json"
                path.write_text(json.dumps(gt[subject], indent=1, sort_keys=True),
                                encoding="utf-8")
        (base / "pairs_paired.txt").write_text(
            "".join(f"{t} {t}\n" for t in stems), encoding="utf-8")
        shifted = stems[1:] + stems[:1]
        (base / "pairs_unpaired.txt").write_text(
            "".join(f"{a} {b}\n" for a, b in zip(stems, shifted)), encoding="utf-8")
        (base / "meta.json").write_text(
            json.dumps({"category": category, "size": list(size)}), encoding="utf-8")
        ids[split] = stems
    return ids
