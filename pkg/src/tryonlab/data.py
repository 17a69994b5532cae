"""Dataset on-disk layout, core sample types, and the caption cache.

Layout (one tree per split):

    root/<split>/image/<id>.png          person photo, RGB
    root/<split>/cloth/<id>.png          flat clothing photo, RGB
    root/<split>/agnostic/<id>.png       person with the garment region neutralized
    root/<split>/image-parse/<id>.png    8-bit parse map, ids from labels.PARSE_LABELS
    root/<split>/pose/<id>.json          14 keypoints, [[x, y, confidence], ...]
    root/<split>/pairs_paired.txt        whitespace-separated "person_id clothing_id"
    root/<split>/pairs_unpaired.txt

Masks, when written, are 8-bit PNGs holding exactly {0, 255}. Captions are
cached in a newline-delimited JSON append log compacted on read; writers go
through an atomic temp-file rename so readers never observe a partial record.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import LabelSetViolation, MissingFile, StoreCorrupt
from .labels import CATEGORIES, KEYPOINT_NAMES, LABEL_IDS
from .masks import Mask


# ---------------------------------------------------------------------------
# raster / pose io
# ---------------------------------------------------------------------------

def load_image_rgb(path: str | Path) -> np.ndarray:
    """PNG -> float32 (H, W, 3) in [0, 1]."""
    if not Path(path).exists():
        raise MissingFile(str(path))
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image_rgb(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB").save(path)


def load_parse_map(path: str | Path) -> np.ndarray:
    if not Path(path).exists():
        raise MissingFile(str(path))
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    return arr


def save_parse_map(path: str | Path, parse: np.ndarray) -> None:
    Image.fromarray(np.asarray(parse, dtype=np.uint8), mode="L").save(path)


def load_mask_png(path: str | Path, kind: str, source: str = "") -> Mask:
    if not Path(path).exists():
        raise MissingFile(str(path))
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    bad = np.setdiff1d(np.unique(arr), (0, 255))
    if bad.size:
        raise ValueError(f"mask png must hold only 0/255, found {bad[:8]} in {path}")
    return Mask(arr == 255, kind, source=source or str(path))


def save_mask_png(path: str | Path, mask: Mask) -> None:
    Image.fromarray(np.where(mask.bits, 255, 0).astype(np.uint8), mode="L").save(path)


def load_pose(path: str | Path) -> np.ndarray:
    if not Path(path).exists():
        raise MissingFile(str(path))
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    kp = np.asarray(doc["keypoints"], dtype=np.float64)
    if kp.shape != (len(KEYPOINT_NAMES), 3):
        raise ValueError(f"pose file {path} has shape {kp.shape}, "
                         f"expected ({len(KEYPOINT_NAMES)}, 3)")
    return kp


def save_pose(path: str | Path, keypoints: np.ndarray) -> None:
    doc = {"names": list(KEYPOINT_NAMES),
           "keypoints": np.asarray(keypoints, dtype=float).tolist()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)


# ---------------------------------------------------------------------------
# sample / index types
# ---------------------------------------------------------------------------

@dataclass
class TryOnSample:
    """One person/clothing pair with parse map, pose, and source rasters."""

    sample_id: str
    person_image: np.ndarray      # (H, W, 3) float32 [0, 1]
    clothing_image: np.ndarray    # (H, W, 3)
    agnostic_image: np.ndarray    # (H, W, 3), garment region neutralized
    parsing_map: np.ndarray       # (H, W) uint8
    pose_keypoints: np.ndarray    # (14, 3) float, (x, y, confidence)
    category: str = "upper_body"

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        h, w = self.parsing_map.shape
        for name in ("person_image", "clothing_image", "agnostic_image"):
            arr = getattr(self, name)
            if arr.shape[:2] != (h, w):
                raise ValueError(f"{name} shape {arr.shape[:2]} != parse shape {(h, w)}")
        bad = np.setdiff1d(np.unique(self.parsing_map), sorted(LABEL_IDS))
        if bad.size:
            raise LabelSetViolation(
                f"sample {self.sample_id!r} parse contains undeclared ids {bad.tolist()}")
        kp = np.asarray(self.pose_keypoints, dtype=np.float64)
        conf = kp[:, 2] > 0
        if ((kp[conf, 0] < 0) | (kp[conf, 0] >= w) | (kp[conf, 1] < 0) | (kp[conf, 1] >= h)).any():
            raise ValueError(f"sample {self.sample_id!r} has confident keypoints out of frame")
        self.pose_keypoints = kp

    @property
    def size(self) -> tuple[int, int]:
        return self.parsing_map.shape


@dataclass(frozen=True)
class DatasetIndex:
    """Resolved list of (person_id, clothing_id) entries for one split."""

    root_path: str
    split: str
    pairing: str
    entries: tuple[tuple[str, str], ...]

    @property
    def base(self) -> Path:
        return Path(self.root_path) / self.split

    def __len__(self) -> int:
        return len(self.entries)


def _pairs_file(root: Path, split: str, pairing: str) -> Path:
    return root / split / f"pairs_{pairing}.txt"


def index_dataset(root_path: str | Path, split: str = "train",
                  pairing: str = "paired") -> DatasetIndex:
    """Build a DatasetIndex, verifying every referenced asset exists.

    Entry order is the pair-file order, so two builds over the same tree
    are identical.
    """
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    if pairing not in ("paired", "unpaired"):
        raise ValueError(f"unknown pairing {pairing!r}")
    root = Path(root_path)
    pairs = _pairs_file(root, split, pairing)
    if not pairs.exists():
        raise MissingFile(str(pairs))

    entries = []
    for line_no, line in enumerate(pairs.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{pairs}:{line_no}: expected 'person_id clothing_id'")
        person_id, clothing_id = parts
        if pairing == "paired" and person_id != clothing_id:
            raise ValueError(f"{pairs}:{line_no}: paired list must repeat the id")
        entries.append((person_id, clothing_id))

    base = root / split
    for person_id, clothing_id in entries:
        for sub, stem, ext in (("image", person_id, ".png"),
                               ("agnostic", person_id, ".png"),
                               ("image-parse", person_id, ".png"),
                               ("pose", person_id, ".json"),
                               ("cloth", clothing_id, ".png")):
            path = base / sub / f"{stem}{ext}"
            if not path.exists():
                raise MissingFile(str(path))
    return DatasetIndex(str(root), split, pairing, tuple(entries))


def dataset_category(root_path: str | Path, split: str) -> str:
    """Category recorded by the generator, defaulting to upper_body."""
    meta = Path(root_path) / split / "meta.json"
    if meta.exists():
        return json.loads(meta.read_text(encoding="utf-8")).get("category", "upper_body")
    return "upper_body"


def load_sample(index: DatasetIndex, entry_idx: int) -> TryOnSample:
    """Decode one index entry into a fully populated, validated sample."""
    if not 0 <= entry_idx < len(index.entries):
        raise IndexError(f"entry_idx {entry_idx} out of range 0..{len(index.entries) - 1}")
    person_id, clothing_id = index.entries[entry_idx]
    base = index.base
    return TryOnSample(
        sample_id=f"{person_id}+{clothing_id}",
        person_image=load_image_rgb(base / "image" / f"{person_id}.png"),
        clothing_image=load_image_rgb(base / "cloth" / f"{clothing_id}.png"),
        agnostic_image=load_image_rgb(base / "agnostic" / f"{person_id}.png"),
        parsing_map=load_parse_map(base / "image-parse" / f"{person_id}.png"),
        pose_keypoints=load_pose(base / "pose" / f"{person_id}.json"),
        category=dataset_category(index.root_path, index.split),
    )


def save_sample(base: str | Path, stem: str, sample: TryOnSample) -> None:
    """Write one sample's assets under an existing split tree."""
    base = Path(base)
    save_image_rgb(base / "image" / f"{stem}.png", sample.person_image)
    save_image_rgb(base / "cloth" / f"{stem}.png", sample.clothing_image)
    save_image_rgb(base / "agnostic" / f"{stem}.png", sample.agnostic_image)
    save_parse_map(base / "image-parse" / f"{stem}.png", sample.parsing_map)
    save_pose(base / "pose" / f"{stem}.json", sample.pose_keypoints)


# ---------------------------------------------------------------------------
# caption cache
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaptionRecord:
    """Predicted captions for one image, keyed by attribute name."""

    image_id: str
    subject: str                      # "person" | "clothing"
    captions: dict[str, str]
    lmm_model_id: str
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def __post_init__(self):
        if self.subject not in ("person", "clothing"):
            raise ValueError(f"subject must be person|clothing, got {self.subject!r}")

    def to_json(self) -> str:
        return json.dumps({
            "image_id": self.image_id,
            "subject": self.subject,
            "captions": self.captions,
            "lmm_model_id": self.lmm_model_id,
            "created_at": self.created_at,
        }, sort_keys=True, ensure_ascii=False)

    @staticmethod
    def from_json(doc: str) -> "CaptionRecord":
        data = json.loads(doc)
        return CaptionRecord(
            image_id=data["image_id"],
            subject=data["subject"],
            captions=dict(data["captions"]),
            lmm_model_id=data["lmm_model_id"],
            created_at=data["created_at"],
        )

    def with_captions(self, captions: dict[str, str]) -> "CaptionRecord":
        return replace(self, captions=dict(captions))


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_captions(record: CaptionRecord, store_path: str | Path) -> None:
    """Append one record to the NDJSON log (atomic replace; last writer wins)."""
    path = Path(store_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    existing = path.read_text(encoding="utf-8") if path.exists() else ""
    if existing and not existing.endswith("\n"):
        existing += "\n"
    _atomic_write(path, existing + record.to_json() + "\n")


def lookup_captions(image_id: str, subject: str,
                    store_path: str | Path) -> CaptionRecord | None:
    """Most recent record for (image_id, subject), or None if never cached."""
    path = Path(store_path)
    if not path.exists():
        return None
    found = None
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = CaptionRecord.from_json(line)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise StoreCorrupt(f"{path}:{line_no}: {exc}") from exc
        if record.image_id == image_id and record.subject == subject:
            found = record
    return found
