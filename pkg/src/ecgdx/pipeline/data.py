"""Sample records, manifests, splits and in-memory training arrays."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import CLASSES
from ..errors import DataError, ParameterError
from ..raster import Raster, invert, resize_area, to_grayscale

# classifier input (rows, cols): the 192 x 256 sheet reduced 4x by area averaging
CLASSIFIER_HW = (48, 64)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image: str
    labels: tuple[int, ...]
    mask: str | None = None
    corners: tuple | None = None

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        if len(labels) != len(CLASSES) or any(v not in (0, 1) for v in labels):
            raise DataError(f"{self.id}: labels must be 5 binary values in order {CLASSES}")
        object.__setattr__(self, "labels", labels)

    def to_dict(self, base: Path | None = None) -> dict:
        def rel(p):
            if p is None or base is None:
                return p
            return Path(os.path.relpath(os.path.abspath(p), base)).as_posix()
        d = {"id": self.id, "image": rel(self.image),
             "labels": {name: v for name, v in zip(CLASSES, self.labels)}}
        if self.mask is not None:
            d["mask"] = rel(self.mask)
        if self.corners is not None:
            d["corners"] = [list(c) for c in self.corners]
        return d


def record_from_dict(d: dict, base: Path | None = None) -> SampleRecord:
    try:
        lab = d["labels"]
        if set(lab) != set(CLASSES):
            raise DataError(f"labels must have exactly the keys {CLASSES}")
        labels = tuple(lab[name] for name in CLASSES)
        image, mask = d["image"], d.get("mask")
        rid = d["id"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest entry: {exc}") from exc
    if base is not None:
        image = str(base / image)
        mask = str(base / mask) if mask is not None else None
    corners = tuple(tuple(float(v) for v in c) for c in d["corners"]) if "corners" in d else None
    return SampleRecord(id=str(rid), image=image, labels=labels, mask=mask, corners=corners)


def load_manifest(path: str | os.PathLike) -> list[SampleRecord]:
    """Entries with paths resolved against the manifest's directory."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise DataError(f"{path}: manifest must be a JSON array")
    return [record_from_dict(e, path.parent) for e in entries]


def save_manifest(records, path: str | os.PathLike) -> Path:
    """Write ``records`` with paths relative to the manifest's directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    entries = [r.to_dict(base) for r in records]
    path.write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n")
    return path


def split_dataset(records, train_frac: float = 0.9, seed: int = 0):
    """Seeded shuffle, then the first round(train_frac * n) go to training."""
    records = list(records)
    if not records:
        raise ParameterError("cannot split an empty record list")
    if not 0 < train_frac < 1:
        raise ParameterError("train_frac must lie strictly between 0 and 1")
    order = np.random.default_rng([int(seed)]).permutation(len(records))
    k = int(round(train_frac * len(records)))
    return [records[i] for i in order[:k]], [records[i] for i in order[k:]]


def prepare_mask(mask: np.ndarray, hw=CLASSIFIER_HW) -> np.ndarray:
    """Binary trace mask -> (h, w, 1) float32 classifier input."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3:
        m = m[..., 0]
    return resize_area(m, *hw)[..., None].astype(np.float32)


def gray_inverted(img: Raster) -> np.ndarray:
    """Rectified photo -> inverted grayscale plane: dark ink becomes bright."""
    return invert(to_grayscale(img)).data[..., 0]


def prepare_image(img: Raster, hw=CLASSIFIER_HW) -> np.ndarray:
    """Rectified photo -> (h, w, 1) float32 grayscale-inverted classifier input."""
    return resize_area(gray_inverted(img), *hw)[..., None].astype(np.float32)


@dataclass
class Dataset:
    """Prepared classifier inputs. ``masks`` holds stage-1 inputs, ``images``
    the grayscale-inverted photos; either may be absent."""

    ids: list[str]
    labels: np.ndarray
    masks: np.ndarray | None = None
    images: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float32).reshape(-1, len(CLASSES))
        n = len(self.ids)
        if self.labels.shape[0] != n:
            raise DataError("labels and ids differ in length")
        for name in ("masks", "images"):
            arr = getattr(self, name)
            if arr is not None and (arr.ndim != 4 or arr.shape[0] != n):
                raise DataError(f"{name} must be (n, h, w, 1) with n = {n}")

    def __len__(self) -> int:
        return len(self.ids)

    def inputs(self, kind: str) -> np.ndarray:
        if kind == "mask":
            arr = self.masks
        elif kind == "grayscale_inverted":
            arr = self.images
        else:
            raise ParameterError(f"unknown input kind {kind!r}")
        if arr is None:
            raise DataError(f"dataset has no {kind} inputs")
        return arr

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        pick = lambda a: None if a is None else a[idx]
        return Dataset([self.ids[i] for i in idx], self.labels[idx], pick(self.masks), pick(self.images),
                       dict(self.meta))


def stack_dataset(ids, labels, masks=None, images=None) -> Dataset:
    masks = None if masks is None else np.stack(masks).astype(np.float32)
    images = None if images is None else np.stack(images).astype(np.float32)
    return Dataset(list(ids), np.asarray(labels), masks, images)
