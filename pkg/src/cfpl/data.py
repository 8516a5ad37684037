"""Dataset manifests, image loading, and train-time augmentation.

Manifests are CSV files with a ``path,label,domain`` header; paths are
resolved relative to the manifest's directory. Augmentation is a random
resized crop (area scale in a configured range, square aspect) plus a
50% horizontal flip, driven by a caller-supplied generator so batch
assembly stays reproducible however it is scheduled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_HEADER = ["path", "label", "domain"]


@dataclass
class ManifestRow:
    path: str  # absolute, resolved against the manifest location
    label: int  # 0 spoof, 1 live
    domain: str


def load_manifest(path) -> list[ManifestRow]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"manifest not found: {p}")
    rows: list[ManifestRow] = []
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ValueError(f"manifest {p} must start with header {','.join(MANIFEST_HEADER)!r}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 3:
                raise ValueError(f"manifest {p} line {lineno}: expected 3 columns")
            label = int(rec[1])
            if label not in (0, 1):
                raise ValueError(f"manifest {p} line {lineno}: label must be 0 or 1")
            rows.append(ManifestRow(str((p.parent / rec[0]).resolve()), label, rec[2]))
    if not rows:
        raise ValueError(f"manifest {p} is empty")
    return rows


def write_manifest(path, entries: list[tuple[str, int, str]]) -> None:
    """Write rows of (relative path, label, domain)."""
    p = Path(path)
    with p.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(entries)


class ImageStore:
    """Caches decoded uint8 HWC images by path."""

    def __init__(self):
        self._cache: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        arr = self._cache.get(path)
        if arr is None:
            if not Path(path).is_file():
                raise FileNotFoundError(f"image not found: {path}")
            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
            self._cache[path] = arr
        return arr


def _to_chw_float(arr: np.ndarray) -> np.ndarray:
    return np.transpose(arr, (2, 0, 1)).astype(np.float32) / 255.0


def _resize(arr: np.ndarray, size: int) -> np.ndarray:
    if arr.shape[0] == size and arr.shape[1] == size:
        return arr
    img = Image.fromarray(arr).resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def center_resize(arr: np.ndarray, size: int) -> np.ndarray:
    """Evaluation path: plain resize to the model's input size, [0,1] CHW."""
    return _to_chw_float(_resize(arr, size))


def augment(arr: np.ndarray, size: int, rng: np.random.Generator,
            scale_range: tuple[float, float] = (0.8, 1.0)) -> np.ndarray:
    """Random resized crop + horizontal flip, [0,1] CHW."""
    h, w = arr.shape[:2]
    scale = rng.uniform(scale_range[0], scale_range[1])
    side = max(1, int(round(min(h, w) * np.sqrt(scale))))
    side = min(side, h, w)
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    crop = arr[top:top + side, left:left + side]
    out = _resize(crop, size)
    if rng.uniform() < 0.5:
        out = out[:, ::-1]
    return _to_chw_float(np.ascontiguousarray(out))


def sample_rng(seed: int, *key: int) -> np.random.Generator:
    """Stateless per-sample generator derived from a seed and integer keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=(seed, *key))))
