"""Dataset manifests, the seeded 70/10/20 split, and synthetic data.

A manifest is a UTF-8 CSV with header ``image_id,source,mos``. The split
shuffles the lexicographically sorted ids with numpy's PCG64 generator
(seeded by the split seed) and takes the first floor(0.7 n) ids for
training, the next floor(0.1 n) for validation, and the remainder for
testing. PCG64 is pinned by name because the split is only reproducible
across machines if the generator is.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetTooSmallError, ManifestError, ShapeError

__all__ = [
    "ManifestRecord",
    "DatasetManifest",
    "SplitAssignment",
    "load_manifest",
    "save_manifest",
    "split",
    "generate_synthetic_manifest",
    "load_image",
]

MANIFEST_HEADER = ("image_id", "source", "mos")


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    source: str
    mos: float


@dataclass
class DatasetManifest:
    name: str
    records: list

    def __post_init__(self):
        from collections import Counter

        counts = Counter(r.image_id for r in self.records)
        dupes = sorted(i for i, c in counts.items() if c > 1)
        if dupes:
            raise ManifestError(f"manifest {self.name!r} has duplicate image_ids: {dupes[:5]}")
        for r in self.records:
            if not math.isfinite(r.mos):
                raise ManifestError(f"non-finite mos for image {r.image_id!r}")
        self._index = {r.image_id: r for r in self.records}

    def __len__(self):
        return len(self.records)

    def ids(self):
        return [r.image_id for r in self.records]

    def by_id(self, image_id):
        return self._index[image_id]

    def mos_map(self):
        return {r.image_id: r.mos for r in self.records}


def load_manifest(path, name=None):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest", line=1)
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: line 1: header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}",
                line=1,
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ManifestError(
                    f"{path}: line {lineno}: expected 3 fields, got {len(row)}", line=lineno
                )
            image_id, source, mos_text = (f.strip() for f in row)
            if not image_id:
                raise ManifestError(f"{path}: line {lineno}: empty image_id", line=lineno)
            try:
                mos = float(mos_text)
            except ValueError:
                raise ManifestError(
                    f"{path}: line {lineno}: mos {mos_text!r} is not a number", line=lineno
                )
            if not math.isfinite(mos):
                raise ManifestError(f"{path}: line {lineno}: mos must be finite", line=lineno)
            records.append(ManifestRecord(image_id, source, mos))
    return DatasetManifest(name or os.path.basename(path), records)


def save_manifest(manifest, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.image_id, r.source, repr(r.mos)])


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple
    val: tuple
    test: tuple
    seed: int

    def part(self, name):
        if name not in ("train", "val", "test"):
            raise ConfigError(f"split part must be train|val|test, got {name!r}")
        return getattr(self, name)

    def sizes(self):
        return (len(self.train), len(self.val), len(self.test))


def split(manifest, seed) -> SplitAssignment:
    """Seeded 70/10/20 partition of the manifest ids.

    Sizes are floor(0.7 n) / floor(0.1 n) / remainder. Identical
    (manifest ids, seed) always produce the identical assignment.
    """
    n = len(manifest)
    if n < 10:
        raise DatasetTooSmallError(f"need at least 10 records to split, got {n}")
    ids = sorted(manifest.ids())
    rng = np.random.Generator(np.random.PCG64(seed))
    shuffled = [ids[i] for i in rng.permutation(n)]
    n_train = int(0.7 * n)
    n_val = int(0.1 * n)
    return SplitAssignment(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        seed=seed,
    )


def generate_synthetic_manifest(n, seed, mos_range=(1.0, 5.0), name="synthetic"):
    """n records with uniform MOS in ``mos_range`` and synth: image sources."""
    if n < 10:
        raise DatasetTooSmallError(f"synthetic manifest needs n >= 10, got {n}")
    lo, hi = mos_range
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ConfigError(f"mos_range must be a finite (lo, hi) with lo < hi, got {mos_range}")
    rng = np.random.Generator(np.random.PCG64(seed))
    mos = rng.uniform(lo, hi, size=n)
    records = [
        ManifestRecord(f"img{i:05d}", f"synth:{seed}:{i}", float(mos[i])) for i in range(n)
    ]
    return DatasetManifest(name, records)


def load_image(source, image_shape):
    """Resolve a manifest source to a float array in [0, 1].

    ``synth:<seed>:<index>`` generates a deterministic uniform image;
    anything else is treated as a path to a .npy array of the right shape.
    """
    h, w, c = image_shape
    if source.startswith("synth:"):
        parts = source.split(":")
        try:
            entropy = [int(p) for p in parts[1:]]
        except ValueError:
            raise ConfigError(f"malformed synthetic source {source!r}")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
        return rng.random((h, w, c))
    image = np.load(source)
    if image.ndim == 2:
        image = image[:, :, None]
    if tuple(image.shape) != (h, w, c):
        raise ShapeError(f"image {source!r} has shape {image.shape}, expected {(h, w, c)}")
    return np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
