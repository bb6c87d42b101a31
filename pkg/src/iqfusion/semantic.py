"""Fine-grained semantic feature pathway.

Holds the two fixed prompts, the token-averaging reduction that turns a
[token_length, hidden_size] hidden-state matrix into a single feature
vector, and a synthetic generator that stands in for the external
extractor at desk scale. Real extraction runs out of process and lands
in the same cache format (see the adapter package).
"""

from __future__ import annotations

import hashlib

import numpy as np

from .cache import CacheEntry
from .errors import ConfigError, ShapeError

__all__ = [
    "PROMPTS",
    "average_tokens",
    "synth_features",
    "synth_probe",
    "write_prompt_registry",
]

# Fixed prompt registry. Tag 'a' probes for the existence of meaningful
# semantic content, tag 'b' for its coherence.
PROMPTS = {
    "a": (
        "Evaluate the input image to determine if its quality is compromised "
        "due to a lack of meaningful semantic content."
    ),
    "b": "Evaluate if the image quality is compromised due to violations of coherence.",
}


def write_prompt_registry(path):
    """Export the prompts as tag-prefixed lines (tab separated) for the
    out-of-process extractor."""
    with open(path, "w", encoding="utf-8") as fh:
        for tag in sorted(PROMPTS):
            fh.write(f"{tag}\t{PROMPTS[tag]}\n")


def average_tokens(matrix):
    """Average a [token_length, hidden_size] matrix across the token axis.

    Accumulation is float64 regardless of input dtype; the cache writer
    casts to float32 at storage time.
    """
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(
            f"token matrix must be [token_length >= 1, hidden_size >= 1], got shape {m.shape}"
        )
    return m.mean(axis=0, dtype=np.float64)


def _rng(*parts):
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.default_rng(np.random.SeedSequence(int.from_bytes(digest[:16], "little")))


def synth_probe(dim, seed, tag):
    """Unit direction along which synthetic features encode MOS."""
    d = _rng("dir", seed, tag).standard_normal(dim)
    return d / np.linalg.norm(d)


def synth_features(manifest, dim, seed, mos_signal, tags=("a", "b")):
    """Deterministic stand-in features for the external extractor.

    Each vector is ``mos_signal * direction * mos + (1 - mos_signal) * noise``
    with a per-tag unit direction, so the inner product with
    :func:`synth_probe` correlates with MOS exactly as strongly as
    ``mos_signal`` dictates. Every vector depends only on
    (image_id, tag, seed), never on manifest order.
    """
    if dim < 2:
        raise ConfigError(f"synthetic feature dim must be >= 2, got {dim}")
    if not 0.0 <= mos_signal <= 1.0:
        raise ConfigError(f"mos_signal must be in [0, 1], got {mos_signal}")
    directions = {tag: synth_probe(dim, seed, tag) for tag in tags}
    entries = []
    for record in manifest.records:
        for tag in tags:
            noise = _rng("img", seed, tag, record.image_id).standard_normal(dim)
            vec = mos_signal * directions[tag] * record.mos + (1.0 - mos_signal) * noise
            entries.append(CacheEntry(record.image_id, tag, vec))
    return entries
