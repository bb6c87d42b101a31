"""Patch-scoring quality backbone.

The backbone maps an image to per-patch score and weight vectors (S, W).
The classic scalar rating is the W-weighted mean of S; the quality-aware
feature kept for fusion is the elementwise product S * W. A small
trainable stand-in backbone is provided (patch embedding, optional
attention mixing over patches, two heads); externally precomputed
quality vectors can be ingested from a cache instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, sigmoid, softmax_rows
from .cache import read_cache
from .errors import DegenerateWeightsError, ShapeError
from .nn import Affine

__all__ = [
    "PatchScores",
    "ToyBackboneConfig",
    "ToyBackbone",
    "patchify",
    "rating",
    "quality_feature",
    "load_cached_quality",
]


@dataclass
class PatchScores:
    """Per-patch scores S and non-negative weights W (equal lengths)."""

    S: Tensor
    W: Tensor

    def __post_init__(self):
        if not isinstance(self.S, Tensor):
            self.S = Tensor(self.S)
        if not isinstance(self.W, Tensor):
            self.W = Tensor(self.W)
        if self.S.ndim != 1 or self.W.ndim != 1 or self.S.shape != self.W.shape:
            raise ShapeError(
                f"S and W must be equal-length vectors, got {self.S.shape} and {self.W.shape}"
            )
        if np.any(self.W.data < 0.0):
            raise ShapeError("patch weights must be non-negative")
        if not (np.all(np.isfinite(self.S.data)) and np.all(np.isfinite(self.W.data))):
            raise ShapeError("patch scores and weights must be finite")

    @property
    def patch_count(self):
        return self.S.shape[0]


def rating(ps: PatchScores) -> Tensor:
    """Scalar rating: sum(S * W) / sum(W).

    Returned as a scalar tensor so gradients can flow to the backbone.
    Invariant under positive rescaling of W; lies in [min S, max S].
    """
    total = float(ps.W.data.sum())
    if total <= 0.0:
        raise DegenerateWeightsError("patch weights sum to zero; rating undefined")
    return (ps.S * ps.W).sum() / ps.W.sum()


def quality_feature(ps: PatchScores) -> Tensor:
    """Quality-aware feature: elementwise S * W, one entry per patch."""
    return ps.S * ps.W


def patchify(image, patch_size):
    """Split an (H, W, C) image into rows of flattened patches.

    Patch order is row-major over the patch grid. H and W must be
    divisible by ``patch_size``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"image must be (H, W, C), got shape {image.shape}")
    h, w, c = image.shape
    ps = patch_size
    if h % ps or w % ps:
        raise ShapeError(
            f"image dims {h}x{w} are not divisible by patch size {ps}; pad or crop first"
        )
    grid = image.reshape(h // ps, ps, w // ps, ps, c)
    return grid.transpose(0, 2, 1, 3, 4).reshape((h // ps) * (w // ps), ps * ps * c)


@dataclass
class ToyBackboneConfig:
    patch_size: int = 8
    hidden: int = 16
    mixing_blocks: int = 2
    image_shape: tuple = (56, 56, 1)  # (H, W, C)

    @property
    def patch_pixels(self):
        ps = self.patch_size
        return ps * ps * self.image_shape[2]

    @property
    def patch_count(self):
        h, w, _ = self.image_shape
        return (h // self.patch_size) * (w // self.patch_size)


class _MixBlock:
    """Single-head softmax attention over patches with a residual add."""

    def __init__(self, hidden, rng, name):
        self.q = Affine(hidden, hidden, rng, name=f"{name}.q")
        self.k = Affine(hidden, hidden, rng, name=f"{name}.k")
        self.v = Affine(hidden, hidden, rng, name=f"{name}.v")
        self.scale = 1.0 / math.sqrt(hidden)

    def __call__(self, h: Tensor) -> Tensor:
        attn = softmax_rows((self.q(h) @ self.k(h).T) * self.scale)
        return h + attn @ self.v(h)

    def parameters(self):
        return self.q.parameters() + self.k.parameters() + self.v.parameters()


class ToyBackbone:
    """Small trainable patch scorer honoring the (S, W) contract.

    Both heads read the same mixed patch representations; the weight
    head is sigmoid-squashed so every weight lies in (0, 1) and the
    rating denominator stays positive.
    """

    def __init__(self, config: ToyBackboneConfig, rng, name="backbone"):
        h, w, _ = config.image_shape
        if h % config.patch_size or w % config.patch_size:
            raise ShapeError(
                f"image shape {config.image_shape} not divisible by patch size "
                f"{config.patch_size}; pad or crop first"
            )
        self.config = config
        self.embed = Affine(config.patch_pixels, config.hidden, rng, name=f"{name}.embed")
        self.blocks = [
            _MixBlock(config.hidden, rng, name=f"{name}.mix{i}")
            for i in range(config.mixing_blocks)
        ]
        self.score_head = Affine(config.hidden, 1, rng, name=f"{name}.score")
        self.weight_head = Affine(config.hidden, 1, rng, name=f"{name}.weight")

    def forward(self, image) -> PatchScores:
        image = np.asarray(image, dtype=np.float64)
        if tuple(image.shape) != tuple(self.config.image_shape):
            raise ShapeError(
                f"backbone built for image shape {self.config.image_shape}, "
                f"got {image.shape}"
            )
        patches = Tensor(patchify(image, self.config.patch_size))
        h = self.embed(patches)
        for block in self.blocks:
            h = block(h)
        p = self.config.patch_count
        scores = self.score_head(h).reshape((p,))
        weights = sigmoid(self.weight_head(h).reshape((p,)))
        return PatchScores(scores, weights)

    def parameters(self):
        params = self.embed.parameters()
        for block in self.blocks:
            params += block.parameters()
        return params + self.score_head.parameters() + self.weight_head.parameters()


def load_cached_quality(path, image_id):
    """Read one precomputed quality feature (tag 'q') from a cache file."""
    return read_cache(path).get(image_id, "q")
