"""Adaptive fusion of the three feature pathways.

Each enabled feature is mapped into a shared d-dimensional space by its
transform block: the quality path is a single affine layer, the semantic
paths add relu and dropout. A gating network (one affine layer plus a
sigmoid) reads the concatenated transformed features and emits one
weight per pathway, each strictly inside (0, 1); the weights are NOT
normalized to a simplex. The fused vector is the gate-weighted sum, and
a single affine regression layer turns it into the scalar score.

Sub-models for ablations enable any non-empty subset of the pathways;
with a single pathway the gate is omitted entirely (weight fixed at 1).
With gating disabled (``moe=False``) the transformed features are
concatenated and regressed directly, which is the comparison baseline.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, dropout, relu, sigmoid
from .errors import (
    BadMagicError,
    CacheFormatError,
    ChecksumError,
    ConfigError,
    NumericError,
    ShapeError,
    VersionError,
)
from .nn import Affine

__all__ = [
    "COMPONENT_ORDER",
    "AfmConfig",
    "TransformBlock",
    "GateNetwork",
    "AfmModel",
    "fuse",
    "save_params",
    "load_params",
]

COMPONENT_ORDER = ("q", "a", "b")


@dataclass
class AfmConfig:
    input_dims: dict
    d: int = 784
    dropout_rate: float = 0.1
    components: tuple = COMPONENT_ORDER
    moe: bool = True

    def __post_init__(self):
        self.components = tuple(self.components)
        if not self.components:
            raise ConfigError("at least one component must be enabled")
        if any(c not in COMPONENT_ORDER for c in self.components):
            raise ConfigError(f"components must be among {COMPONENT_ORDER}, got {self.components}")
        if tuple(sorted(self.components, key=COMPONENT_ORDER.index)) != self.components:
            raise ConfigError(f"components must follow order {COMPONENT_ORDER}")
        if len(set(self.components)) != len(self.components):
            raise ConfigError("components must be unique")
        if self.d < 1:
            raise ConfigError(f"fused dimension d must be positive, got {self.d}")
        missing = [c for c in self.components if c not in self.input_dims]
        if missing:
            raise ConfigError(f"input_dims missing for components {missing}")


class TransformBlock:
    """Projects one feature into the shared d-dim space.

    kind 'quality': affine only. kind 'semantic': affine + relu +
    dropout(rate); dropout is active in train mode only.
    """

    def __init__(self, kind, in_dim, d, rng, rate=0.1, name="trans"):
        if kind not in ("quality", "semantic"):
            raise ConfigError(f"transform kind must be quality|semantic, got {kind!r}")
        self.kind = kind
        self.rate = rate
        self.affine = Affine(in_dim, d, rng, name=f"{name}.affine")

    def __call__(self, f: Tensor, mode="eval", rng=None) -> Tensor:
        if f.shape[-1] != self.affine.in_dim:
            raise ShapeError(
                f"{self.kind} transform expects input dim {self.affine.in_dim}, "
                f"got shape {f.shape}"
            )
        out = self.affine(f)
        if self.kind == "semantic":
            out = dropout(relu(out), self.rate, mode, rng)
        return out

    def parameters(self):
        return self.affine.parameters()


class GateNetwork:
    """Affine + sigmoid over the concatenated transformed features."""

    def __init__(self, d, k, rng, name="gate"):
        self.d = d
        self.k = k
        self.affine = Affine(k * d, k, rng, name=f"{name}.affine")

    def __call__(self, parts) -> Tensor:
        for part in parts:
            if part.shape[-1] != self.d:
                raise ShapeError(
                    f"gate expects {self.k} inputs of dim {self.d}, got shape {part.shape}"
                )
        stacked = concat(parts, axis=-1 if parts[0].ndim > 1 else 0)
        return sigmoid(self.affine(stacked))

    def parameters(self):
        return self.affine.parameters()


def fuse(parts, alpha: Tensor) -> Tensor:
    """Gate-weighted sum of the transformed features.

    The weights come from a sigmoid, not a softmax, so they need not sum
    to 1; with all-equal inputs and weights 0.5 the output is 1.5x the
    input, by design.
    """
    k = len(parts)
    if alpha.shape[-1] != k:
        raise ShapeError(f"fuse got {k} features but {alpha.shape[-1]} gate weights")
    if parts[0].ndim == 1:
        total = parts[0] * alpha[0]
        for i in range(1, k):
            total = total + parts[i] * alpha[i]
    else:
        total = parts[0] * alpha[:, 0:1]
        for i in range(1, k):
            total = total + parts[i] * alpha[:, i : i + 1]
    return total


def _check_finite(stage, t: Tensor):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values after stage '{stage}'")
    return t


class AfmModel:
    """Transform blocks + optional gate + regression head."""

    def __init__(self, config: AfmConfig, rng, name="afm"):
        self.config = config
        self.blocks = {}
        for tag in config.components:
            kind = "quality" if tag == "q" else "semantic"
            self.blocks[tag] = TransformBlock(
                kind,
                config.input_dims[tag],
                config.d,
                rng,
                rate=config.dropout_rate,
                name=f"{name}.trans_{tag}",
            )
        k = len(config.components)
        self.gate = GateNetwork(config.d, k, rng, name=f"{name}.gate") if config.moe and k > 1 else None
        reg_in = config.d if (config.moe or k == 1) else k * config.d
        self.regression = Affine(reg_in, 1, rng, name=f"{name}.regression")

    def forward(self, features, mode="eval", rng=None) -> Tensor:
        """Score a feature bundle; accepts vectors or (batch, dim) arrays.

        ``features`` maps component tag to Tensor. Returns a scalar
        tensor for vector inputs, a (batch,) tensor for batched ones.
        """
        missing = [t for t in self.config.components if t not in features]
        if missing:
            raise ShapeError(f"forward is missing features for components {missing}")
        parts = []
        for tag in self.config.components:
            out = self.blocks[tag](features[tag], mode=mode, rng=rng)
            parts.append(_check_finite(f"transform[{tag}]", out))

        if self.gate is not None:
            alpha = _check_finite("gate", self.gate(parts))
            fused = _check_finite("fuse", fuse(parts, alpha))
        elif len(parts) == 1:
            fused = parts[0]
        else:
            fused = concat(parts, axis=-1 if parts[0].ndim > 1 else 0)

        score = _check_finite("regression", self.regression(fused))
        if score.ndim == 1:
            return score.reshape(())
        return score.reshape((score.shape[0],))

    def predict(self, f1, fa, fb, mode="eval", rng=None) -> float:
        """Spec-surface convenience: scalar score from the three features.

        Pass None for features whose component is disabled.
        """
        supplied = {"q": f1, "a": fa, "b": fb}
        features = {}
        for tag in self.config.components:
            if supplied[tag] is None:
                raise ShapeError(f"component {tag!r} is enabled but its feature is None")
            value = supplied[tag]
            features[tag] = value if isinstance(value, Tensor) else Tensor(value)
        return self.forward(features, mode=mode, rng=rng).item()

    def parameters(self):
        params = []
        for tag in self.config.components:
            params += self.blocks[tag].parameters()
        if self.gate is not None:
            params += self.gate.parameters()
        return params + self.regression.parameters()


# ---------------------------------------------------------------------------
# Checkpoint container: magic "MAFM", version 1, JSON config echo, named
# float64 parameter blobs, CRC32 trailer. Written via temp-file + rename.
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"MAFM"
CKPT_VERSION = 1


def save_params(path, named_arrays, config):
    """Serialize named parameter arrays plus a JSON config echo."""
    parts = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION)]
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    items = list(named_arrays.items())
    parts.append(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float64)
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f8").tobytes())
    body = b"".join(parts)
    blob = body + struct.pack("<I", zlib.crc32(body))

    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return blob


def load_params(path):
    """Inverse of :func:`save_params`; validates magic/version/checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CKPT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {blob[:4]!r}", offset=0)
    if len(blob) < 14:
        raise ChecksumError("checkpoint truncated", offset=len(blob))
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CKPT_VERSION:
        raise VersionError(
            f"unsupported checkpoint version {version}; supported: {CKPT_VERSION}", offset=4
        )
    body, (stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != stored:
        raise ChecksumError("checkpoint CRC mismatch", offset=len(blob) - 4)

    offset = 6
    (cfg_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    config = json.loads(body[offset : offset + cfg_len].decode("utf-8"))
    offset += cfg_len
    (count,) = struct.unpack_from("<I", body, offset)
    offset += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        ndim = body[offset]
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", body, offset) if ndim else ()
        offset += 4 * ndim
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += 8 * n
    if offset != len(body):
        raise CacheFormatError(
            f"{len(body) - offset} trailing bytes in checkpoint", offset=offset
        )
    return config, arrays
