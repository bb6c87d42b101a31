"""Training loop, model selection, evaluation, and the ablation runner.

Training minimizes minibatch MSE for a fixed number of epochs, runs the
validation metrics after every epoch, and keeps the parameters of the
epoch with the best validation SRCC + PLCC. Everything is driven by one
seed: parameter init, epoch shuffling, and dropout each get their own
stream spawned from it, so identical (config, data) reruns produce
bit-identical loss curves and checkpoint bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .afm import AfmConfig, AfmModel, save_params, load_params
from .autodiff import Tensor, concat, mse_loss
from .backbone import ToyBackbone, ToyBackboneConfig, quality_feature
from .data import load_image, split
from .errors import (
    CompatibilityError,
    ConfigError,
    DatasetTooSmallError,
    DivergenceError,
    UndefinedCorrelationError,
)
from .metrics import EvalReport, evaluate_pairs
from .nn import Adam, zero_grads

__all__ = [
    "TrainConfig",
    "EpochLog",
    "RunRecord",
    "FusionModel",
    "train",
    "evaluate",
    "cross_evaluate",
    "ablate",
    "ABLATION_MASKS",
    "format_ablation_table",
]

FEATURE_SOURCES = ("cached", "toy-backbone")

# Component combinations in the ablation tables' row order: each single
# pathway, each pair, then all three.
ABLATION_MASKS = (
    ("q",),
    ("a",),
    ("b",),
    ("q", "a"),
    ("q", "b"),
    ("a", "b"),
    ("q", "a", "b"),
)


@dataclass
class TrainConfig:
    seed: int
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    d: int = 784
    dropout_rate: float = 0.1
    feature_source: str = "cached"
    moe: bool = True
    components: tuple = ("q", "a", "b")
    # toy backbone settings (used when feature_source == "toy-backbone")
    patch_size: int = 8
    backbone_hidden: int = 16
    mixing_blocks: int = 2
    image_shape: tuple = (56, 56, 1)

    def __post_init__(self):
        self.components = tuple(self.components)
        self.image_shape = tuple(self.image_shape)
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigError(
                f"feature_source must be one of {FEATURE_SOURCES}, got {self.feature_source!r}"
            )
        if not self.components:
            raise ConfigError("component mask must enable at least one of q, a, b")

    def to_dict(self):
        out = asdict(self)
        out["components"] = list(self.components)
        out["image_shape"] = list(self.image_shape)
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["components"] = tuple(d.get("components", ("q", "a", "b")))
        d["image_shape"] = tuple(d.get("image_shape", (56, 56, 1)))
        return cls(**d)


class FusionModel:
    """AFM plus, when the quality feature is trained end to end, the
    patch-scoring backbone that produces it."""

    def __init__(self, afm: AfmModel, backbone: ToyBackbone | None = None):
        self.afm = afm
        self.backbone = backbone

    def parameters(self):
        params = list(self.afm.parameters())
        if self.backbone is not None:
            params += self.backbone.parameters()
        return params

    def named_arrays(self):
        return {p.name: p.data for p in self.parameters()}

    def load_arrays(self, arrays):
        for p in self.parameters():
            if p.name not in arrays:
                raise CompatibilityError(f"checkpoint is missing parameter {p.name!r}")
            if arrays[p.name].shape != p.data.shape:
                raise CompatibilityError(
                    f"checkpoint parameter {p.name!r} has shape {arrays[p.name].shape}, "
                    f"model expects {p.data.shape}"
                )
            p.data = arrays[p.name].astype(np.float64).copy()
            p.zero_grad()


def _resolve_input_dims(config, semantic_cache, quality_cache):
    dims = {}
    for tag in config.components:
        if tag == "q":
            if config.feature_source == "toy-backbone":
                ps = config.patch_size
                h, w, _ = config.image_shape
                dims["q"] = (h // ps) * (w // ps)
            else:
                if quality_cache is None:
                    raise ConfigError("component 'q' with cached source needs a quality cache")
                dims["q"] = quality_cache.hidden_size
        else:
            if semantic_cache is None:
                raise ConfigError(f"component {tag!r} needs a semantic cache")
            dims[tag] = semantic_cache.hidden_size
    return dims


def build_model(config: TrainConfig, semantic_cache=None, quality_cache=None) -> FusionModel:
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[0])
    input_dims = _resolve_input_dims(config, semantic_cache, quality_cache)
    afm_config = AfmConfig(
        input_dims=input_dims,
        d=config.d,
        dropout_rate=config.dropout_rate,
        components=config.components,
        moe=config.moe,
    )
    backbone = None
    if "q" in config.components and config.feature_source == "toy-backbone":
        backbone = ToyBackbone(
            ToyBackboneConfig(
                patch_size=config.patch_size,
                hidden=config.backbone_hidden,
                mixing_blocks=config.mixing_blocks,
                image_shape=config.image_shape,
            ),
            rng,
        )
    return FusionModel(AfmModel(afm_config, rng), backbone)


def _gather_features(config, manifest, ids, semantic_cache, quality_cache):
    """Per-id feature arrays for the cached pathways; fails before training
    if anything is missing."""
    features = {tag: [] for tag in config.components if not (tag == "q" and config.feature_source == "toy-backbone")}
    for image_id in ids:
        for tag in features:
            cache = quality_cache if tag == "q" else semantic_cache
            if cache is None:
                raise ConfigError(f"component {tag!r} needs a cache")
            features[tag].append(cache.get(image_id, tag))
    return {tag: np.stack(vals) for tag, vals in features.items()}


def _predict_batch(model: FusionModel, config, manifest, ids, cached, mode, rng=None):
    """Forward one batch of ids; returns a (len(ids),) tensor of scores."""
    if model.backbone is None:
        features = {tag: Tensor(arr) for tag, arr in cached.items()}
        return model.afm.forward(features, mode=mode, rng=rng)
    scores = []
    for row, image_id in enumerate(ids):
        record = manifest.by_id(image_id)
        image = load_image(record.source, config.image_shape)
        f1 = quality_feature(model.backbone.forward(image))
        features = {"q": f1}
        for tag in config.components:
            if tag != "q":
                features[tag] = Tensor(cached[tag][row])
        scores.append(model.afm.forward(features, mode=mode, rng=rng).reshape((1,)))
    return concat(scores, axis=0)


def _eval_predictions(model, config, manifest, ids, semantic_cache, quality_cache):
    cached = _gather_features(config, manifest, ids, semantic_cache, quality_cache)
    preds = _predict_batch(model, config, manifest, ids, cached, mode="eval")
    return preds.data.copy()


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    report: EvalReport | None
    degenerate: bool = False

    @property
    def criterion(self):
        return float("-inf") if self.report is None else self.report.criterion

    def line(self):
        if self.report is None:
            tail = "srcc=nan plcc=nan krcc=nan rmse=nan n=0 (degenerate validation)"
        else:
            tail = self.report.record()
        return f"epoch={self.epoch} loss={self.train_loss:.8f} {tail}"


@dataclass
class RunRecord:
    config: dict
    epochs: list
    selected_epoch: int
    checkpoint_path: str | None
    val_report: EvalReport | None
    model: FusionModel | None = field(default=None, repr=False)

    def log_lines(self):
        lines = [log.line() for log in self.epochs]
        lines.append(
            f"selected epoch={self.selected_epoch} "
            f"checkpoint={self.checkpoint_path or '-'}"
        )
        return lines


def train(config: TrainConfig, manifest, semantic_cache=None, quality_cache=None,
          checkpoint_path=None, log=None) -> RunRecord:
    """Run the full training protocol and return its RunRecord.

    ``log`` is an optional callable receiving one formatted line per
    epoch (the CLI passes print).
    """
    assignment = split(manifest, config.seed)
    train_ids = list(assignment.train)
    mos = manifest.mos_map()

    # Resolve every needed feature up front so missing entries abort
    # before any optimization work.
    train_cached = _gather_features(config, manifest, train_ids, semantic_cache, quality_cache)
    val_cached = _gather_features(config, manifest, assignment.val, semantic_cache, quality_cache)
    if model_needs_images(config):
        for image_id in list(train_ids) + list(assignment.val):
            load_image(manifest.by_id(image_id).source, config.image_shape)

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])

    model = build_model(config, semantic_cache, quality_cache)
    optimizer = Adam(model.parameters(), lr=config.lr)

    y_train = np.array([mos[i] for i in train_ids])
    y_val = np.array([mos[i] for i in assignment.val])

    epochs: list[EpochLog] = []
    best = None  # (criterion, epoch, params snapshot)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_ids))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch_ids = [train_ids[i] for i in idx]
            cached = {tag: arr[idx] for tag, arr in train_cached.items()}
            preds = _predict_batch(
                model, config, manifest, batch_ids, cached, mode="train", rng=dropout_rng
            )
            loss = mse_loss(preds, Tensor(y_train[idx]))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss_value * len(idx)
            count += len(idx)
        train_loss = total / count

        val_preds = _eval_predictions(
            model, config, manifest, assignment.val, semantic_cache, quality_cache
        )
        try:
            report = evaluate_pairs(val_preds, y_val)
            entry = EpochLog(epoch, train_loss, report)
        except UndefinedCorrelationError:
            entry = EpochLog(epoch, train_loss, None, degenerate=True)
        epochs.append(entry)
        if log is not None:
            log(entry.line())
        if best is None or entry.criterion > best[0]:
            snapshot = {p.name: p.data.copy() for p in model.parameters()}
            best = (entry.criterion, epoch, snapshot)

    _, selected_epoch, snapshot = best
    model.load_arrays(snapshot)

    record = RunRecord(
        config=config.to_dict(),
        epochs=epochs,
        selected_epoch=selected_epoch,
        checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
        val_report=epochs[selected_epoch - 1].report,
        model=model,
    )
    if checkpoint_path is not None:
        save_params(checkpoint_path, model.named_arrays(), config.to_dict())
    return record


def model_needs_images(config):
    return "q" in config.components and config.feature_source == "toy-backbone"


def load_checkpoint(path):
    """Rebuild a FusionModel (eval-ready) from a checkpoint file."""
    config_dict, arrays = load_params(path)
    config = TrainConfig.from_dict(config_dict)
    # Dedicated dim bootstrap: rebuild with caches' dims recorded in the
    # checkpoint, not whatever caches happen to be on disk now.
    dims = {}
    for tag in config.components:
        name = f"afm.trans_{tag}.affine.weight"
        if name not in arrays:
            raise CompatibilityError(f"checkpoint missing transform for component {tag!r}")
        dims[tag] = arrays[name].shape[1]
    model = _build_from_dims(config, dims)
    model.load_arrays(arrays)
    return model, config


def _build_from_dims(config: TrainConfig, input_dims):
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[0])
    afm_config = AfmConfig(
        input_dims=dict(input_dims),
        d=config.d,
        dropout_rate=config.dropout_rate,
        components=config.components,
        moe=config.moe,
    )
    backbone = None
    if model_needs_images(config):
        backbone = ToyBackbone(
            ToyBackboneConfig(
                patch_size=config.patch_size,
                hidden=config.backbone_hidden,
                mixing_blocks=config.mixing_blocks,
                image_shape=config.image_shape,
            ),
            rng,
        )
    return FusionModel(AfmModel(afm_config, rng), backbone)


def _check_cache_compat(config, model, semantic_cache, quality_cache):
    for tag in config.components:
        expected = model.afm.blocks[tag].affine.in_dim
        if tag == "q" and config.feature_source == "toy-backbone":
            continue
        cache = quality_cache if tag == "q" else semantic_cache
        if cache is None:
            raise ConfigError(f"component {tag!r} needs a cache for evaluation")
        if cache.hidden_size != expected:
            raise CompatibilityError(
                f"checkpoint expects dim {expected} for component {tag!r}, "
                f"cache provides {cache.hidden_size}"
            )


def evaluate(checkpoint_path, manifest, part, semantic_cache=None, quality_cache=None) -> EvalReport:
    """Eval-mode metrics for one split part of a manifest."""
    model, config = load_checkpoint(checkpoint_path)
    _check_cache_compat(config, model, semantic_cache, quality_cache)
    assignment = split(manifest, config.seed)
    ids = assignment.part(part)
    if not ids:
        raise DatasetTooSmallError(f"split part {part!r} is empty")
    preds = _eval_predictions(model, config, manifest, ids, semantic_cache, quality_cache)
    mos = manifest.mos_map()
    return evaluate_pairs(preds, np.array([mos[i] for i in ids]))


def cross_evaluate(checkpoint_path, other_manifest, semantic_cache=None, quality_cache=None) -> EvalReport:
    """Test-part evaluation on a different dataset, same seed policy."""
    return evaluate(checkpoint_path, other_manifest, "test", semantic_cache, quality_cache)


@dataclass
class AblationRow:
    components: tuple
    moe: bool
    run: RunRecord
    test_report: EvalReport


def ablate(config: TrainConfig, manifest, semantic_cache=None, quality_cache=None,
           checkpoint_dir=None, log=None) -> list:
    """All 7 component combinations (gated) plus the concatenation
    baseline for the full mask; every run shares the split seed."""
    import os

    rows = []
    variants = [(mask, True) for mask in ABLATION_MASKS] + [(("q", "a", "b"), False)]
    for mask, moe in variants:
        cfg_kwargs = config.to_dict()
        cfg_kwargs["components"] = mask
        cfg_kwargs["moe"] = moe
        run_config = TrainConfig.from_dict(cfg_kwargs)
        ckpt = None
        if checkpoint_dir is not None:
            tagname = "".join(mask) + ("_moe" if moe else "_concat")
            ckpt = os.path.join(checkpoint_dir, f"ablation_{tagname}.ckpt")
        if log is not None:
            log(f"# ablation components={','.join(mask)} moe={'on' if moe else 'off'}")
        record = train(
            run_config, manifest, semantic_cache, quality_cache, checkpoint_path=ckpt
        )
        preds_model = record.model
        assignment = split(manifest, run_config.seed)
        preds = _eval_predictions(
            preds_model, run_config, manifest, assignment.test, semantic_cache, quality_cache
        )
        mos = manifest.mos_map()
        report = evaluate_pairs(preds, np.array([mos[i] for i in assignment.test]))
        rows.append(AblationRow(mask, moe, record, report))
        if log is not None:
            log(f"# -> test {report.record()}")
    return rows


def format_ablation_table(rows):
    """Human table mirroring the component-combination ablation layout."""
    lines = [
        f"{'q':>3} {'a':>3} {'b':>3} {'moe':>6} {'SRCC↑':>9} {'PLCC↑':>9} {'KRCC↑':>9} {'RMSE↓':>9}"
    ]
    for row in rows:
        marks = ["x" if tag in row.components else "." for tag in ("q", "a", "b")]
        lines.append(
            f"{marks[0]:>3} {marks[1]:>3} {marks[2]:>3} {'on' if row.moe else 'off':>6} "
            f"{row.test_report.srcc:>9.4f} {row.test_report.plcc:>9.4f} "
            f"{row.test_report.krcc:>9.4f} {row.test_report.rmse:>9.4f}"
        )
    return "\n".join(lines)
