"""Training protocol: determinism, selection, evaluation, ablation."""

import os

import numpy as np
import pytest

from iqfusion.afm import load_params
from iqfusion.cache import SemanticCache
from iqfusion.data import DatasetManifest, ManifestRecord, generate_synthetic_manifest, split
from iqfusion.errors import (
    CompatibilityError,
    ConfigError,
    DatasetTooSmallError,
    DivergenceError,
    MissingFeatureError,
)
from iqfusion.metrics import EvalReport
from iqfusion.semantic import synth_features, synth_probe
from iqfusion.training import (
    ABLATION_MASKS,
    TrainConfig,
    ablate,
    cross_evaluate,
    evaluate,
    format_ablation_table,
    train,
)

DIM = 16


def make_dataset(n=120, seed=7, mos_signal=0.9):
    manifest = generate_synthetic_manifest(n, seed=seed)
    semantic = SemanticCache(DIM, synth_features(manifest, DIM, seed, mos_signal, tags=("a", "b")))
    quality = SemanticCache(DIM, synth_features(manifest, DIM, seed, mos_signal, tags=("q",)))
    return manifest, semantic, quality


@pytest.fixture(scope="module")
def dataset():
    return make_dataset()


def quick_config(**kwargs):
    defaults = dict(seed=7, epochs=4, batch_size=16, lr=1e-3, d=32)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestTrainLoop:
    def test_learns_separable_task(self, dataset):
        manifest, semantic, quality = dataset
        record = train(quick_config(epochs=6), manifest, semantic, quality)
        assert record.val_report.srcc >= 0.9

    def test_epochs_zero_rejected(self):
        with pytest.raises(ConfigError):
            quick_config(epochs=0)

    def test_determinism_loss_curves_and_checkpoints(self, dataset, tmp_path):
        manifest, semantic, quality = dataset

        def run(tag):
            path = tmp_path / f"{tag}.ckpt"
            record = train(quick_config(epochs=3), manifest, semantic, quality, checkpoint_path=path)
            return [e.train_loss for e in record.epochs], path.read_bytes()

        losses1, bytes1 = run("one")
        losses2, bytes2 = run("two")
        assert losses1 == losses2
        assert bytes1 == bytes2

    def test_missing_feature_fails_before_training(self, dataset):
        manifest, semantic, quality = dataset
        incomplete = SemanticCache(DIM, [e for e in semantic.entries if e.image_id != "img00003"])
        with pytest.raises(MissingFeatureError, match="img00003"):
            train(quick_config(epochs=1), manifest, incomplete, quality)

    def test_divergence_reports_epoch_and_batch(self, dataset):
        manifest, semantic, quality = dataset
        huge = DatasetManifest(
            "huge", [ManifestRecord(r.image_id, r.source, 1e200) for r in manifest.records]
        )
        with np.errstate(over="ignore"):
            with pytest.raises(DivergenceError, match="epoch 1"):
                train(quick_config(epochs=1), huge, semantic, quality)

    def test_selected_epoch_maximizes_criterion(self, dataset):
        manifest, semantic, quality = dataset
        record = train(quick_config(epochs=5), manifest, semantic, quality)
        best = record.epochs[record.selected_epoch - 1]
        assert all(best.criterion >= e.criterion for e in record.epochs)

    def test_train_mse_strictly_decreases_early(self, dataset):
        manifest, semantic, quality = dataset
        record = train(quick_config(epochs=3), manifest, semantic, quality)
        losses = [e.train_loss for e in record.epochs]
        assert losses[0] > losses[1] > losses[2]

    def test_log_lines_format(self, dataset):
        manifest, semantic, quality = dataset
        record = train(quick_config(epochs=2), manifest, semantic, quality)
        lines = record.log_lines()
        assert lines[0].startswith("epoch=1 loss=")
        assert "srcc=" in lines[0] and "plcc=" in lines[0]
        assert lines[-1].startswith("selected epoch=")


class TestEvaluate:
    def test_train_part_at_least_val_minus_margin(self, dataset, tmp_path):
        manifest, semantic, quality = dataset
        path = tmp_path / "m.ckpt"
        record = train(quick_config(epochs=4), manifest, semantic, quality, checkpoint_path=path)
        train_report = evaluate(path, manifest, "train", semantic, quality)
        assert train_report.srcc >= record.val_report.srcc - 0.05

    def test_checkpoint_reload_reproduces_predictions(self, dataset, tmp_path):
        manifest, semantic, quality = dataset
        path = tmp_path / "m.ckpt"
        train(quick_config(epochs=2), manifest, semantic, quality, checkpoint_path=path)
        first = evaluate(path, manifest, "test", semantic, quality)
        second = evaluate(path, manifest, "test", semantic, quality)
        assert first == second

    def test_perfect_oracle_checkpoint_gives_plcc_one(self, tmp_path):
        # hand-set regression on a linear toy: feature = [mos, junk...]
        n, dim = 40, 4
        manifest = generate_synthetic_manifest(n, seed=3)
        rng = np.random.default_rng(0)
        from iqfusion.cache import CacheEntry

        entries = []
        for record in manifest.records:
            base = rng.standard_normal(dim)
            base[0] = record.mos
            for tag in ("a", "b"):
                entries.append(CacheEntry(record.image_id, tag, base))
        semantic = SemanticCache(dim, entries)

        config = TrainConfig(seed=1, epochs=1, d=dim, components=("a", "b"), moe=False)
        from iqfusion.training import build_model

        model = build_model(config, semantic_cache=semantic)
        for p in model.parameters():
            p.data[:] = 0.0
        # transform 'a' passes the feature through; concat regression reads
        # coordinate 0 of the first half
        model.afm.blocks["a"].affine.weight.data[:] = np.eye(dim)
        model.afm.regression.weight.data[:] = 0.0
        model.afm.regression.weight.data[0, 0] = 1.0

        from iqfusion.afm import save_params

        path = tmp_path / "oracle.ckpt"
        save_params(path, model.named_arrays(), config.to_dict())
        report = evaluate(path, manifest, "test", semantic)
        assert report.plcc == pytest.approx(1.0, abs=1e-9)
        # features are stored as float32, so MOS comes back with ~1e-7 noise
        assert report.rmse == pytest.approx(0.0, abs=1e-5)

    def test_empty_part_rejected(self, dataset, tmp_path, monkeypatch):
        manifest, semantic, quality = dataset
        path = tmp_path / "m.ckpt"
        train(quick_config(epochs=1), manifest, semantic, quality, checkpoint_path=path)

        import iqfusion.training as training_mod

        real_split = training_mod.split

        def hollow_split(m, seed):
            assignment = real_split(m, seed)
            return type(assignment)(train=assignment.train, val=(), test=assignment.test, seed=seed)

        monkeypatch.setattr(training_mod, "split", hollow_split)
        with pytest.raises(DatasetTooSmallError, match="val"):
            evaluate(path, manifest, "val", semantic, quality)

    def test_dimension_incompatible_cache(self, dataset, tmp_path):
        manifest, semantic, quality = dataset
        path = tmp_path / "m.ckpt"
        train(quick_config(epochs=1), manifest, semantic, quality, checkpoint_path=path)
        other_manifest = generate_synthetic_manifest(40, seed=9)
        wrong = SemanticCache(8, synth_features(other_manifest, 8, 9, 0.9, tags=("a", "b")))
        wrong_q = SemanticCache(8, synth_features(other_manifest, 8, 9, 0.9, tags=("q",)))
        with pytest.raises(CompatibilityError, match="dim"):
            evaluate(path, other_manifest, "test", wrong, wrong_q)


class TestCrossEvaluate:
    def test_same_generator_transfers(self, dataset, tmp_path):
        manifest, semantic, quality = dataset
        path = tmp_path / "m.ckpt"
        train(quick_config(epochs=4), manifest, semantic, quality, checkpoint_path=path)
        in_domain = evaluate(path, manifest, "test", semantic, quality)

        other = generate_synthetic_manifest(100, seed=21)
        # same probe directions: reuse the training seed for the features
        sem_b = SemanticCache(DIM, synth_features(other, DIM, 7, 0.9, tags=("a", "b")))
        qual_b = SemanticCache(DIM, synth_features(other, DIM, 7, 0.9, tags=("q",)))
        transfer = cross_evaluate(path, other, sem_b, qual_b)
        assert transfer.srcc >= in_domain.srcc - 0.1

    def test_identical_manifest_equals_plain_evaluate(self, dataset, tmp_path):
        manifest, semantic, quality = dataset
        path = tmp_path / "m.ckpt"
        train(quick_config(epochs=2), manifest, semantic, quality, checkpoint_path=path)
        assert cross_evaluate(path, manifest, semantic, quality) == evaluate(
            path, manifest, "test", semantic, quality
        )


@pytest.fixture(scope="module")
def rows(tmp_path_factory):
    manifest, semantic, quality = make_dataset(n=60)
    out = tmp_path_factory.mktemp("ablate")
    config = quick_config(epochs=2, d=16)
    return ablate(config, manifest, semantic, quality, checkpoint_dir=str(out)), out


class TestAblate:
    def test_exactly_eight_rows_in_table_order(self, rows):
        rows, _ = rows
        assert len(rows) == 8
        assert [r.components for r in rows[:7]] == list(ABLATION_MASKS)
        assert all(r.moe for r in rows[:7])
        assert rows[7].components == ("q", "a", "b") and not rows[7].moe

    def test_single_feature_rows_have_no_gate(self, rows):
        rows, _ = rows
        for row in rows[:3]:
            assert row.run.model.afm.gate is None
        for row in rows[3:7]:
            assert row.run.model.afm.gate is not None
        assert rows[7].run.model.afm.gate is None

    def test_checkpoints_written_per_row(self, rows):
        _, out = rows
        names = sorted(os.listdir(out))
        assert len([n for n in names if n.endswith(".ckpt")]) == 8

    def test_table_structure(self, rows):
        rows, _ = rows
        table = format_ablation_table(rows)
        lines = table.splitlines()
        assert len(lines) == 9  # header + 8 rows
        assert "SRCC↑" in lines[0] and "RMSE↓" in lines[0]
        assert lines[1].split()[:4] == ["x", ".", ".", "on"]
        assert lines[8].split()[:4] == ["x", "x", "x", "off"]


class TestToyBackboneSource:
    def test_end_to_end_training_runs_and_learns(self):
        manifest = generate_synthetic_manifest(20, seed=5)
        semantic = SemanticCache(DIM, synth_features(manifest, DIM, 5, 0.9, tags=("a", "b")))
        config = TrainConfig(
            seed=5,
            epochs=3,
            batch_size=8,
            lr=1e-3,
            d=16,
            feature_source="toy-backbone",
            image_shape=(16, 16, 1),
            backbone_hidden=6,
            mixing_blocks=1,
        )
        record = train(config, manifest, semantic)
        losses = [e.train_loss for e in record.epochs]
        assert losses[-1] < losses[0]
        assert record.model.backbone is not None

    def test_checkpoint_round_trip_with_backbone(self, tmp_path):
        manifest = generate_synthetic_manifest(20, seed=5)
        semantic = SemanticCache(DIM, synth_features(manifest, DIM, 5, 0.9, tags=("a", "b")))
        config = TrainConfig(
            seed=5, epochs=1, batch_size=8, d=16,
            feature_source="toy-backbone", image_shape=(16, 16, 1),
            backbone_hidden=6, mixing_blocks=1,
        )
        path = tmp_path / "toy.ckpt"
        train(config, manifest, semantic, checkpoint_path=path)
        report = evaluate(path, manifest, "test", semantic)
        assert isinstance(report, EvalReport)
        cfg, arrays = load_params(path)
        assert any(name.startswith("backbone.") for name in arrays)
