"""Command-line surface.

Commands: gen-synth, train, eval, ablate, cross, cache-info. Exit codes
are a stable contract: 0 success, 1 runtime error, 2 usage/config error.
Randomized commands require an explicit seed; nothing is ever seeded
from the clock. ``train``, ``ablate``, and ``cross`` accept a line-based
key=value config file with [data] and [train] sections; command-line
flags override file values, and every run emits a config echo that
reproduces it byte for byte.

Machine-readable output lines and their field order:
    EPOCH  epoch= loss= srcc= plcc= krcc= rmse= n=
    RESULT part= srcc= plcc= krcc= rmse= n=
    ABLATION components= moe= srcc= plcc= krcc= rmse= n=
"""

from __future__ import annotations

import configparser
import os
import sys

import click

from .cache import describe_cache, read_cache, write_cache
from .data import generate_synthetic_manifest, load_manifest, save_manifest
from .errors import ConfigError, IQFusionError
from .semantic import synth_features, write_prompt_registry
from .training import (
    TrainConfig,
    ablate,
    cross_evaluate,
    evaluate,
    format_ablation_table,
    train,
)

_DATA_KEYS = ("manifest", "semantic_cache", "quality_cache", "out")
_TRAIN_KEYS = (
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "d",
    "dropout_rate",
    "feature_source",
    "moe",
    "components",
    "patch_size",
    "backbone_hidden",
    "mixing_blocks",
    "image_shape",
)


def read_config_file(path):
    """Parse the [data]/[train] key=value config format."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"config file {path}: {exc}")
    values = {"data": {}, "train": {}}
    for section in parser.sections():
        if section not in values:
            raise ConfigError(f"config file {path}: unknown section [{section}]")
        allowed = _DATA_KEYS if section == "data" else _TRAIN_KEYS
        for key, value in parser.items(section):
            if key not in allowed:
                raise ConfigError(
                    f"config file {path}: unknown key {key!r} in section [{section}]"
                )
            values[section][key] = value
    return values


def _coerce_train_values(raw):
    """String key=value pairs to TrainConfig kwargs."""
    out = {}
    for key, value in raw.items():
        if key in ("seed", "epochs", "batch_size", "d", "patch_size", "backbone_hidden", "mixing_blocks"):
            out[key] = int(value)
        elif key in ("lr", "dropout_rate"):
            out[key] = float(value)
        elif key == "moe":
            lowered = str(value).strip().lower()
            if lowered not in ("true", "false", "on", "off", "1", "0"):
                raise ConfigError(f"moe must be a boolean, got {value!r}")
            out[key] = lowered in ("true", "on", "1")
        elif key == "components":
            parts = tuple(p.strip() for p in str(value).split(",") if p.strip())
            out[key] = parts
        elif key == "image_shape":
            dims = tuple(int(p) for p in str(value).split(",") if p.strip())
            if len(dims) != 3:
                raise ConfigError(f"image_shape needs 3 comma-separated ints, got {value!r}")
            out[key] = dims
        elif key == "feature_source":
            out[key] = str(value).strip()
        else:
            raise ConfigError(f"unknown train key {key!r}")
    return out


def build_train_config(config_path, flag_data, flag_train):
    """Merge config file and flags (flags win); returns (TrainConfig, data paths)."""
    file_values = read_config_file(config_path) if config_path else {"data": {}, "train": {}}
    data = dict(file_values["data"])
    data.update({k: v for k, v in flag_data.items() if v is not None})
    train_raw = dict(file_values["train"])
    train_raw.update({k: str(v) for k, v in flag_train.items() if v is not None})
    if "seed" not in train_raw:
        raise ConfigError("a seed is required (config [train] seed= or --seed)")
    try:
        config = TrainConfig(**_coerce_train_values(train_raw))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training config: {exc}")
    return config, data


def write_config_echo(path, config: TrainConfig, data):
    """Echo the effective run config in the input file format."""
    lines = ["[data]"]
    for key in _DATA_KEYS:
        if data.get(key):
            lines.append(f"{key} = {data[key]}")
    lines.append("")
    lines.append("[train]")
    cfg = config.to_dict()
    for key in _TRAIN_KEYS:
        value = cfg[key]
        if key == "components":
            value = ",".join(value)
        elif key == "image_shape":
            value = ",".join(str(v) for v in value)
        elif key == "moe":
            value = "true" if value else "false"
        elif key == "lr":
            value = repr(value)
        lines.append(f"{key} = {value}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_caches(data):
    semantic = read_cache(data["semantic_cache"]) if data.get("semantic_cache") else None
    quality = read_cache(data["quality_cache"]) if data.get("quality_cache") else None
    return semantic, quality


def _require(data, key, hint):
    if not data.get(key):
        raise ConfigError(f"missing {key!r}: pass {hint} or set it in the config file")
    return data[key]


@click.group()
def cli():
    """Quality-score fusion: training, evaluation, and data tooling."""


@cli.command("gen-synth")
@click.option("--n", type=int, default=500, show_default=True, help="Number of images.")
@click.option("--dim", type=int, default=64, show_default=True, help="Feature dimension.")
@click.option("--seed", type=int, required=True, help="Generator seed (required).")
@click.option("--mos-signal", type=float, default=0.9, show_default=True,
              help="Fraction of each feature aligned with MOS (0..1).")
@click.option("--mos-min", type=float, default=1.0, show_default=True)
@click.option("--mos-max", type=float, default=5.0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
def cmd_gen_synth(n, dim, seed, mos_signal, mos_min, mos_max, out):
    """Generate a synthetic manifest plus semantic and quality caches."""
    os.makedirs(out, exist_ok=True)
    manifest = generate_synthetic_manifest(n, seed, mos_range=(mos_min, mos_max))
    manifest_path = os.path.join(out, "manifest.csv")
    save_manifest(manifest, manifest_path)

    semantic_path = os.path.join(out, "semantic.cache")
    crc_sem = write_cache(semantic_path, synth_features(manifest, dim, seed, mos_signal, tags=("a", "b")))
    quality_path = os.path.join(out, "quality.cache")
    crc_q = write_cache(quality_path, synth_features(manifest, dim, seed, mos_signal, tags=("q",)))
    prompts_path = os.path.join(out, "prompts.txt")
    write_prompt_registry(prompts_path)

    with open(os.path.join(out, "gen_config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(
            "[gen-synth]\n"
            f"n = {n}\ndim = {dim}\nseed = {seed}\nmos_signal = {repr(mos_signal)}\n"
            f"mos_min = {repr(mos_min)}\nmos_max = {repr(mos_max)}\n"
        )
    click.echo(f"manifest: {manifest_path} ({n} records)")
    click.echo(f"semantic cache: {semantic_path} (crc32 {crc_sem:#010x})")
    click.echo(f"quality cache: {quality_path} (crc32 {crc_q:#010x})")
    click.echo(f"prompts: {prompts_path}")


def _data_flags(f):
    f = click.option("--manifest", type=click.Path(exists=True), default=None)(f)
    f = click.option("--semantic-cache", "semantic_cache", type=click.Path(exists=True), default=None)(f)
    f = click.option("--quality-cache", "quality_cache", type=click.Path(exists=True), default=None)(f)
    f = click.option("--out", type=click.Path(), default=None)(f)
    return f


def _train_flags(f):
    f = click.option("--seed", type=int, default=None)(f)
    f = click.option("--epochs", type=int, default=None)(f)
    f = click.option("--batch-size", "batch_size", type=int, default=None)(f)
    f = click.option("--lr", type=float, default=None)(f)
    f = click.option("--d", type=int, default=None)(f)
    f = click.option("--dropout-rate", "dropout_rate", type=float, default=None)(f)
    f = click.option("--feature-source", "feature_source",
                     type=click.Choice(["cached", "toy-backbone"]), default=None)(f)
    f = click.option("--moe/--no-moe", "moe", default=None)(f)
    f = click.option("--components", type=str, default=None,
                     help="Comma-separated subset of q,a,b.")(f)
    return f


def _collect_train_flags(seed, epochs, batch_size, lr, d, dropout_rate, feature_source, moe, components):
    return {
        "seed": seed,
        "epochs": epochs,
        "batch_size": batch_size,
        "lr": lr,
        "d": d,
        "dropout_rate": dropout_rate,
        "feature_source": feature_source,
        "moe": moe,
        "components": components,
    }


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_data_flags
@_train_flags
def cmd_train(config_path, manifest, semantic_cache, quality_cache, out, **train_flags):
    """Train a fusion model and checkpoint the best validation epoch."""
    config, data = build_train_config(
        config_path,
        {"manifest": manifest, "semantic_cache": semantic_cache,
         "quality_cache": quality_cache, "out": out},
        _collect_train_flags(**train_flags),
    )
    manifest_obj = load_manifest(_require(data, "manifest", "--manifest"))
    out_dir = _require(data, "out", "--out")
    os.makedirs(out_dir, exist_ok=True)
    semantic, quality = _load_caches(data)

    checkpoint = os.path.join(out_dir, "checkpoint.ckpt")
    write_config_echo(os.path.join(out_dir, "config_echo.cfg"), config, data)
    record = train(
        config, manifest_obj, semantic, quality,
        checkpoint_path=checkpoint,
        log=lambda line: click.echo(f"EPOCH {line}"),
    )
    with open(os.path.join(out_dir, "train_log.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(record.log_lines()) + "\n")
    click.echo(f"selected epoch={record.selected_epoch} checkpoint={checkpoint}")
    if record.val_report is not None:
        click.echo(record.val_report.table())


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--part", type=click.Choice(["train", "val", "test"]), default="test",
              show_default=True)
@_data_flags
def cmd_eval(checkpoint, part, manifest, semantic_cache, quality_cache, out):
    """Evaluate a checkpoint on one part of a manifest's split."""
    if manifest is None:
        raise ConfigError("missing 'manifest': pass --manifest")
    manifest_obj = load_manifest(manifest)
    semantic, quality = _load_caches(
        {"semantic_cache": semantic_cache, "quality_cache": quality_cache}
    )
    report = evaluate(checkpoint, manifest_obj, part, semantic, quality)
    click.echo(report.table())
    click.echo(f"RESULT part={part} {report.record()}")


@cli.command("cross")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@_data_flags
def cmd_cross(checkpoint, manifest, semantic_cache, quality_cache, out):
    """Evaluate a checkpoint on another dataset's test part."""
    if manifest is None:
        raise ConfigError("missing 'manifest': pass --manifest (the target dataset)")
    manifest_obj = load_manifest(manifest)
    semantic, quality = _load_caches(
        {"semantic_cache": semantic_cache, "quality_cache": quality_cache}
    )
    report = cross_evaluate(checkpoint, manifest_obj, semantic, quality)
    click.echo(f"direction: checkpoint -> {manifest_obj.name} (test part)")
    click.echo(report.table())
    click.echo(f"RESULT part=test {report.record()}")


@cli.command("ablate")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_data_flags
@_train_flags
def cmd_ablate(config_path, manifest, semantic_cache, quality_cache, out, **train_flags):
    """Train all 7 component combinations plus the concat baseline."""
    config, data = build_train_config(
        config_path,
        {"manifest": manifest, "semantic_cache": semantic_cache,
         "quality_cache": quality_cache, "out": out},
        _collect_train_flags(**train_flags),
    )
    manifest_obj = load_manifest(_require(data, "manifest", "--manifest"))
    out_dir = _require(data, "out", "--out")
    os.makedirs(out_dir, exist_ok=True)
    semantic, quality = _load_caches(data)
    write_config_echo(os.path.join(out_dir, "config_echo.cfg"), config, data)

    rows = ablate(config, manifest_obj, semantic, quality, checkpoint_dir=out_dir)
    click.echo(format_ablation_table(rows))
    for row in rows:
        click.echo(
            f"ABLATION components={','.join(row.components)} "
            f"moe={'on' if row.moe else 'off'} {row.test_report.record()}"
        )


@cli.command("cache-info")
@click.argument("path", type=click.Path(exists=True))
def cmd_cache_info(path):
    """Validate a cache file and print its header and per-tag counts."""
    from .errors import CacheFormatError

    try:
        info = describe_cache(path)
    except CacheFormatError as exc:
        click.echo(f"checksum FAIL: {exc}")
        sys.exit(1)
    click.echo(f"magic: {info['magic']}")
    click.echo(f"version: {info['version']}")
    click.echo(f"hidden_size: {info['hidden_size']}")
    click.echo(f"entries: {info['entry_count']}")
    for tag in sorted(info["tag_counts"]):
        click.echo(f"tag {tag}: {info['tag_counts'][tag]}")
    click.echo("checksum OK")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except IQFusionError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
