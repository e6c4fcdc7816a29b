"""
Command-line entry point: train, deblur, evaluate, audit and synth.

Every command catches library errors, logs them and exits with status 1 after
printing `Error <doing thing>: <message>`.
"""

import dataclasses
import inspect
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, get_type_hints

import typer
from dotenv import load_dotenv
from loguru import logger

from deblur_gan.architecture import (
    audit_architecture,
    audit_summary,
    discriminator_spec,
    generator_spec,
)
from deblur_gan.config import TrainConfig, load_train_config, valid_keys
from deblur_gan.errors import ConfigError, DeblurGanError
from deblur_gan.metrics import CHANNEL_MODES
from deblur_gan.services.dataset_service import (
    IMAGE_SUFFIXES,
    make_synthetic_dataset,
    scan_manifest,
)
from deblur_gan.services.evaluation_service import (
    DEFAULT_PATCH,
    DEFAULT_STRIDE,
    EvaluationService,
)
from deblur_gan.services.training_service import load_checkpoint, load_generator
from deblur_gan.services.training_service import train as run_training

load_dotenv()

app = typer.Typer(help="Motion deblurring GAN workbench.", no_args_is_help=True)


def _fail(doing: str, e: Exception):
    logger.error(f"Error {doing}: {str(e)}")
    typer.echo(f"Error {doing}: {str(e)}", err=True)
    raise typer.Exit(code=1)


@app.callback()
def configure_logging():
    """Send logs to stderr and, unless DEBLUR_GAN_LOG_FILE is empty, to a file."""
    level = os.getenv("DEBLUR_GAN_LOG_LEVEL", "INFO").upper()
    log_file = os.getenv("DEBLUR_GAN_LOG_FILE", "deblur_gan.log")
    logger.remove()
    logger.add(sys.stderr, level=level)
    if log_file:
        logger.add(log_file, level=level, encoding="utf-8")


def _override_option(field: dataclasses.Field, kind: type) -> inspect.Parameter:
    names = {f"--{field.name}", f"--{field.name.replace('_', '-')}"}
    # booleans travel as text so "true"/"false"/"1"/"0" all work, as in config files
    annotation = Optional[str] if kind is bool else Optional[kind]
    return inspect.Parameter(
        field.name,
        inspect.Parameter.KEYWORD_ONLY,
        default=typer.Option(
            None, *sorted(names), help=f"Override {field.name} (default {field.default})."
        ),
        annotation=annotation,
    )


def _train_command(config: Optional[Path], resume: Optional[Path], **overrides: Any):
    """Train the generator and critic; writes checkpoints and steps.tsv to output_dir."""
    try:
        train_config = load_train_config(config, overrides)
    except DeblurGanError as e:
        _fail("loading config", e)
    if not train_config.dataset_root:
        _fail(
            "training",
            ConfigError("dataset_root is not set (--dataset-root or DEBLUR_GAN_DATASET_ROOT)"),
        )
    try:
        checkpoint = load_checkpoint(resume, train_config) if resume else None
        final = run_training(train_config, resume=checkpoint)
    except (DeblurGanError, OSError) as e:
        _fail("training", e)
    typer.echo(
        f"Training finished: {final.epochs_completed} epoch(s), {final.steps_completed} step(s); "
        f"checkpoints in {train_config.output_dir}"
    )


def _register_train():
    hints = get_type_hints(TrainConfig)
    params = [
        inspect.Parameter(
            "config",
            inspect.Parameter.KEYWORD_ONLY,
            default=typer.Option(None, "--config", help="Key-value config file."),
            annotation=Optional[Path],
        ),
        inspect.Parameter(
            "resume",
            inspect.Parameter.KEYWORD_ONLY,
            default=typer.Option(None, "--resume", help="Checkpoint to continue from."),
            annotation=Optional[Path],
        ),
    ]
    params += [_override_option(f, hints[f.name]) for f in dataclasses.fields(TrainConfig)]

    def train(**kwargs: Any):
        config = kwargs.pop("config")
        resume = kwargs.pop("resume")
        _train_command(config, resume, **kwargs)

    train.__doc__ = _train_command.__doc__ + f"\n\nValid keys: {', '.join(valid_keys())}"
    train.__signature__ = inspect.Signature(params)
    train.__annotations__ = {p.name: p.annotation for p in params}
    app.command("train")(train)


_register_train()


def _input_images(source: Path) -> List[Path]:
    if source.is_dir():
        return sorted(
            p for p in source.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
    return [source]


@app.command()
def deblur(
    checkpoint: Path = typer.Argument(..., help="Trained checkpoint."),
    source: Path = typer.Argument(..., help="Image file or directory of images."),
    output: Path = typer.Argument(..., help="Output PNG file, or directory for several inputs."),
    patch: int = typer.Option(DEFAULT_PATCH, help="Inference tile size."),
    stride: int = typer.Option(DEFAULT_STRIDE, help="Tile stride."),
    device: str = typer.Option("cpu", envvar="DEBLUR_GAN_DEVICE", help="Torch device."),
):
    """Deblur one image or every image in a directory; outputs are PNG."""
    try:
        generator = load_generator(load_checkpoint(checkpoint), device=device)
    except DeblurGanError as e:
        _fail("loading checkpoint", e)
    service = EvaluationService(generator, patch=patch, stride=stride, device=device)

    try:
        images = _input_images(source)
        if not images or not images[0].exists():
            raise FileNotFoundError(f"no input images at {source}")
        to_directory = source.is_dir() or output.suffix == ""
        for image in images:
            target = output / f"{image.stem}.png" if to_directory else output.with_suffix(".png")
            service.deblur_file(image, target)
            logger.info(f"Deblurred {image} -> {target}")
    except (DeblurGanError, OSError) as e:
        _fail("deblurring", e)
    typer.echo(f"Deblurred {len(images)} image(s) into {output}")


@app.command()
def evaluate(
    dataset_root: Path = typer.Argument(..., help="Dataset root with <split>/<seq>/{blur,sharp}."),
    checkpoint: Optional[Path] = typer.Option(None, help="Trained checkpoint."),
    split: str = typer.Option("test", help="Dataset split to score."),
    identity: bool = typer.Option(False, help="Score the blurred inputs themselves (baseline)."),
    patchwise: bool = typer.Option(False, help="Score non-overlapping patches separately."),
    ssim_channels: str = typer.Option(
        "luma", help=f"SSIM channel mode: {', '.join(CHANNEL_MODES)}."
    ),
    patch: int = typer.Option(DEFAULT_PATCH, help="Inference tile size."),
    stride: int = typer.Option(DEFAULT_STRIDE, help="Tile stride."),
    index: Optional[Path] = typer.Option(
        None, help="Per-image index file (default evaluation_<split>.tsv)."
    ),
    device: str = typer.Option("cpu", envvar="DEBLUR_GAN_DEVICE", help="Torch device."),
):
    """Print the metric report (metric, max, min, mean) and write the per-image index."""
    if checkpoint is None and not identity:
        _fail("evaluating", ValueError("a checkpoint is required unless --identity is given"))
    if ssim_channels not in CHANNEL_MODES:
        _fail("evaluating", ValueError(f"--ssim-channels must be one of {CHANNEL_MODES}"))
    try:
        manifest = scan_manifest(dataset_root, split)
        generator = None
        if not identity:
            generator = load_generator(load_checkpoint(checkpoint), device=device)
        service = EvaluationService(
            generator, patch=patch, stride=stride, ssim_channels=ssim_channels, device=device
        )
        report = service.evaluate_dataset(manifest, patchwise=patchwise)
        index_path = index or Path(f"evaluation_{split}.tsv")
        index_path.parent.mkdir(parents=True, exist_ok=True)
        index_path.write_text(report.to_index())
    except (DeblurGanError, OSError) as e:
        _fail("evaluating", e)
    typer.echo(report.to_table())
    typer.echo(f"Per-image scores written to {index_path}")


@app.command()
def audit():
    """Print the generator and discriminator parameter audits."""
    reports = [audit_architecture(generator_spec()), audit_architecture(discriminator_spec())]
    for report in reports:
        typer.echo(report.to_table())
        typer.echo("")
    summary = audit_summary(reports)
    typer.echo(f"Combined grand total: {summary['combined_grand_total']}")
    typer.echo(
        f"Combined declared summary total: {summary['combined_declared_total']} "
        f"(quoted as about {summary['quoted_gan_total'] / 1e6:.1f}M)"
    )
    for report in reports:
        if report.discrepancy_is_known:
            typer.echo(
                f"{report.network}: summary total discrepancy {report.total_discrepancy} "
                "(known, documented)"
            )
    if not summary["per_layer_ok"]:
        mismatches: Dict[str, List[str]] = {r.network: r.mismatches for r in reports}
        logger.error(f"Per-layer parameter counts deviate from the declared tables: {mismatches}")
        raise typer.Exit(code=1)
    if summary["unexplained_total_mismatches"]:
        typer.echo(
            "Unexplained summary total mismatch: "
            + ", ".join(summary["unexplained_total_mismatches"])
        )


@app.command()
def synth(
    n: int = typer.Argument(..., help="Number of pairs."),
    size: int = typer.Argument(..., help="Square image size in pixels (>= 32)."),
    seed: int = typer.Argument(..., help="Random seed."),
    out: Path = typer.Argument(..., help="Dataset root to write."),
    split: str = typer.Option("train", help="Split to write."),
):
    """Write seeded synthetic blur/sharp pairs in the dataset layout."""
    try:
        manifest = make_synthetic_dataset(n, size, seed, out, split=split)
    except DeblurGanError as e:
        _fail("generating synthetic data", e)
    typer.echo(f"Wrote {len(manifest)} pair(s) to {out / split} (seed {seed})")
    for entry in manifest.entries:
        typer.echo(f"{entry.id}\t{entry.blur_path}\t{entry.sharp_path}")


def main():
    app()


if __name__ == "__main__":
    main()
