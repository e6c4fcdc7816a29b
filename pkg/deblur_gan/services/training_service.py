import copy
import hashlib
import io
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, TypedDict, Union

import torch
from loguru import logger
from torch import nn

from deblur_gan.architecture import discriminator_spec, generator_spec
from deblur_gan.config import TrainConfig, write_config_file
from deblur_gan.errors import CheckpointError, LossError, TrainingAbortedError
from deblur_gan.losses import (
    FeatureExtractor,
    gan_value_estimate,
    generator_loss_terms,
    make_extractor,
    wasserstein_critic_loss,
)
from deblur_gan.networks import (
    NetworkHandle,
    build_discriminator,
    build_generator,
    discriminator_forward,
    frozen_statistics,
    generator_forward,
    parameter_digest,
)
from deblur_gan.services.dataset_service import (
    DatasetManifest,
    PairedPatchDataset,
    make_loader,
    scan_manifest,
)
from deblur_gan.utils.image_core import ImageTensor
from deblur_gan.utils.seeding import set_seed

# Checkpoint container: magic, format version, payload length, SHA-256 of payload
CHECKPOINT_MAGIC = b"DBGANCKP"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = struct.Struct(">8sHQ32s")

STEP_LOG_NAME = "steps.tsv"
CONFIG_COPY_NAME = "config.env"


class StepReport(TypedDict):
    step: int
    d_loss: float
    g_loss_total: float
    g_perceptual: float
    g_adversarial: float
    minimax_value: float
    wall_time: float


STEP_REPORT_FIELDS = tuple(StepReport.__annotations__)
# wall_time is the only field allowed to differ between two seeded runs
DETERMINISTIC_FIELDS = tuple(f for f in STEP_REPORT_FIELDS if f != "wall_time")


@dataclass
class Checkpoint:
    generator_state: Dict[str, torch.Tensor]
    discriminator_state: Dict[str, torch.Tensor]
    generator_optimizer_state: Dict[str, Any]
    discriminator_optimizer_state: Dict[str, Any]
    epochs_completed: int
    steps_completed: int
    config: Dict[str, Any]
    config_fingerprint: str

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.config)


def make_optimizer(params: Iterable[nn.Parameter], config: TrainConfig) -> torch.optim.Adam:
    """Adam with the configured rate, betas and epsilon."""
    return torch.optim.Adam(
        params,
        lr=config.learning_rate,
        betas=(config.beta_1, config.beta_2),
        eps=config.epsilon,
    )


def format_step_report(report: StepReport) -> str:
    return "\t".join(
        str(report[f]) if f == "step" else repr(float(report[f])) for f in STEP_REPORT_FIELDS
    )


class StepLog:
    """Tab-separated StepReport log with a header row."""

    def __init__(self, path: Union[str, Path], append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not (append and self.path.exists()):
            self.path.write_text("\t".join(STEP_REPORT_FIELDS) + "\n")

    def write(self, report: StepReport):
        with self.path.open("a") as handle:
            handle.write(format_step_report(report) + "\n")


def read_step_log(path: Union[str, Path]) -> list:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        values = line.split("\t")
        rows.append(
            {k: int(v) if k == "step" else float(v) for k, v in zip(header, values)}
        )
    return rows


def _state_copy(module: nn.Module) -> Dict[str, torch.Tensor]:
    return {k: v.detach().cpu().clone() for k, v in module.state_dict().items()}


class TrainingService:
    def __init__(
        self,
        config: TrainConfig,
        extractor: Optional[FeatureExtractor] = None,
        verify_frozen: bool = False,
    ):
        """
        Build both networks, their optimizers and the feature extractor.

        Args:
            config: Training configuration
            extractor: Feature extractor override (defaults to config.extractor)
            verify_frozen: Hash parameters around each sub-step to prove the
                frozen network did not move
        """
        self.config = config
        self.device = torch.device(config.device)
        self.verify_frozen = verify_frozen
        set_seed(config.seed)

        self.generator = build_generator(
            generator_spec(config.width_divisor, config.upsample_mode), seed=config.seed
        ).to(self.device)
        self.discriminator = build_discriminator(
            discriminator_spec(config.width_divisor), seed=config.seed + 1
        ).to(self.device)

        self.extractor = extractor or make_extractor(
            config.extractor, config.extractor_layer, seed=config.seed
        )
        if hasattr(self.extractor, "to"):
            self.extractor.to(self.device)
        self.loss_weights = config.loss_weights

        self.g_optimizer = make_optimizer(self.generator.module.parameters(), config)
        self.d_optimizer = make_optimizer(self.discriminator.module.parameters(), config)

        self.epochs_completed = 0
        self.steps_completed = 0
        logger.info(
            f"Initialized training service (fingerprint {config.fingerprint()[:12]}, "
            f"generator {self.generator.parameter_count} params, "
            f"discriminator {self.discriminator.parameter_count} params)"
        )

    @classmethod
    def from_checkpoint(
        cls,
        checkpoint: Checkpoint,
        config: Optional[TrainConfig] = None,
        extractor: Optional[FeatureExtractor] = None,
    ) -> "TrainingService":
        """Rebuild a service from a checkpoint; `config` may extend the run (e.g. more epochs)."""
        config = config or checkpoint.train_config
        if config.fingerprint() != checkpoint.config_fingerprint:
            logger.warning(
                "Resuming with a config whose fingerprint differs from the checkpoint's "
                f"({config.fingerprint()[:12]} vs {checkpoint.config_fingerprint[:12]})"
            )
        service = cls(config, extractor=extractor)
        service.restore(checkpoint)
        return service

    def restore(self, checkpoint: Checkpoint):
        self.generator.module.load_state_dict(checkpoint.generator_state)
        self.discriminator.module.load_state_dict(checkpoint.discriminator_state)
        self.g_optimizer.load_state_dict(checkpoint.generator_optimizer_state)
        self.d_optimizer.load_state_dict(checkpoint.discriminator_optimizer_state)
        self.epochs_completed = checkpoint.epochs_completed
        self.steps_completed = checkpoint.steps_completed

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            generator_state=_state_copy(self.generator.module),
            discriminator_state=_state_copy(self.discriminator.module),
            generator_optimizer_state=copy.deepcopy(self.g_optimizer.state_dict()),
            discriminator_optimizer_state=copy.deepcopy(self.d_optimizer.state_dict()),
            epochs_completed=self.epochs_completed,
            steps_completed=self.steps_completed,
            config=self.config.to_dict(),
            config_fingerprint=self.config.fingerprint(),
        )

    def _clip_critic(self):
        clip = self.config.critic_clip
        if clip > 0:
            with torch.no_grad():
                for param in self.discriminator.module.parameters():
                    param.clamp_(-clip, clip)

    def _check_unchanged(self, net: NetworkHandle, before: Optional[str], label: str):
        if before is not None and parameter_digest(net) != before:
            raise TrainingAbortedError(f"{label} parameters changed while frozen")

    def _minimax_value(self, scores_real: torch.Tensor, scores_fake: torch.Tensor) -> float:
        try:
            return gan_value_estimate(scores_real, scores_fake)
        except LossError:
            # NaN scores; the caller's finiteness check aborts the run
            return math.nan

    def _abort_if_not_finite(self, report: StepReport):
        if all(math.isfinite(report[f]) for f in DETERMINISTIC_FIELDS):
            return
        logger.error(f"Non-finite loss at step {report['step']}: {report}")
        raise TrainingAbortedError(
            f"Non-finite loss at step {report['step']}; training aborted", report
        )

    def train_step(self, blur: ImageTensor, sharp: ImageTensor) -> StepReport:
        """
        One round of the alternating protocol on a normalized patch batch.

        The critic takes critic_steps_per_gen_step updates on D(sharp) vs D(G(blur))
        with the generator frozen (weights and running statistics); then the
        generator takes one update on the weighted perceptual + adversarial loss
        with the critic frozen. The minimax value is estimated on the scores of
        the last critic update.

        Losses are checked before each optimizer step, so an aborted step leaves
        the weights as they were after the last good step.

        Raises:
            TrainingAbortedError: If any reported loss is not finite
        """
        started = time.perf_counter()
        step = self.steps_completed + 1
        blur = blur.to(self.device)
        sharp = sharp.to(self.device)
        self.generator.module.train()
        self.discriminator.module.train()

        g_before = parameter_digest(self.generator) if self.verify_frozen else None
        for _ in range(self.config.critic_steps_per_gen_step):
            with torch.no_grad(), frozen_statistics(self.generator):
                fake = generator_forward(self.generator, blur)
            scores_real = discriminator_forward(self.discriminator, sharp)
            scores_fake = discriminator_forward(self.discriminator, fake)
            critic_real, critic_fake = scores_real.detach(), scores_fake.detach()
            d_loss = wasserstein_critic_loss(scores_real, scores_fake)
            if not torch.isfinite(d_loss):
                self._abort_if_not_finite(
                    StepReport(
                        step=step,
                        d_loss=float(d_loss.detach()),
                        g_loss_total=math.nan,
                        g_perceptual=math.nan,
                        g_adversarial=math.nan,
                        minimax_value=self._minimax_value(critic_real, critic_fake),
                        wall_time=time.perf_counter() - started,
                    )
                )
            self.d_optimizer.zero_grad(set_to_none=True)
            d_loss.backward()
            self.d_optimizer.step()
            self._clip_critic()
        self._check_unchanged(self.generator, g_before, "Generator")

        d_before = parameter_digest(self.discriminator) if self.verify_frozen else None
        self.discriminator.module.requires_grad_(False)
        try:
            fake = generator_forward(self.generator, blur)
            g_scores = discriminator_forward(self.discriminator, fake)
            g_total, g_perceptual, g_adversarial = generator_loss_terms(
                sharp, fake, g_scores, self.extractor, self.loss_weights
            )
            report = StepReport(
                step=step,
                d_loss=float(d_loss.detach()),
                g_loss_total=float(g_total.detach()),
                g_perceptual=float(g_perceptual.detach()),
                g_adversarial=float(g_adversarial.detach()),
                minimax_value=self._minimax_value(critic_real, critic_fake),
                wall_time=0.0,
            )
            self._abort_if_not_finite(report)
            self.g_optimizer.zero_grad(set_to_none=True)
            g_total.backward()
            self.g_optimizer.step()
        finally:
            self.discriminator.module.requires_grad_(True)
        self._check_unchanged(self.discriminator, d_before, "Discriminator")

        self.steps_completed = step
        report["wall_time"] = time.perf_counter() - started
        logger.debug(
            f"step {report['step']}: d={report['d_loss']:.5f} g={report['g_loss_total']:.5f} "
            f"perceptual={report['g_perceptual']:.5f} adversarial={report['g_adversarial']:.5f}"
        )
        return report

    def train(self, manifest: Optional[DatasetManifest] = None) -> Checkpoint:
        """
        Run the remaining epochs: one seeded random patch per pair per epoch, batched,
        a step log line per step and a checkpoint per epoch.

        Raises:
            DatasetError: Before any step, if the dataset cannot be resolved
            TrainingAbortedError: On a non-finite loss (the step is logged first)
        """
        config = self.config
        manifest = manifest or scan_manifest(config.dataset_root, "train")
        dataset = PairedPatchDataset(manifest, config.patch, seed=config.seed)

        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_config_file(config, out_dir / CONFIG_COPY_NAME)
        step_log = StepLog(out_dir / STEP_LOG_NAME, append=self.steps_completed > 0)

        if self.epochs_completed >= config.epochs:
            logger.info(f"Nothing to do: {self.epochs_completed} of {config.epochs} epochs done")
            return self.checkpoint()

        checkpoint = None
        for epoch in range(self.epochs_completed, config.epochs):
            logger.info(f"Epoch {epoch + 1}/{config.epochs}: {len(dataset)} pairs")
            loader = make_loader(
                dataset,
                config.batch_size,
                epoch,
                shuffle=config.shuffle,
                num_workers=config.num_workers,
                prefetch_factor=config.prefetch_factor,
            )
            for batch in loader:
                try:
                    report = self.train_step(batch["blur"], batch["sharp"])
                except TrainingAbortedError as e:
                    if e.report is not None:
                        step_log.write(e.report)
                    raise
                step_log.write(report)

            self.epochs_completed = epoch + 1
            checkpoint = self.checkpoint()
            path = save_checkpoint(checkpoint, out_dir / checkpoint_name(self.epochs_completed))
            logger.info(f"Epoch {self.epochs_completed} done, checkpoint written to {path}")
        return checkpoint


def checkpoint_name(epoch: int) -> str:
    return f"checkpoint_epoch_{epoch:03d}.ckpt"


def train(
    config: TrainConfig,
    extractor: Optional[FeatureExtractor] = None,
    resume: Optional[Checkpoint] = None,
) -> Checkpoint:
    """Scan the dataset, then train from scratch or continue a checkpoint."""
    manifest = scan_manifest(config.dataset_root, "train")
    if resume is not None:
        service = TrainingService.from_checkpoint(resume, config=config, extractor=extractor)
    else:
        service = TrainingService(config, extractor=extractor)
    return service.train(manifest)


def save_checkpoint(c: Checkpoint, path: Union[str, Path]) -> Path:
    """Write the versioned container: header (magic, version, length, SHA-256) + payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    torch.save(
        {
            "generator_state": c.generator_state,
            "discriminator_state": c.discriminator_state,
            "generator_optimizer_state": c.generator_optimizer_state,
            "discriminator_optimizer_state": c.discriminator_optimizer_state,
            "epochs_completed": c.epochs_completed,
            "steps_completed": c.steps_completed,
            "config": c.config,
            "config_fingerprint": c.config_fingerprint,
        },
        buffer,
    )
    payload = buffer.getvalue()
    header = CHECKPOINT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(payload), hashlib.sha256(payload).digest()
    )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)
    return path


def load_checkpoint(
    path: Union[str, Path], expected_config: Optional[TrainConfig] = None
) -> Checkpoint:
    """
    Read and verify a checkpoint container.

    A fingerprint mismatch against `expected_config` is logged as a warning and
    loading proceeds.

    Raises:
        CheckpointError: If the file is missing, truncated, corrupt or of another format
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Could not read checkpoint {path}: {str(e)}") from e
    if len(raw) < CHECKPOINT_HEADER.size:
        raise CheckpointError(f"Checkpoint {path} is truncated (no complete header)")
    magic, version, length, digest = CHECKPOINT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} in {path}")
    payload = raw[CHECKPOINT_HEADER.size :]
    if len(payload) != length:
        raise CheckpointError(
            f"Checkpoint {path} is truncated: expected {length} payload bytes, found {len(payload)}"
        )
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"Checkpoint {path} failed its checksum")

    try:
        data = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
        checkpoint = Checkpoint(**data)
    except Exception as e:
        raise CheckpointError(f"Could not decode checkpoint {path}: {str(e)}") from e

    expected = expected_config.fingerprint() if expected_config is not None else None
    if expected is not None and expected != checkpoint.config_fingerprint:
        logger.warning(
            f"Checkpoint {path} was written with a different config "
            f"(fingerprint {checkpoint.config_fingerprint[:12]}, expected "
            f"{expected[:12]}); loading anyway"
        )
    return checkpoint


def load_generator(checkpoint: Checkpoint, device: str = "cpu") -> NetworkHandle:
    """Generator rebuilt from a checkpoint's config and weights, in inference mode."""
    config = checkpoint.train_config
    generator = build_generator(generator_spec(config.width_divisor, config.upsample_mode))
    generator.module.load_state_dict(checkpoint.generator_state)
    generator.module.eval()
    return generator.to(device)
