"""Joint training loop: contrastive matching plus the diffusion constraint.

One step runs: momentum update, dual encoding of the two views, similarity
logits against the positive key and the queue, scene-wide soft labels (or the
one-hot baseline), the diffusion forward process on the clean query view, the
conditioned noise prediction, a single backward pass over the weighted sum,
and two optimizer updates — SGD for the contrastive branch {f_q, h_q}, Adam
for the diffusion branch {f_n, g_n}.  f_q belongs to the SGD partition but
receives gradient from both losses through the conditioning feature map.

A disabled branch (zero weight) is evaluated under no_grad so its exclusive
parameters see no gradient at all, which keeps their values bit-identical.

Determinism contract: all stochastic draws flow through either pure functions
of (seed, epoch, tile_index) — the augmentations — or the trainer's explicit
torch generator, whose state rides along in checkpoints; fixed-seed reruns
and save/resume are bit-identical.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .backbone import ARCHITECTURES, EmbeddingQueue, EncoderState, TileEncoder
from .data import AugmentConfig, AugmentedPair, TileDataset, iter_epoch
from .diffusion import (
    NoisePredictor,
    NoiseSchedule,
    diffuse_batch,
    diffusion_loss,
    make_linear_schedule,
    sample_steps,
)
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    ParameterError,
    TrainingError,
)
from .matching import (
    ENTROPY_NORM_CHOICES,
    batch_contrastive_loss,
    build_batch_labels,
    one_hot_targets,
)

CHECKPOINT_FORMAT_VERSION = 1
METRICS_HEADER = (
    "step", "L_C", "L_D", "L", "mean_m", "grad_norm_q", "grad_norm_diff",
    "mean_scale", "mean_label_sum",
)
FNS_SOURCE_CHOICES = ("query", "key")


@dataclass(frozen=True)
class JointLossWeights:
    """Weights of the two objectives in the combined loss."""

    contrastive: float = 1.0
    diffusion: float = 10.0

    def validate(self) -> None:
        if self.contrastive < 0 or self.diffusion < 0:
            raise ParameterError("loss weights must be nonnegative")
        if self.contrastive == 0 and self.diffusion == 0:
            raise ConfigurationError("at least one loss weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a pretraining run depends on; fully determines it with the seed."""

    epochs: int = 5
    batch_size: int = 32
    sgd_lr: float = 0.03
    sgd_momentum: float = 0.9
    sgd_weight_decay: float = 1e-4
    adam_lr: float = 1e-3
    temperature: float = 0.1
    soft_temperature: float = 0.05
    queue_capacity: int = 4096
    encoder_momentum: float = 0.999
    diffusion_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    lambda_contrastive: float = 1.0
    lambda_diffusion: float = 10.0
    seed: int = 0
    architecture: str = "tiny"
    embedding_dim: int = 64
    predictor_width: int = 32
    swim_enabled: bool = True
    detach_condition: bool = False
    entropy_norm: str = "queue_size"
    fns_similarity_source: str = "query"
    checkpoint_every: int = 0  # extra per-step checkpoints; 0 = epoch ends only
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("sgd_lr", "adam_lr", "temperature", "soft_temperature"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.sgd_momentum < 1.0:
            raise ConfigurationError(f"sgd_momentum must be in [0, 1), got {self.sgd_momentum}")
        if self.sgd_weight_decay < 0:
            raise ConfigurationError("sgd_weight_decay must be nonnegative")
        if self.queue_capacity < 1:
            raise ConfigurationError(f"queue_capacity must be >= 1, got {self.queue_capacity}")
        if self.swim_enabled and self.entropy_norm == "queue_size" and self.queue_capacity < 2:
            raise ConfigurationError(
                "queue_capacity must be >= 2 for entropy scaling over the queue size"
            )
        if not 0.0 <= self.encoder_momentum <= 1.0:
            raise ConfigurationError(
                f"encoder_momentum must be in [0, 1], got {self.encoder_momentum}"
            )
        if self.diffusion_steps < 1:
            raise ConfigurationError(
                f"diffusion_steps must be >= 1, got {self.diffusion_steps}"
            )
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"unknown architecture {self.architecture!r}; choose from {sorted(ARCHITECTURES)}"
            )
        if self.embedding_dim < 1 or self.predictor_width < 1:
            raise ConfigurationError("embedding_dim and predictor_width must be >= 1")
        if self.entropy_norm not in ENTROPY_NORM_CHOICES:
            raise ConfigurationError(
                f"entropy_norm must be one of {ENTROPY_NORM_CHOICES}, got {self.entropy_norm!r}"
            )
        if self.fns_similarity_source not in FNS_SOURCE_CHOICES:
            raise ConfigurationError(
                f"fns_similarity_source must be one of {FNS_SOURCE_CHOICES}, "
                f"got {self.fns_similarity_source!r}"
            )
        if self.checkpoint_every < 0:
            raise ConfigurationError("checkpoint_every must be >= 0")
        self.weights.validate()
        self.augment.validate()

    @property
    def weights(self) -> JointLossWeights:
        return JointLossWeights(self.lambda_contrastive, self.lambda_diffusion)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        augment = raw.pop("augment", {})
        if isinstance(augment, dict):
            augment = dict(augment)
            if "crop_scale" in augment:
                augment["crop_scale"] = tuple(augment["crop_scale"])
            augment = AugmentConfig(**augment)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(augment=augment, **raw)


@dataclass(frozen=True)
class JointLossReport:
    """Per-step record written to the metrics log."""

    step: int
    contrastive_loss: float
    diffusion_loss: float
    total_loss: float
    mean_fns_count: float
    grad_norm_query: float
    grad_norm_diffusion: float
    mean_scale_factor: float
    mean_label_sum: float

    def row(self) -> list:
        return [
            self.step,
            repr(self.contrastive_loss),
            repr(self.diffusion_loss),
            repr(self.total_loss),
            repr(self.mean_fns_count),
            repr(self.grad_norm_query),
            repr(self.grad_norm_diffusion),
            repr(self.mean_scale_factor),
            repr(self.mean_label_sum),
        ]


def _batch_tensors(batch: list[AugmentedPair]) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    if not batch:
        raise ContractError("training step requires a nonempty batch")
    shapes = {pair.query_view.shape for pair in batch}
    if len(shapes) != 1:
        raise ContractError(f"batch mixes view shapes: {sorted(shapes)}")
    query = torch.from_numpy(np.stack([pair.query_view for pair in batch]))
    key = torch.from_numpy(np.stack([pair.key_view for pair in batch]))
    scenes = [pair.scene_id for pair in batch]
    return query, key, scenes


def _grad_norm(params: Iterable[torch.nn.Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().double().pow(2).sum().item())
    return math.sqrt(total)


class JointTrainer:
    """Owns the models, optimizers, queue, schedule, and the training loop."""

    def __init__(self, config: TrainConfig):
        config.validate()
        self.config = config
        torch.manual_seed(config.seed)
        self.encoders = EncoderState(
            architecture=config.architecture,
            embed_dim=config.embedding_dim,
            momentum=config.encoder_momentum,
        )
        self.predictor = NoisePredictor(
            cond_channels=self.encoders.query_encoder.out_channels,
            base_width=config.predictor_width,
        )
        self.queue = EmbeddingQueue(capacity=config.queue_capacity)
        self.schedule: NoiseSchedule = make_linear_schedule(
            config.diffusion_steps, config.beta_start, config.beta_end
        )
        self.sgd = torch.optim.SGD(
            list(self.encoders.query_parameters()),
            lr=config.sgd_lr,
            momentum=config.sgd_momentum,
            weight_decay=config.sgd_weight_decay,
        )
        self.adam = torch.optim.Adam(self.predictor.parameters(), lr=config.adam_lr)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.step = 0
        self.epoch = 0
        self.batch_in_epoch = 0

    # ------------------------------------------------------------------
    # One step
    # ------------------------------------------------------------------

    def train_step(self, batch: list[AugmentedPair]) -> JointLossReport:
        config = self.config
        weights = config.weights
        query_views, key_views, scenes = _batch_tensors(batch)

        self.encoders.momentum_update()
        q_map, z_q = self.encoders.encode_query(query_views)
        z_k = self.encoders.encode_key(key_views)

        positive = (z_q * z_k).sum(dim=1, keepdim=True)
        if len(self.queue):
            logits = torch.cat([positive, z_q @ self.queue.as_matrix().t()], dim=1)
        else:
            logits = positive

        if config.swim_enabled:
            anchor_vecs = z_q if config.fns_similarity_source == "query" else z_k
            targets, diag = build_batch_labels(
                self.queue,
                scenes,
                anchor_vecs.detach(),
                config.soft_temperature,
                config.entropy_norm,
            )
            mean_m, mean_scale, mean_label_sum = (
                diag.mean_fns_count, diag.mean_scale_factor, diag.mean_label_sum,
            )
        else:
            targets = one_hot_targets(logits.shape[0], logits.shape[1], dtype=logits.dtype)
            mean_m, mean_scale, mean_label_sum = 0.0, 1.0, 1.0

        if weights.contrastive > 0:
            loss_c = batch_contrastive_loss(logits, targets, config.temperature)
        else:
            with torch.no_grad():
                loss_c = batch_contrastive_loss(logits, targets, config.temperature)

        steps = sample_steps(query_views.shape[0], self.schedule, self.generator)
        noisy, noise = diffuse_batch(query_views, steps, self.schedule, self.generator)
        condition = q_map.detach() if config.detach_condition else q_map
        if weights.diffusion > 0:
            loss_d = diffusion_loss(noise, self.predictor(noisy, steps, condition))
        else:
            with torch.no_grad():
                loss_d = diffusion_loss(noise, self.predictor(noisy, steps, condition))

        loss_c_value = float(loss_c.item())
        loss_d_value = float(loss_d.item())
        if not (math.isfinite(loss_c_value) and math.isfinite(loss_d_value)):
            raise TrainingError(
                f"non-finite loss at step {self.step + 1}: "
                f"contrastive={loss_c_value}, diffusion={loss_d_value}"
            )

        total_for_backward = None
        if weights.contrastive > 0:
            total_for_backward = weights.contrastive * loss_c
        if weights.diffusion > 0:
            weighted_d = weights.diffusion * loss_d
            total_for_backward = (
                weighted_d if total_for_backward is None else total_for_backward + weighted_d
            )

        self.sgd.zero_grad(set_to_none=True)
        self.adam.zero_grad(set_to_none=True)
        total_for_backward.backward()
        grad_norm_q = _grad_norm(self.encoders.query_parameters())
        grad_norm_diff = _grad_norm(self.predictor.parameters())
        self.sgd.step()
        self.adam.step()

        self.queue.enqueue(z_k, scenes)
        self.step += 1
        return JointLossReport(
            step=self.step,
            contrastive_loss=loss_c_value,
            diffusion_loss=loss_d_value,
            total_loss=weights.contrastive * loss_c_value + weights.diffusion * loss_d_value,
            mean_fns_count=mean_m,
            grad_norm_query=grad_norm_q,
            grad_norm_diffusion=grad_norm_diff,
            mean_scale_factor=mean_scale,
            mean_label_sum=mean_label_sum,
        )

    # ------------------------------------------------------------------
    # Epoch loop with metrics + checkpoints
    # ------------------------------------------------------------------

    def train(self, dataset: TileDataset, out_dir: str | Path) -> list[JointLossReport]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        new_log = not metrics_path.exists()
        reports: list[JointLossReport] = []
        with metrics_path.open("a", newline="") as fh:
            writer = csv.writer(fh)
            if new_log:
                writer.writerow(METRICS_HEADER)
            while self.epoch < self.config.epochs:
                for i, batch in enumerate(
                    iter_epoch(
                        dataset,
                        self.config.batch_size,
                        self.config.seed,
                        self.epoch,
                        self.config.augment,
                    )
                ):
                    if i < self.batch_in_epoch:
                        continue  # replaying a resumed epoch's consumed batches
                    report = self.train_step(batch)
                    self.batch_in_epoch = i + 1
                    reports.append(report)
                    writer.writerow(report.row())
                    if self.config.checkpoint_every and (
                        self.step % self.config.checkpoint_every == 0
                    ):
                        self.save_checkpoint(out_dir / f"step_{self.step:06d}.pt")
                self.epoch += 1
                self.batch_in_epoch = 0
                self.save_checkpoint(out_dir / "last.pt")
        self.save_checkpoint(out_dir / "final.pt")
        return reports

    # ------------------------------------------------------------------
    # Checkpointing
    # ------------------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "metadata": {
                "architecture": self.config.architecture,
                "momentum": self.config.encoder_momentum,
                "queue_capacity": self.config.queue_capacity,
                "step": self.step,
            },
            "config": self.config.to_dict(),
            "encoders": self.encoders.state_dict(),
            "predictor": self.predictor.state_dict(),
            "sgd": self.sgd.state_dict(),
            "adam": self.adam.state_dict(),
            "queue": self.queue.state(),
            "schedule": {
                "num_steps": self.schedule.num_steps,
                "beta_start": self.schedule.beta_start,
                "beta_end": self.schedule.beta_end,
            },
            "generator_state": self.generator.get_state(),
            "progress": {
                "step": self.step,
                "epoch": self.epoch,
                "batch_in_epoch": self.batch_in_epoch,
            },
        }
        torch.save(payload, path)
        return path

    @classmethod
    def resume(cls, path: str | Path) -> "JointTrainer":
        payload = load_checkpoint(path)
        trainer = cls(TrainConfig.from_dict(payload["config"]))
        trainer.encoders.load_state_dict(payload["encoders"])
        trainer.predictor.load_state_dict(payload["predictor"])
        trainer.sgd.load_state_dict(payload["sgd"])
        trainer.adam.load_state_dict(payload["adam"])
        trainer.queue = EmbeddingQueue.from_state(payload["queue"])
        trainer.generator.set_state(payload["generator_state"])
        progress = payload["progress"]
        trainer.step = int(progress["step"])
        trainer.epoch = int(progress["epoch"])
        trainer.batch_in_epoch = int(progress["batch_in_epoch"])
        return trainer


def load_checkpoint(path: str | Path) -> dict:
    """Read and validate a checkpoint container."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a recognized checkpoint container")
    version = payload["format_version"]
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    missing = {
        "metadata", "config", "encoders", "predictor", "sgd", "adam",
        "queue", "schedule", "generator_state", "progress",
    } - set(payload)
    if missing:
        raise CheckpointError(f"checkpoint {path} is missing keys: {sorted(missing)}")
    return payload


def load_query_encoder(path: str | Path) -> tuple[TileEncoder, TrainConfig]:
    """Load just the query-branch encoder from a checkpoint, for evaluation."""
    payload = load_checkpoint(path)
    config = TrainConfig.from_dict(payload["config"])
    encoders = EncoderState(
        architecture=config.architecture,
        embed_dim=config.embedding_dim,
        momentum=config.encoder_momentum,
    )
    encoders.load_state_dict(payload["encoders"])
    return encoders.query_encoder, config


def read_metrics(path: str | Path) -> list[dict]:
    """Parse a metrics log back into one dict per step."""
    rows = []
    with Path(path).open(newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(
                {
                    key: (int(value) if key == "step" else float(value))
                    for key, value in record.items()
                }
            )
    return rows
