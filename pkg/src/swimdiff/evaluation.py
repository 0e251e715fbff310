"""Downstream evaluation: change detection, classification probes, metrics, inspection.

Change detection runs a frozen encoder as a Siamese feature extractor: the
per-stage absolute feature differences of an image pair feed a small U-shaped
decoder that predicts a change mask.  Classification evaluates encoders by
linear probing (frozen) or fine-tuning.  Metrics are F1 over confusion counts
and mean average precision with interpolated step integration.  Inspection
writes high-pass feature grids, a 2-D embedding projection, and a confusion
heatmap as image files.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from .backbone import TileEncoder
from .data import TileDataset
from .exceptions import (
    ConfigurationError,
    ContractError,
    FormatError,
    ManifestError,
    ParameterError,
)

PROBE_MODES = ("linear_probe", "fine_tune")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts; merge shards with +."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ParameterError("confusion counts must be nonnegative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_masks(cls, predicted: np.ndarray, target: np.ndarray) -> "ConfusionCounts":
        if predicted.shape != target.shape:
            raise ContractError(
                f"prediction shape {predicted.shape} != target shape {target.shape}"
            )
        for name, arr in (("prediction", predicted), ("target", target)):
            values = np.unique(arr)
            if not np.isin(values, (0, 1)).all():
                raise ParameterError(f"{name} mask must be binary, found values {values[:5]}")
        predicted = predicted.astype(bool)
        target = target.astype(bool)
        return cls(
            tp=int(np.sum(predicted & target)),
            fp=int(np.sum(predicted & ~target)),
            fn=int(np.sum(~predicted & target)),
            tn=int(np.sum(~predicted & ~target)),
        )


@dataclass(frozen=True)
class F1Result:
    precision: float
    recall: float
    f1: float
    degenerate: bool


def f1_score(counts: ConfusionCounts) -> F1Result:
    """F1 = 2PR/(P+R); empty-denominator ratios are defined as 0 and flagged."""
    degenerate = False
    if counts.tp + counts.fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = counts.tp / (counts.tp + counts.fp)
    if counts.tp + counts.fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = counts.tp / (counts.tp + counts.fn)
    if precision + recall == 0:
        return F1Result(precision, recall, 0.0, True)
    return F1Result(precision, recall, 2 * precision * recall / (precision + recall), degenerate)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the PR curve with interpolated precision (max over recalls >= r)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ParameterError("scores and labels must be matching nonempty vectors")
    if not np.isin(np.unique(labels), (0, 1)).all():
        raise ParameterError("labels must be binary")
    n_positive = int(labels.sum())
    if n_positive == 0:
        raise ParameterError("average precision is undefined with no positives")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order].astype(np.float64)
    tp_cum = np.cumsum(hits)
    precision = tp_cum / np.arange(1, scores.size + 1)
    recall = tp_cum / n_positive
    # interpolation: precision at recall r is the max precision at any recall >= r
    interpolated = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * interpolated))


@dataclass(frozen=True)
class MapResult:
    mean_ap: float
    per_class: tuple
    excluded: tuple


def map_score(scores: np.ndarray, labels: np.ndarray) -> MapResult:
    """Mean AP over classes; zero-positive classes are excluded with a warning."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape or scores.shape[1] == 0:
        raise ParameterError(
            f"need matching (samples, classes) arrays, got {scores.shape} vs {labels.shape}"
        )
    per_class: list = []
    excluded: list[int] = []
    for c in range(scores.shape[1]):
        if labels[:, c].sum() == 0:
            warnings.warn(
                f"class {c} has no positive samples; excluded from the mean", stacklevel=2
            )
            per_class.append(None)
            excluded.append(c)
        else:
            per_class.append(average_precision(scores[:, c], labels[:, c]))
    included = [ap for ap in per_class if ap is not None]
    if not included:
        raise ParameterError("every class has zero positives; mean AP is undefined")
    return MapResult(
        mean_ap=float(np.mean(included)),
        per_class=tuple(per_class),
        excluded=tuple(excluded),
    )


def accuracy_score(predicted: np.ndarray, labels: np.ndarray) -> float:
    if predicted.shape != labels.shape:
        raise ContractError(f"shape mismatch: {predicted.shape} vs {labels.shape}")
    return float(np.mean(predicted == labels))


# ---------------------------------------------------------------------------
# Change pairs: synthesis and disk IO
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChangePair:
    """Co-registered image pair and the binary mask of what changed."""

    image_a: np.ndarray  # (3, H, W) float32 in [0, 1]
    image_b: np.ndarray
    mask: np.ndarray  # (H, W) in {0, 1}
    pair_id: str

    def validate(self) -> None:
        if self.image_a.shape != self.image_b.shape:
            raise ContractError("pair images must share a shape")
        if self.mask.shape != self.image_a.shape[1:]:
            raise ContractError("mask must match the images' spatial shape")
        if not np.isin(np.unique(self.mask), (0, 1)).all():
            raise ContractError("mask values must be in {0, 1}")


def generate_synthetic_change_pairs(
    n_pairs: int, size: int, seed: int, noise_level: float = 0.02
) -> list[ChangePair]:
    """Procedural pairs: shared texture, 1-3 injected square changes, light noise."""
    from .data import _render_window, _scene_texture_params

    if n_pairs < 1 or size < 8:
        raise ParameterError("need n_pairs >= 1 and size >= 8")
    pairs = []
    for i in range(n_pairs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        base = _scene_texture_params(rng)
        other = _scene_texture_params(rng)
        canvas = _render_window(base, 0.25, 0.25, 0.5, size)
        patch = _render_window(other, 0.25, 0.25, 0.5, size)
        image_a = canvas.copy()
        image_b = canvas.copy()
        mask = np.zeros((size, size), dtype=np.uint8)
        for _ in range(int(rng.integers(1, 4))):
            side = int(rng.integers(size // 6, size // 3 + 1))
            top = int(rng.integers(0, size - side + 1))
            left = int(rng.integers(0, size - side + 1))
            image_b[:, top : top + side, left : left + side] = patch[
                :, top : top + side, left : left + side
            ]
            mask[top : top + side, left : left + side] = 1
        image_a = image_a + noise_level * rng.standard_normal(image_a.shape)
        image_b = image_b + noise_level * rng.standard_normal(image_b.shape)
        pairs.append(
            ChangePair(
                image_a=np.clip(image_a, 0, 1).astype(np.float32),
                image_b=np.clip(image_b, 0, 1).astype(np.float32),
                mask=mask,
                pair_id=f"pair{i:04d}",
            )
        )
    return pairs


def save_change_pairs(pairs: list[ChangePair], root: str | Path) -> Path:
    """Write `<root>/<pair_id>/{a.png, b.png, mask.png}`."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for pair in pairs:
        pair.validate()
        pair_dir = root / pair.pair_id
        pair_dir.mkdir(exist_ok=True)
        for name, img in (("a", pair.image_a), ("b", pair.image_b)):
            rgb = np.round(img * 255.0).astype(np.uint8).transpose(1, 2, 0)
            Image.fromarray(rgb, mode="RGB").save(pair_dir / f"{name}.png")
        Image.fromarray((pair.mask * 255).astype(np.uint8), mode="L").save(
            pair_dir / "mask.png"
        )
    return root


def load_change_pairs(root: str | Path) -> list[ChangePair]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"change-pair root not found: {root}")
    pairs = []
    for pair_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        images = {}
        for name in ("a", "b"):
            path = pair_dir / f"{name}.png"
            if not path.exists():
                raise ManifestError(f"missing {path}")
            with Image.open(path) as im:
                if im.mode != "RGB":
                    raise FormatError(f"{path}: expected RGB, got {im.mode}")
                images[name] = (
                    np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
                )
        mask_path = pair_dir / "mask.png"
        if not mask_path.exists():
            raise ManifestError(f"missing {mask_path}")
        with Image.open(mask_path) as im:
            mask = (np.asarray(im.convert("L")) > 127).astype(np.uint8)
        pair = ChangePair(images["a"], images["b"], mask, pair_dir.name)
        pair.validate()
        pairs.append(pair)
    if not pairs:
        raise ManifestError(f"no pair directories under {root}")
    return pairs


# ---------------------------------------------------------------------------
# Change detection: Siamese differences + U-shaped decoder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChangeDetectConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    threshold: float = 0.5
    augment: bool = True  # random flips and 90-degree rotations
    decoder_width: int = 64
    stages: tuple[int, ...] = (0, 1, 2, 3)  # encoder stages feeding the decoder
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigurationError("lr must be positive and weight_decay nonnegative")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.decoder_width < 1:
            raise ConfigurationError("decoder_width must be >= 1")
        if not self.stages or any(s not in (0, 1, 2, 3) for s in self.stages):
            raise ConfigurationError(
                f"stages must be a nonempty subset of (0, 1, 2, 3), got {self.stages}"
            )
        if tuple(sorted(set(self.stages))) != self.stages:
            raise ConfigurationError(
                f"stages must be strictly increasing without repeats, got {self.stages}"
            )


class ChangeDecoder(nn.Module):
    """U-shaped decoder over per-stage absolute feature differences.

    `stages` selects which encoder stages contribute: the deepest selected
    stage seeds the bottom of the U and the shallower selected stages join as
    skip connections on the way back up to full resolution.
    """

    def __init__(
        self,
        stage_channels: tuple[int, int, int, int],
        width: int = 64,
        stages: tuple[int, ...] = (0, 1, 2, 3),
    ):
        super().__init__()
        if not stages or tuple(sorted(set(stages))) != tuple(stages):
            raise ConfigurationError(f"stages must be strictly increasing, got {stages}")
        if any(s not in range(len(stage_channels)) for s in stages):
            raise ConfigurationError(f"stages {stages} outside available {len(stage_channels)}")
        self.stages = tuple(stages)
        w = width
        groups = 8 if w % 8 == 0 else 1

        def block(in_ch: int) -> nn.Sequential:
            return nn.Sequential(
                nn.Conv2d(in_ch, w, 3, padding=1),
                nn.GroupNorm(groups, w),
                nn.ReLU(inplace=True),
                nn.Conv2d(w, w, 3, padding=1),
                nn.GroupNorm(groups, w),
                nn.ReLU(inplace=True),
            )

        deepest = self.stages[-1]
        skip_set = set(self.stages[:-1])
        self.bottom = block(stage_channels[deepest])
        ups, blocks = [], []
        for level in range(deepest - 1, -1, -1):  # walk back up to full resolution
            ups.append(nn.ConvTranspose2d(w, w, 2, stride=2))
            extra = stage_channels[level] if level in skip_set else 0
            blocks.append(block(w + extra))
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(w, 1, 1)

    def forward(self, diffs: list[torch.Tensor]) -> torch.Tensor:
        if len(diffs) != 4:
            raise ContractError(f"expected 4 stage differences, got {len(diffs)}")
        deepest = self.stages[-1]
        skip_set = set(self.stages[:-1])
        x = self.bottom(diffs[deepest])
        for up, dec, level in zip(self.ups, self.blocks, range(deepest - 1, -1, -1)):
            x = up(x)
            if level in skip_set:
                x = torch.cat([x, diffs[level]], dim=1)
            x = dec(x)
        return self.head(x).squeeze(1)


def difference_features(
    encoder: TileEncoder, image_a: torch.Tensor, image_b: torch.Tensor
) -> list[torch.Tensor]:
    """Per-stage |f(a) − f(b)|, computed with the encoder held frozen."""
    with torch.no_grad():
        feats_a = encoder.forward_stages(image_a)
        feats_b = encoder.forward_stages(image_b)
    return [(fa - fb).abs() for fa, fb in zip(feats_a, feats_b)]


def _orient(tensor: torch.Tensor, flip_h: bool, flip_v: bool, quarter_turns: int) -> torch.Tensor:
    if flip_h:
        tensor = tensor.flip(-1)
    if flip_v:
        tensor = tensor.flip(-2)
    if quarter_turns:
        tensor = torch.rot90(tensor, quarter_turns, dims=(-2, -1))
    return tensor


def _pair_tensors(pairs: list[ChangePair]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    a = torch.from_numpy(np.stack([p.image_a for p in pairs]))
    b = torch.from_numpy(np.stack([p.image_b for p in pairs]))
    m = torch.from_numpy(np.stack([p.mask for p in pairs]).astype(np.float32))
    return a, b, m


def change_detect_train(
    pairs: list[ChangePair], encoder: TileEncoder, config: ChangeDetectConfig = ChangeDetectConfig()
) -> ChangeDecoder:
    """Train the difference decoder on change pairs with the encoder frozen."""
    config.validate()
    if not pairs:
        raise ParameterError("need at least one change pair")
    for pair in pairs:
        pair.validate()
    encoder = encoder.eval()
    images_a, images_b, masks = _pair_tensors(pairs)

    torch.manual_seed(config.seed)
    decoder = ChangeDecoder(encoder.arch.widths, width=config.decoder_width, stages=config.stages)
    optimizer = torch.optim.Adam(
        decoder.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    n = len(pairs)
    for epoch in range(config.epochs):
        order = torch.from_numpy(
            np.random.default_rng(np.random.SeedSequence([config.seed, epoch])).permutation(n)
        )
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            a, b, m = images_a[idx], images_b[idx], masks[idx]
            if config.augment:
                draw = np.random.default_rng(
                    np.random.SeedSequence([config.seed, epoch, start])
                )
                flip_h, flip_v = bool(draw.integers(2)), bool(draw.integers(2))
                turns = int(draw.integers(4))
                a = _orient(a, flip_h, flip_v, turns)
                b = _orient(b, flip_h, flip_v, turns)
                m = _orient(m, flip_h, flip_v, turns)
            logits = decoder(difference_features(encoder, a, b))
            loss = F.binary_cross_entropy_with_logits(logits, m)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
    return decoder


def evaluate_change_detection(
    pairs: list[ChangePair],
    encoder: TileEncoder,
    decoder: ChangeDecoder,
    threshold: float = 0.5,
) -> tuple[F1Result, ConfusionCounts]:
    """Binarize decoder probabilities at the threshold and score against the masks."""
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must be in (0, 1), got {threshold}")
    encoder = encoder.eval()
    decoder = decoder.eval()
    images_a, images_b, masks = _pair_tensors(pairs)
    with torch.no_grad():
        logits = decoder(difference_features(encoder, images_a, images_b))
        predicted = (torch.sigmoid(logits) >= threshold).numpy().astype(np.uint8)
    counts = ConfusionCounts.from_masks(predicted, masks.numpy().astype(np.uint8))
    return f1_score(counts), counts


# ---------------------------------------------------------------------------
# Classification probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    mode: str = "linear_probe"
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-3
    milestones: tuple[float, float] = (0.6, 0.8)
    gamma: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in PROBE_MODES:
            raise ConfigurationError(f"mode must be one of {PROBE_MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("lr must be positive and gamma in (0, 1)")
        previous = 0.0
        for m in self.milestones:
            if not previous < m < 1.0:
                raise ConfigurationError(
                    f"milestones must be strictly increasing within (0, 1), got {self.milestones}"
                )
            previous = m
        if len(self.milestone_epochs(self.epochs)) != len(
            set(self.milestone_epochs(self.epochs))
        ):
            raise ConfigurationError(
                f"epochs={self.epochs} collapses milestones {self.milestones}; increase epochs"
            )

    def milestone_epochs(self, epochs: int) -> tuple[int, ...]:
        return tuple(max(1, int(math.floor(m * epochs))) for m in self.milestones)


@dataclass
class ProbeResult:
    head: nn.Linear
    lr_trace: tuple[float, ...]
    losses: tuple[float, ...]


def tiles_to_tensor(dataset: TileDataset) -> torch.Tensor:
    sizes = {tile.pixels.shape for tile in dataset}
    if len(sizes) != 1:
        raise ContractError(f"tiles mix shapes: {sorted(sizes)}")
    return torch.from_numpy(np.stack([tile.pixels for tile in dataset]))


def scene_label_array(dataset: TileDataset) -> tuple[np.ndarray, tuple[str, ...]]:
    """Scene ids as integer class labels, with the sorted id vocabulary."""
    vocabulary = tuple(sorted(set(dataset.scene_ids)))
    index = {sid: i for i, sid in enumerate(vocabulary)}
    return np.array([index[sid] for sid in dataset.scene_ids], dtype=np.int64), vocabulary


def pooled_features(encoder: TileEncoder, images: torch.Tensor) -> torch.Tensor:
    return encoder(images).mean(dim=(2, 3))


def _check_labels(labels: torch.Tensor, n_classes: int) -> bool:
    """Validate label arity; returns True when multi-label."""
    if labels.ndim == 1:
        if labels.numel() and int(labels.max()) >= n_classes:
            raise ContractError(
                f"label {int(labels.max())} out of range for {n_classes} classes"
            )
        return False
    if labels.ndim == 2:
        if labels.shape[1] != n_classes:
            raise ContractError(
                f"multi-label width {labels.shape[1]} != n_classes {n_classes}"
            )
        return True
    raise ContractError(f"labels must be 1-D class ids or 2-D indicators, got {labels.ndim}-D")


def probe_train(
    images: torch.Tensor,
    labels: torch.Tensor,
    encoder: TileEncoder,
    n_classes: int,
    config: ProbeConfig = ProbeConfig(),
) -> ProbeResult:
    """Fit a linear classifier head; `fine_tune` mode also updates the encoder.

    In `linear_probe` mode the encoder is left bit-identical: features are
    extracted once under no_grad and only the head sees the optimizer.
    """
    config.validate()
    if images.shape[0] != labels.shape[0]:
        raise ContractError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    multi_label = _check_labels(labels, n_classes)
    loss_fn = nn.BCEWithLogitsLoss() if multi_label else nn.CrossEntropyLoss()
    target = labels.float() if multi_label else labels.long()

    torch.manual_seed(config.seed)
    head = nn.Linear(encoder.out_channels, n_classes)
    fine_tune = config.mode == "fine_tune"
    if fine_tune:
        encoder.train()
        params = list(encoder.parameters()) + list(head.parameters())
    else:
        encoder.eval()
        with torch.no_grad():
            bank = pooled_features(encoder, images)
        params = list(head.parameters())
    optimizer = torch.optim.Adam(params, lr=config.lr)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(config.milestone_epochs(config.epochs)), gamma=config.gamma
    )

    generator = torch.Generator().manual_seed(config.seed)
    lr_trace, losses = [], []
    n = images.shape[0]
    for _ in range(config.epochs):
        lr_trace.append(optimizer.param_groups[0]["lr"])
        order = torch.randperm(n, generator=generator)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            feats = pooled_features(encoder, images[idx]) if fine_tune else bank[idx]
            loss = loss_fn(head(feats), target[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.item()) * idx.numel()
        losses.append(epoch_loss / n)
        scheduler.step()
    return ProbeResult(head=head, lr_trace=tuple(lr_trace), losses=tuple(losses))


@torch.no_grad()
def evaluate_probe(
    images: torch.Tensor,
    labels: torch.Tensor,
    encoder: TileEncoder,
    head: nn.Linear,
) -> dict:
    """Accuracy for single-label heads; mean AP for multi-label indicator targets."""
    multi_label = _check_labels(labels, head.out_features)
    encoder = encoder.eval()
    logits = head(pooled_features(encoder, images))
    if multi_label:
        result = map_score(torch.sigmoid(logits).numpy(), labels.numpy())
        return {"metric": "map", "value": result.mean_ap}
    predicted = logits.argmax(dim=1).numpy()
    return {"metric": "accuracy", "value": accuracy_score(predicted, labels.numpy())}


# ---------------------------------------------------------------------------
# Inspection artifacts
# ---------------------------------------------------------------------------

_LAPLACIAN = torch.tensor(
    [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]]
)


def high_pass(values: torch.Tensor) -> torch.Tensor:
    """Laplacian response with replicate padding; exactly zero on constant input."""
    if values.ndim == 3:
        return high_pass(values[None])[0]
    if values.ndim != 4:
        raise ParameterError(f"expected (B, C, H, W) or (C, H, W), got {tuple(values.shape)}")
    channels = values.shape[1]
    kernel = _LAPLACIAN.to(values.dtype).expand(channels, 1, 3, 3)
    padded = F.pad(values, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(padded, kernel, groups=channels)


def high_frequency_energy(values: torch.Tensor) -> float:
    """Mean absolute high-pass response of a feature map or image batch."""
    return float(high_pass(values).abs().mean().item())


@torch.no_grad()
def shallow_feature_energy(encoder: TileEncoder, images: torch.Tensor) -> float:
    """High-frequency energy of the encoder's first-stage features."""
    encoder = encoder.eval()
    return high_frequency_energy(encoder.forward_stages(images)[0])


def pca_2d(embeddings: np.ndarray) -> np.ndarray:
    """Project rows onto the top two principal components (deterministic SVD)."""
    if embeddings.ndim != 2 or embeddings.shape[0] < 2:
        raise ParameterError("need at least two embedding rows to project")
    centered = embeddings - embeddings.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    # fix sign for determinism: largest-magnitude coefficient positive
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return centered @ components.T


@torch.no_grad()
def inspect_features(
    encoder: TileEncoder,
    images: torch.Tensor,
    out_dir: str | Path,
    labels: np.ndarray | None = None,
    classifier: nn.Linear | None = None,
    confusion: bool = False,
) -> dict[str, Path]:
    """Write inspection artifacts: high-pass grid, embedding scatter, confusion map.

    The confusion heatmap requires both a classifier head and labels.
    """
    if images.ndim != 4 or images.shape[0] < 1:
        raise ParameterError("need a nonempty (B, C, H, W) image batch")
    if confusion and (classifier is None or labels is None):
        raise ParameterError("confusion matrix requires a classifier head and labels")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    encoder = encoder.eval()
    artifacts: dict[str, Path] = {}

    shallow = encoder.forward_stages(images)[0]
    image_hp = high_pass(images).abs().mean(dim=1)
    feature_hp = high_pass(shallow).abs().mean(dim=1)
    n = images.shape[0]
    fig, axes = plt.subplots(n, 3, figsize=(7.5, 2.5 * n), squeeze=False)
    for i in range(n):
        axes[i][0].imshow(images[i].permute(1, 2, 0).numpy())
        axes[i][0].set_title("input" if i == 0 else None)
        axes[i][1].imshow(image_hp[i].numpy(), cmap="magma")
        axes[i][1].set_title("image high-pass" if i == 0 else None)
        axes[i][2].imshow(feature_hp[i].numpy(), cmap="magma")
        axes[i][2].set_title("feature high-pass" if i == 0 else None)
        for ax in axes[i]:
            ax.set_axis_off()
    fig.tight_layout()
    artifacts["high_frequency"] = out_dir / "high_frequency.png"
    fig.savefig(artifacts["high_frequency"], dpi=100)
    plt.close(fig)

    feats = pooled_features(encoder, images).numpy()
    if feats.shape[0] >= 2:
        projected = pca_2d(feats)
        fig, ax = plt.subplots(figsize=(5, 5))
        if labels is not None:
            scatter = ax.scatter(projected[:, 0], projected[:, 1], c=labels, cmap="tab10", s=18)
            fig.colorbar(scatter, ax=ax, label="class")
        else:
            ax.scatter(projected[:, 0], projected[:, 1], s=18)
        ax.set_xlabel("component 1")
        ax.set_ylabel("component 2")
        fig.tight_layout()
        artifacts["embedding_scatter"] = out_dir / "embedding_scatter.png"
        fig.savefig(artifacts["embedding_scatter"], dpi=100)
        plt.close(fig)

    if confusion:
        logits = classifier(torch.from_numpy(feats))
        predicted = logits.argmax(dim=1).numpy()
        n_classes = classifier.out_features
        matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
        for truth, guess in zip(labels, predicted):
            matrix[int(truth), int(guess)] += 1
        fig, ax = plt.subplots(figsize=(5, 4.5))
        im = ax.imshow(matrix, cmap="Blues")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        for i in range(n_classes):
            for j in range(n_classes):
                ax.text(j, i, str(matrix[i, j]), ha="center", va="center", fontsize=8)
        fig.tight_layout()
        artifacts["confusion_matrix"] = out_dir / "confusion_matrix.png"
        fig.savefig(artifacts["confusion_matrix"], dpi=100)
        plt.close(fig)

    manifest = {name: path.name for name, path in artifacts.items()}
    (out_dir / "artifacts.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return artifacts
