"""Scene-wide matching: false-negative selection, adaptive soft labels, and the loss.

Queue entries that share the anchor's scene are false negatives.  Their
cosine similarities are softened into a distribution, scaled down by how
uncertain that distribution is, and written back into the label vector in
place of zeros; the positive key keeps label 1.  The loss is the normalized
soft-label cross-entropy over the temperature-scaled similarity row, and
with no scene matches it reduces bitwise to the one-hot InfoNCE baseline.

Labels are targets: every function here that builds them detaches its inputs
from autograd.  Only the loss functions keep gradients, through the logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .exceptions import ConfigurationError, ContractError, ParameterError
from .backbone import EmbeddingQueue

ENTROPY_NORM_CHOICES = ("queue_size", "fns_count")
LOGIT_SLACK = 1e-3  # cosines of unit vectors, plus room for float error


@dataclass(frozen=True)
class SimilarityRow:
    """Length n+1 similarity logits (index 0 = positive key) and the temperature."""

    logits: torch.Tensor
    temperature: float

    def __post_init__(self):
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        if self.logits.ndim != 1 or self.logits.numel() < 1:
            raise ParameterError(f"logits must be a nonempty vector, got {tuple(self.logits.shape)}")
        if self.logits.detach().abs().max().item() > 1.0 + LOGIT_SLACK:
            raise ContractError("logits exceed the [-1, 1] range of unit-vector cosines")


@dataclass(frozen=True)
class FNSSelection:
    """Queue slots (in logit-row coordinates 1..n) sharing the anchor's scene."""

    indices: tuple[int, ...]
    similarities: torch.Tensor
    queue_len: int

    def __post_init__(self):
        if len(self.indices) != self.similarities.numel():
            raise ContractError(
                f"{len(self.indices)} indices but {self.similarities.numel()} similarities"
            )
        if any(not 1 <= i <= self.queue_len for i in self.indices):
            raise ContractError("FNS indices must address queue slots 1..n, never index 0")
        if len(set(self.indices)) != len(self.indices):
            raise ContractError("FNS indices must be distinct")

    @property
    def count(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class SoftLabelVector:
    """Raw relabeled vector l' (l'_0 = 1), its normalization, and the scalars behind it."""

    raw: torch.Tensor
    normalized: torch.Tensor = field(init=False)
    soft_temperature: float = 0.0
    entropy: float = 0.0

    def __post_init__(self):
        raw = self.raw.detach()
        if raw.ndim != 1:
            raise ContractError(f"label vector must be 1-D, got {tuple(raw.shape)}")
        if abs(raw[0].item() - 1.0) > 0:
            raise ContractError("label vector must carry weight 1 at the positive slot")
        if raw.min().item() < 0 or raw.max().item() > 1:
            raise ContractError("label entries must lie in [0, 1]")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "normalized", raw / raw.sum())

    def __len__(self) -> int:
        return self.raw.numel()


@dataclass(frozen=True)
class LabelDiagnostics:
    """Per-batch label statistics, emitted to the metrics log."""

    mean_fns_count: float
    mean_scale_factor: float
    mean_label_sum: float


def one_hot_labels(queue_len: int, dtype: torch.dtype = torch.float32) -> SoftLabelVector:
    """Baseline target: all mass on the positive key (the m=0 reduction)."""
    raw = torch.zeros(queue_len + 1, dtype=dtype)
    raw[0] = 1.0
    return SoftLabelVector(raw=raw)


def select_fns(queue: EmbeddingQueue, anchor_scene: str, z_q: torch.Tensor) -> FNSSelection:
    """All queue slots tagged with the anchor's scene, with their cosine similarities."""
    if z_q.ndim != 1:
        raise ParameterError(f"anchor embedding must be 1-D, got {tuple(z_q.shape)}")
    positions = [i for i, sid in enumerate(queue.scene_ids) if sid == anchor_scene]
    if not positions:
        return FNSSelection(
            indices=(), similarities=z_q.new_empty(0), queue_len=len(queue)
        )
    matrix = queue.as_matrix().to(z_q.dtype)
    sims = matrix[positions] @ z_q.detach()
    return FNSSelection(
        indices=tuple(p + 1 for p in positions), similarities=sims, queue_len=len(queue)
    )


def soft_distribution(d: torch.Tensor, soft_temperature: float) -> torch.Tensor:
    """Softmax of similarities at the soft-label temperature, max-subtracted."""
    if soft_temperature <= 0:
        raise ParameterError(f"soft temperature must be positive, got {soft_temperature}")
    if d.ndim != 1 or d.numel() == 0:
        raise ContractError("soft_distribution needs at least one similarity")
    scaled = d.detach() / soft_temperature
    shifted = scaled - scaled.max()
    expd = shifted.exp()
    return expd / expd.sum()


def entropy_nats(b: torch.Tensor) -> float:
    """Shannon entropy of a probability vector in nats, with 0·log 0 = 0.

    Computed in double precision regardless of b's dtype so that the
    boundary identities (H=0 at one-hot, H=log N at uniform) come out exact.
    """
    nonzero = b.detach().double()
    nonzero = nonzero[nonzero > 0]
    return float(-(nonzero * nonzero.log()).sum().item())


def adaptive_soft_labels(
    b: torch.Tensor, n: int, entropy_norm: str = "queue_size"
) -> torch.Tensor:
    """Scale the soft distribution by its certainty: s_i = min(1, b_i·(1 − H(b)/log N)).

    N is the queue capacity n by default, or the FNS count under the
    `fns_count` norm.  A zero-entropy distribution short-circuits to scale 1.
    """
    if n < 2:
        raise ParameterError(f"queue capacity must be >= 2 for entropy scaling, got {n}")
    if entropy_norm not in ENTROPY_NORM_CHOICES:
        raise ConfigurationError(
            f"entropy_norm must be one of {ENTROPY_NORM_CHOICES}, got {entropy_norm!r}"
        )
    b = b.detach()
    entropy = entropy_nats(b)
    if entropy <= 0.0:
        factor = 1.0
    else:
        normalizer = math.log(n) if entropy_norm == "queue_size" else math.log(b.numel())
        factor = 1.0 - entropy / normalizer
    factor = min(1.0, max(0.0, factor))
    return torch.clamp(b * factor, max=1.0)


def scale_factor(b: torch.Tensor, n: int, entropy_norm: str = "queue_size") -> float:
    """The entropy-certainty multiplier applied by adaptive_soft_labels."""
    entropy = entropy_nats(b)
    if entropy <= 0.0:
        return 1.0
    normalizer = math.log(n) if entropy_norm == "queue_size" else math.log(b.numel())
    return min(1.0, max(0.0, 1.0 - entropy / normalizer))


def build_label_vector(
    selection: FNSSelection,
    s: torch.Tensor,
    soft_temperature: float = 0.0,
    entropy: float = 0.0,
) -> SoftLabelVector:
    """Relabel: 1 at the positive, s_i at FNS slots, 0 at remaining negatives."""
    if s.numel() != selection.count:
        raise ContractError(
            f"{selection.count} selected slots but {s.numel()} soft labels"
        )
    dtype = s.dtype if s.numel() else torch.get_default_dtype()
    raw = torch.zeros(selection.queue_len + 1, dtype=dtype)
    raw[0] = 1.0
    if selection.count:
        raw[list(selection.indices)] = s.detach()
    return SoftLabelVector(raw=raw, soft_temperature=soft_temperature, entropy=entropy)


def swim_loss(row: SimilarityRow, labels: SoftLabelVector) -> torch.Tensor:
    """Normalized soft-label cross-entropy over the temperature-scaled row."""
    if len(labels) != row.logits.numel():
        raise ContractError(
            f"label vector length {len(labels)} != logits length {row.logits.numel()}"
        )
    log_probs = F.log_softmax(row.logits / row.temperature, dim=0)
    target = labels.normalized.to(log_probs.dtype)
    return -(target * log_probs).sum()


def infonce_loss(row: SimilarityRow) -> torch.Tensor:
    """One-hot contrastive baseline: -log softmax probability of the positive."""
    return -F.log_softmax(row.logits / row.temperature, dim=0)[0]


def soft_labels_for_anchor(
    queue: EmbeddingQueue,
    anchor_scene: str,
    anchor_vec: torch.Tensor,
    soft_temperature: float,
    entropy_norm: str = "queue_size",
) -> tuple[SoftLabelVector, FNSSelection, float]:
    """Compose selection, softening, scaling, and relabeling for one anchor.

    Returns the label vector, the selection it came from, and the entropy
    scale factor used (1.0 when the selection is empty and the labels reduce
    to one-hot).
    """
    selection = select_fns(queue, anchor_scene, anchor_vec)
    if selection.count == 0:
        return one_hot_labels(selection.queue_len, dtype=anchor_vec.dtype), selection, 1.0
    b = soft_distribution(selection.similarities, soft_temperature)
    s = adaptive_soft_labels(b, queue.capacity, entropy_norm)
    factor = scale_factor(b, queue.capacity, entropy_norm)
    labels = build_label_vector(
        selection, s, soft_temperature=soft_temperature, entropy=entropy_nats(b)
    )
    return labels, selection, factor


@torch.no_grad()
def build_batch_labels(
    queue: EmbeddingQueue,
    anchor_scenes: list[str] | tuple[str, ...],
    anchor_vecs: torch.Tensor,
    soft_temperature: float,
    entropy_norm: str = "queue_size",
) -> tuple[torch.Tensor, LabelDiagnostics]:
    """Stack per-anchor normalized targets into a (B, n+1) matrix plus diagnostics.

    Equivalent to calling soft_labels_for_anchor per anchor, but stacks the
    queue matrix and indexes its scene tags once per batch.
    """
    if anchor_vecs.ndim != 2 or anchor_vecs.shape[0] != len(anchor_scenes):
        raise ContractError(
            f"anchor batch mismatch: {tuple(anchor_vecs.shape)} vs {len(anchor_scenes)} scenes"
        )
    queue_len = len(queue)
    matrix = queue.as_matrix().to(anchor_vecs.dtype) if queue_len else None
    by_scene: dict[str, list[int]] = {}
    for i, sid in enumerate(queue.scene_ids):
        by_scene.setdefault(sid, []).append(i)

    targets, counts, factors, sums = [], [], [], []
    for scene, vec in zip(anchor_scenes, anchor_vecs):
        positions = by_scene.get(scene, [])
        if not positions:
            labels, factor = one_hot_labels(queue_len, dtype=anchor_vecs.dtype), 1.0
        else:
            selection = FNSSelection(
                indices=tuple(p + 1 for p in positions),
                similarities=matrix[positions] @ vec.detach(),
                queue_len=queue_len,
            )
            b = soft_distribution(selection.similarities, soft_temperature)
            s = adaptive_soft_labels(b, queue.capacity, entropy_norm)
            factor = scale_factor(b, queue.capacity, entropy_norm)
            labels = build_label_vector(
                selection, s, soft_temperature=soft_temperature, entropy=entropy_nats(b)
            )
        targets.append(labels.normalized.to(anchor_vecs.dtype))
        counts.append(float(len(positions)))
        factors.append(factor)
        sums.append(float(labels.raw.sum().item()))
    diagnostics = LabelDiagnostics(
        mean_fns_count=float(sum(counts) / len(counts)),
        mean_scale_factor=float(sum(factors) / len(factors)),
        mean_label_sum=float(sum(sums) / len(sums)),
    )
    return torch.stack(targets), diagnostics


def batch_contrastive_loss(
    logits: torch.Tensor, targets: torch.Tensor, temperature: float
) -> torch.Tensor:
    """Mean over the batch of the per-row soft-label cross-entropy."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if logits.shape != targets.shape:
        raise ContractError(
            f"logits shape {tuple(logits.shape)} != targets shape {tuple(targets.shape)}"
        )
    log_probs = F.log_softmax(logits / temperature, dim=1)
    return -(targets * log_probs).sum(dim=1).mean()


def one_hot_targets(batch: int, width: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Batched baseline targets: all mass on column 0."""
    targets = torch.zeros(batch, width, dtype=dtype)
    targets[:, 0] = 1.0
    return targets
