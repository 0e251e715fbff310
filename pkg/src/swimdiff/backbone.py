"""Dual-branch momentum encoders, projection heads, and the scene-tagged FIFO queue.

The query branch (encoder + head) is trained by gradient descent; the key
branch is a momentum-trailing copy that never receives gradients.  Embeddings
leaving either head are unit-norm.  The queue stores key embeddings together
with the scene each source tile came from, which is what false-negative
selection later keys on.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigurationError, ContractError, ParameterError

UNIT_NORM_TOL = 1e-5


@dataclass(frozen=True)
class EncoderArch:
    """Widths and residual-block counts for the four stages of the backbone."""

    name: str
    widths: tuple[int, int, int, int]
    blocks: tuple[int, int, int, int]


ARCHITECTURES: dict[str, EncoderArch] = {
    "tiny": EncoderArch("tiny", widths=(16, 32, 64, 128), blocks=(1, 1, 1, 1)),
    "small": EncoderArch("small", widths=(32, 64, 128, 256), blocks=(1, 1, 2, 2)),
    "resnet18": EncoderArch("resnet18", widths=(64, 128, 256, 512), blocks=(2, 2, 2, 2)),
}


def get_architecture(name: str) -> EncoderArch:
    if name not in ARCHITECTURES:
        raise ConfigurationError(
            f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}"
        )
    return ARCHITECTURES[name]


def _norm(channels: int) -> nn.GroupNorm:
    # GroupNorm keeps single-sample behavior identical to batched behavior,
    # which the momentum-copy and determinism contracts rely on.
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with a (possibly strided/projected) skip connection."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.norm2 = _norm(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.skip = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                _norm(out_channels),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.skip(x))


class TileEncoder(nn.Module):
    """Four-stage residual CNN mapping (B, 3, H, W) to a (B, C, H/8, W/8) feature map."""

    def __init__(self, arch: EncoderArch):
        super().__init__()
        self.arch = arch
        w = arch.widths
        self.stem = nn.Sequential(
            nn.Conv2d(3, w[0], 3, padding=1, bias=False), _norm(w[0]), nn.ReLU(inplace=True)
        )
        strides = (1, 2, 2, 2)
        stages = []
        in_ch = w[0]
        for width, n_blocks, stride in zip(w, arch.blocks, strides):
            blocks = [ResidualBlock(in_ch, width, stride)]
            blocks += [ResidualBlock(width, width) for _ in range(n_blocks - 1)]
            stages.append(nn.Sequential(*blocks))
            in_ch = width
        self.stages = nn.ModuleList(stages)
        self.out_channels = in_ch

    @staticmethod
    def _check_input(x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ParameterError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % 8 != 0 or x.shape[3] % 8 != 0 or x.shape[2] < 8 or x.shape[3] < 8:
            raise ParameterError(
                f"input height/width must be multiples of 8, got {tuple(x.shape[2:])}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
        return out

    def forward_stages(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Feature maps after each stage (resolutions H, H/2, H/4, H/8)."""
        self._check_input(x)
        out = self.stem(x)
        feats = []
        for stage in self.stages:
            out = stage(out)
            feats.append(out)
        return feats


class ProjectionHead(nn.Module):
    """Two-layer perceptron from pooled backbone features to the embedding space."""

    def __init__(self, in_dim: int, embed_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, in_dim)
        self.fc2 = nn.Linear(in_dim, embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))


class EncoderState(nn.Module):
    """Query and key encoder/head pairs plus the momentum coefficient tying them.

    The key branch is initialized as an exact copy of the query branch and is
    excluded from autograd; it only moves via momentum_update().
    """

    def __init__(self, architecture: str = "tiny", embed_dim: int = 64, momentum: float = 0.999):
        super().__init__()
        if not 0.0 <= momentum <= 1.0:
            raise ParameterError(f"momentum must be in [0, 1], got {momentum}")
        arch = get_architecture(architecture)
        self.momentum = momentum
        self.embed_dim = embed_dim
        self.query_encoder = TileEncoder(arch)
        self.key_encoder = TileEncoder(arch)
        self.query_head = ProjectionHead(self.query_encoder.out_channels, embed_dim)
        self.key_head = ProjectionHead(self.query_encoder.out_channels, embed_dim)
        self._sync_key_branch()

    @property
    def architecture(self) -> str:
        return self.query_encoder.arch.name

    def _key_pairs(self):
        yield from zip(self.query_encoder.parameters(), self.key_encoder.parameters())
        yield from zip(self.query_head.parameters(), self.key_head.parameters())

    @torch.no_grad()
    def _sync_key_branch(self) -> None:
        for pq, pk in self._key_pairs():
            pk.copy_(pq)
            pk.requires_grad_(False)

    def encode_query(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return the un-pooled feature map and the unit-norm embedding."""
        feature_map = self.query_encoder(x)
        pooled = feature_map.mean(dim=(2, 3))
        z_q = F.normalize(self.query_head(pooled), dim=1)
        return feature_map, z_q

    @torch.no_grad()
    def encode_key(self, x: torch.Tensor) -> torch.Tensor:
        """Unit-norm key embedding; never part of the autograd graph."""
        feature_map = self.key_encoder(x)
        pooled = feature_map.mean(dim=(2, 3))
        return F.normalize(self.key_head(pooled), dim=1)

    @torch.no_grad()
    def momentum_update(self) -> None:
        """Move every key parameter toward its query twin: θ_k ← m·θ_k + (1−m)·θ_q."""
        m = self.momentum
        for pq, pk in self._key_pairs():
            pk.mul_(m).add_(pq, alpha=1.0 - m)

    def query_parameters(self):
        """Parameters trained by the contrastive objective (query branch only)."""
        yield from self.query_encoder.parameters()
        yield from self.query_head.parameters()


class EmbeddingQueue:
    """FIFO dictionary of unit-norm key embeddings tagged with scene ids."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ParameterError(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._embeddings: list[torch.Tensor] = []
        self._scene_ids: list[str] = []

    def __len__(self) -> int:
        return len(self._embeddings)

    @property
    def scene_ids(self) -> tuple[str, ...]:
        return tuple(self._scene_ids)

    def enqueue(self, embeddings: torch.Tensor, scene_ids: list[str] | tuple[str, ...]) -> None:
        """Append a batch of (embedding, scene_id) entries, evicting oldest first."""
        if embeddings.ndim != 2:
            raise ParameterError(f"expected (B, D) embeddings, got {tuple(embeddings.shape)}")
        if embeddings.shape[0] != len(scene_ids):
            raise ContractError(
                f"{embeddings.shape[0]} embeddings but {len(scene_ids)} scene ids"
            )
        norms = embeddings.norm(dim=1)
        if not torch.all((norms - 1.0).abs() <= UNIT_NORM_TOL):
            worst = (norms - 1.0).abs().max().item()
            raise ContractError(f"queue requires unit-norm embeddings (off by {worst:.2e})")
        for row, scene_id in zip(embeddings.detach(), scene_ids):
            self._embeddings.append(row.clone())
            self._scene_ids.append(str(scene_id))
        overflow = len(self._embeddings) - self.capacity
        if overflow > 0:
            del self._embeddings[:overflow]
            del self._scene_ids[:overflow]

    def as_matrix(self) -> torch.Tensor:
        """Stack queue contents as an (len, D) tensor (oldest row first)."""
        if not self._embeddings:
            raise ContractError("queue is empty; nothing to stack")
        return torch.stack(self._embeddings)

    def state(self) -> dict:
        """Serializable snapshot (tensors and strings only)."""
        return {
            "capacity": self.capacity,
            "embeddings": torch.stack(self._embeddings) if self._embeddings else torch.empty(0),
            "scene_ids": list(self._scene_ids),
        }

    @classmethod
    def from_state(cls, state: dict) -> "EmbeddingQueue":
        queue = cls(int(state["capacity"]))
        emb = state["embeddings"]
        if emb.numel():
            queue._embeddings = [row.clone() for row in emb]
            queue._scene_ids = [str(s) for s in state["scene_ids"]]
        return queue
