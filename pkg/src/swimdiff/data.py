"""Scene-grouped tile datasets: synthetic generation, disk IO, augmentation, batching.

Every tile carries the identifier of the large scene it was cropped from; that
scene membership is what downstream false-negative relabeling keys on.  Pixel
arrays are channel-first float32 in [0, 1] throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .exceptions import ConfigurationError, FormatError, ManifestError, ParameterError

MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class SceneTile:
    """One image tile plus the identity of the scene it was cropped from."""

    pixels: np.ndarray  # (3, H, W) float32 in [0, 1]
    scene_id: str
    tile_id: str

    def validate(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ParameterError(
                f"tile pixels must be (3, H, W), got {self.pixels.shape}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise ParameterError("tile pixels must be finite")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ParameterError("tile pixels must lie in [0, 1]")


@dataclass(frozen=True)
class AugmentedPair:
    """Two independently augmented views of the same tile."""

    query_view: np.ndarray
    key_view: np.ndarray
    scene_id: str

    def validate(self) -> None:
        if self.query_view.shape != self.key_view.shape:
            raise ParameterError(
                f"view shapes differ: {self.query_view.shape} vs {self.key_view.shape}"
            )


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Shape of a procedural stand-in dataset for scene-grouped imagery."""

    n_scenes: int
    tiles_per_scene: int
    tile_size: int
    texture_family_seed: int = 0
    noise_level: float = 0.05

    def validate(self) -> None:
        if self.n_scenes < 1 or self.tiles_per_scene < 1:
            raise ParameterError("n_scenes and tiles_per_scene must be >= 1")
        if self.tile_size < 8:
            raise ParameterError(f"tile_size must be >= 8, got {self.tile_size}")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ParameterError(f"noise_level must be in [0, 1], got {self.noise_level}")


class TileDataset:
    """Immutable collection of tiles with unique (scene_id, tile_id) pairs."""

    def __init__(self, tiles: Sequence[SceneTile]):
        keys = [(t.scene_id, t.tile_id) for t in tiles]
        if len(set(keys)) != len(keys):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise ManifestError(f"duplicate (scene_id, tile_id) pairs: {dupes[:5]}")
        self._tiles = tuple(tiles)

    def __len__(self) -> int:
        return len(self._tiles)

    def __getitem__(self, index: int) -> SceneTile:
        return self._tiles[index]

    def __iter__(self) -> Iterator[SceneTile]:
        return iter(self._tiles)

    @property
    def scene_ids(self) -> tuple[str, ...]:
        return tuple(t.scene_id for t in self._tiles)


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation menu: random resized crop, color jitter, flip, grayscale."""

    crop_prob: float = 1.0
    crop_scale: tuple[float, float] = (0.6, 1.0)
    jitter_prob: float = 0.8
    jitter_strength: float = 0.4
    flip_prob: float = 0.5
    grayscale_prob: float = 0.2
    out_size: int | None = None  # None keeps the tile's own size

    def validate(self) -> None:
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi):
            raise ParameterError(f"crop_scale must satisfy 0 < lo <= hi, got {self.crop_scale}")
        if hi > 1.0:
            raise ParameterError("crop_scale above 1 would crop larger than the tile")
        for name in ("crop_prob", "jitter_prob", "flip_prob", "grayscale_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {p}")


IDENTITY_AUGMENT = AugmentConfig(
    crop_prob=0.0, jitter_prob=0.0, flip_prob=0.0, grayscale_prob=0.0
)


# ---------------------------------------------------------------------------
# Synthetic scene generation
# ---------------------------------------------------------------------------

def _scene_texture_params(rng: np.random.Generator) -> dict:
    """Draw one scene's procedural texture: palette, gradient, stripes, blobs."""
    params = {
        "base_a": rng.uniform(0.1, 0.9, size=3),
        "base_b": rng.uniform(0.1, 0.9, size=3),
        "grad_angle": rng.uniform(0.0, 2 * np.pi),
        "stripe_angle": rng.uniform(0.0, 2 * np.pi),
        "stripe_freq": rng.uniform(3.0, 9.0),
        "stripe_phase": rng.uniform(0.0, 2 * np.pi),
        "stripe_color": rng.uniform(-0.35, 0.35, size=3),
        "n_blobs": int(rng.integers(2, 5)),
    }
    params["blob_centers"] = rng.uniform(0.0, 1.0, size=(params["n_blobs"], 2))
    params["blob_radii"] = rng.uniform(0.08, 0.25, size=params["n_blobs"])
    params["blob_colors"] = rng.uniform(-0.4, 0.4, size=(params["n_blobs"], 3))
    return params


def _render_window(params: dict, u0: float, v0: float, window: float, size: int) -> np.ndarray:
    """Render a window [u0, u0+window] x [v0, v0+window] of the scene canvas."""
    coords = np.linspace(0.0, window, size, dtype=np.float64)
    u = u0 + coords[None, :]  # columns
    v = v0 + coords[:, None]  # rows

    ga = params["grad_angle"]
    ramp = (u * np.cos(ga) + v * np.sin(ga) + 1.0) / 2.0  # roughly [0, 1]
    ramp = np.clip(ramp, 0.0, 1.0)
    img = (
        params["base_a"][:, None, None] * (1.0 - ramp)[None]
        + params["base_b"][:, None, None] * ramp[None]
    )

    sa = params["stripe_angle"]
    phase = 2 * np.pi * params["stripe_freq"] * (u * np.cos(sa) + v * np.sin(sa))
    stripes = np.sin(phase + params["stripe_phase"])
    img = img + params["stripe_color"][:, None, None] * stripes[None]

    for center, radius, color in zip(
        params["blob_centers"], params["blob_radii"], params["blob_colors"]
    ):
        d2 = (u - center[0]) ** 2 + (v - center[1]) ** 2
        bump = np.exp(-d2 / (2.0 * radius**2))
        img = img + color[:, None, None] * bump[None]

    return img


def generate_synthetic_scenes(spec: SyntheticSceneSpec, seed: int) -> TileDataset:
    """Build a procedural dataset whose tiles share texture within each scene.

    Tiles of one scene are windows into a common procedural canvas (base color
    gradient, oriented stripes, Gaussian blobs) plus per-tile jitter and noise,
    so intra-scene pixel correlation exceeds inter-scene correlation.
    Deterministic for a fixed (spec, seed).
    """
    spec.validate()
    tiles: list[SceneTile] = []
    for s in range(spec.n_scenes):
        scene_seq = np.random.SeedSequence([seed, spec.texture_family_seed, s])
        scene_rng = np.random.default_rng(scene_seq)
        params = _scene_texture_params(scene_rng)
        scene_id = f"scene{s:03d}"
        for t in range(spec.tiles_per_scene):
            tile_rng = np.random.default_rng(
                np.random.SeedSequence([seed, spec.texture_family_seed, s, t])
            )
            window = 0.5
            u0 = tile_rng.uniform(0.0, 1.0 - window)
            v0 = tile_rng.uniform(0.0, 1.0 - window)
            img = _render_window(params, u0, v0, window, spec.tile_size)
            img = img * tile_rng.uniform(0.9, 1.1)  # per-tile exposure jitter
            if spec.noise_level > 0:
                img = img + spec.noise_level * tile_rng.standard_normal(img.shape)
            img = np.clip(img, 0.0, 1.0).astype(np.float32)
            tiles.append(SceneTile(pixels=img, scene_id=scene_id, tile_id=f"tile{t:03d}"))
    return TileDataset(tiles)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def _bilinear_resize(img: np.ndarray, out_size: int) -> np.ndarray:
    """Resize (3, H, W) to (3, out_size, out_size) with bilinear interpolation."""
    _, h, w = img.shape
    if h == out_size and w == out_size:
        return img.copy()
    ys = np.linspace(0.0, h - 1.0, out_size)
    xs = np.linspace(0.0, w - 1.0, out_size)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[:, y0[:, None], x0[None, :]] * (1 - wx) + img[:, y0[:, None], x1[None, :]] * wx
    bot = img[:, y1[:, None], x0[None, :]] * (1 - wx) + img[:, y1[:, None], x1[None, :]] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def _augment_once(img: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    _, h, w = img.shape
    out_size = config.out_size if config.out_size is not None else h

    view = img
    if rng.random() < config.crop_prob:
        scale = rng.uniform(*config.crop_scale)
        side = max(1, int(round(min(h, w) * np.sqrt(scale))))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        view = view[:, top : top + side, left : left + side]
    view = _bilinear_resize(view, out_size)

    if rng.random() < config.jitter_prob:
        s = config.jitter_strength
        brightness, contrast, saturation = rng.uniform(1.0 - s, 1.0 + s, size=3)
        view = view * brightness
        mean = view.mean()
        view = mean + (view - mean) * contrast
        gray = view.mean(axis=0, keepdims=True)
        view = gray + (view - gray) * saturation

    if rng.random() < config.flip_prob:
        view = view[:, :, ::-1]

    if rng.random() < config.grayscale_prob:
        luma = 0.299 * view[0] + 0.587 * view[1] + 0.114 * view[2]
        view = np.broadcast_to(luma, view.shape).copy()

    return np.clip(view, 0.0, 1.0).astype(np.float32)


def augment_pair(
    tile: SceneTile, seed: int, config: AugmentConfig = AugmentConfig()
) -> AugmentedPair:
    """Sample two independent augmentations of one tile, deterministically per seed."""
    config.validate()
    tile.validate()
    if config.out_size is not None and config.out_size < 1:
        raise ParameterError(f"out_size must be >= 1, got {config.out_size}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    query = _augment_once(tile.pixels, config, rng)
    key = _augment_once(tile.pixels, config, rng)
    pair = AugmentedPair(query_view=query, key_view=key, scene_id=tile.scene_id)
    pair.validate()
    return pair


# ---------------------------------------------------------------------------
# Disk layout: <root>/<scene_id>/<tile_id>.png + manifest.jsonl
# ---------------------------------------------------------------------------

def save_tile_directory(dataset: TileDataset, root: str | Path) -> Path:
    """Write tiles as 8-bit PNGs plus a line-delimited JSON manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for tile in dataset:
        scene_dir = root / tile.scene_id
        scene_dir.mkdir(exist_ok=True)
        rel = f"{tile.scene_id}/{tile.tile_id}.png"
        rgb = np.round(tile.pixels * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb, mode="RGB").save(root / rel)
        records.append({"file": rel, "scene_id": tile.scene_id, "tile_id": tile.tile_id})
    manifest = root / MANIFEST_NAME
    with manifest.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def load_tile_directory(root: str | Path, manifest: str | Path | None = None) -> TileDataset:
    """Load tiles listed by a JSONL manifest, rescaling pixels to [0, 1].

    Raises FileNotFoundError for missing files, FormatError for non-RGB
    images, and ManifestError for duplicate (scene_id, tile_id) pairs.
    """
    root = Path(root)
    manifest_path = Path(manifest) if manifest is not None else root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")

    tiles: list[SceneTile] = []
    seen: set[tuple[str, str]] = set()
    with manifest_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                file_rel, scene_id, tile_id = rec["file"], rec["scene_id"], rec["tile_id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ManifestError(f"{manifest_path}:{lineno}: bad record: {exc}") from exc
            key = (str(scene_id), str(tile_id))
            if key in seen:
                raise ManifestError(f"{manifest_path}:{lineno}: duplicate tile {key}")
            seen.add(key)
            path = root / file_rel
            if not path.exists():
                raise FileNotFoundError(f"tile file missing: {path}")
            with Image.open(path) as im:
                if im.mode != "RGB":
                    raise FormatError(f"{path}: expected RGB image, got mode {im.mode}")
                arr = np.asarray(im, dtype=np.float32) / 255.0
            tiles.append(
                SceneTile(pixels=arr.transpose(2, 0, 1), scene_id=key[0], tile_id=key[1])
            )
    return TileDataset(tiles)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def _tile_augment_seed(seed: int, epoch: int, tile_index: int) -> int:
    # Stable per (run seed, epoch, tile); keeps resumed runs bit-compatible.
    return int(
        np.random.SeedSequence([seed, epoch, tile_index]).generate_state(1, np.uint32)[0]
    )


def iter_epoch(
    dataset: TileDataset,
    batch_size: int,
    seed: int,
    epoch: int,
    config: AugmentConfig = AugmentConfig(),
) -> Iterator[list[AugmentedPair]]:
    """Yield one shuffled epoch of augmented-pair batches, deterministic per (seed, epoch).

    Every tile appears exactly once per epoch; the final batch may be short.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > len(dataset):
        raise ConfigurationError(
            f"batch_size {batch_size} exceeds dataset size {len(dataset)}"
        )
    order = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(
        len(dataset)
    )
    for start in range(0, len(order), batch_size):
        batch = []
        for idx in order[start : start + batch_size]:
            tile = dataset[int(idx)]
            batch.append(
                augment_pair(tile, _tile_augment_seed(seed, epoch, int(idx)), config)
            )
        yield batch


def with_out_size(config: AugmentConfig, out_size: int) -> AugmentConfig:
    """Copy of an augmentation config pinned to a fixed output side."""
    return replace(config, out_size=out_size)
