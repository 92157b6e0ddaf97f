"""Pixel-neighborhood classifiers.

A classifier maps an image tile centered on a pixel to a small odd-sized
grid of foreground probabilities for the pixels around that center. Three
interchangeable backends are provided:

* ``OracleClassifier``   reads a ground-truth mask (exactness reference),
* ``ProbmapClassifier``  reads a dense probability map produced elsewhere,
* ``ModelClassifier``    evaluates a trainable linear-logistic model on
  pooled tile features.

All backends are immutable after construction. ``bind(img)`` performs the
per-image preparation (padding, pooled maps) once, so repeated batch
calls against the same image stay cheap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imgio import FormatError, as_image, as_mask

MODEL_MAGIC = b"RGMODELv1\n"


@dataclass(frozen=True)
class ClassifierConfig:
    tile_size: int = 80
    out_size: int = 3
    n_classes: int = 2

    def __post_init__(self) -> None:
        if self.out_size < 1 or self.out_size % 2 == 0:
            raise ValueError(f"out_size must be odd and >= 1, got {self.out_size}")
        if self.tile_size < self.out_size:
            raise ValueError("tile_size must be >= out_size")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")


@dataclass(frozen=True)
class FeatureSpec:
    """Descriptor of the pooled tile features used by the trainable model."""

    pool: int = 8  # pooled intensity grid is pool x pool per channel
    gradient: bool = True  # add one mean absolute-difference feature per channel
    channels: int = 1

    def __post_init__(self) -> None:
        if self.pool < 1:
            raise ValueError("pool must be >= 1")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    @property
    def n_features(self) -> int:
        return self.pool * self.pool * self.channels + (self.channels if self.gradient else 0)


@dataclass
class NeighborhoodPrediction:
    center: tuple[int, int]
    probs: np.ndarray  # (out_size, out_size) foreground probabilities


def _as_centers(centers) -> np.ndarray:
    arr = np.asarray(centers, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"centers must be (n, 2) row/col pairs, got {arr.shape}")
    return arr


def _check_bounds(centers: np.ndarray, shape: tuple[int, int]) -> None:
    if len(centers) == 0:
        return
    h, w = shape
    ok = (centers[:, 0] >= 0) & (centers[:, 0] < h) & (centers[:, 1] >= 0) & (centers[:, 1] < w)
    if not ok.all():
        bad = centers[~ok][0]
        raise ValueError(f"center {tuple(bad)} outside {h}x{w} image")


class _BoundLookup:
    """Windowed lookup into a fixed per-pixel probability field."""

    def __init__(self, field: np.ndarray, out_size: int):
        half = out_size // 2
        self._padded = np.pad(field.astype(np.float64), half)
        self._shape = field.shape
        self._k = out_size

    def predict_probs(self, centers) -> np.ndarray:
        centers = _as_centers(centers)
        _check_bounds(centers, self._shape)
        k = self._k
        rows = centers[:, 0, None, None] + np.arange(k)[None, :, None]
        cols = centers[:, 1, None, None] + np.arange(k)[None, None, :]
        return self._padded[rows, cols]


class OracleClassifier:
    """Emits probability 1.0 on ground-truth foreground, 0.0 elsewhere."""

    def __init__(self, gt: np.ndarray, config: ClassifierConfig | None = None):
        self.gt = as_mask(gt)
        self.config = config or ClassifierConfig()

    def bind(self, img: np.ndarray) -> _BoundLookup:
        img = as_image(img)
        if img.shape[:2] != self.gt.shape:
            raise ValueError(f"image {img.shape[:2]} does not match ground truth {self.gt.shape}")
        return _BoundLookup(self.gt.astype(np.float64), self.config.out_size)


class ProbmapClassifier:
    """Reads neighborhood probabilities out of a dense probability map."""

    def __init__(self, pmap: np.ndarray, config: ClassifierConfig | None = None):
        pmap = np.asarray(pmap, dtype=np.float64)
        if pmap.ndim != 2 or pmap.size == 0:
            raise ValueError(f"probability map must be 2-d, got shape {pmap.shape}")
        if pmap.min() < 0.0 or pmap.max() > 1.0:
            raise ValueError("probability map values must lie in [0, 1]")
        self.pmap = pmap
        self.config = config or ClassifierConfig()

    def bind(self, img: np.ndarray) -> _BoundLookup:
        img = as_image(img)
        if img.shape[:2] != self.pmap.shape:
            raise ValueError(f"image {img.shape[:2]} does not match map {self.pmap.shape}")
        return _BoundLookup(self.pmap, self.config.out_size)


# ---------------------------------------------------------------------------
# trainable linear-logistic model

@dataclass
class ClassifierModel:
    """Per-output-position logistic weights over pooled tile features.

    ``weights`` has shape (out_size^2, n_features + 1); the last column is
    the bias. Stored as float32 so that saved models round-trip bit-exactly.
    """

    config: ClassifierConfig
    feature_spec: FeatureSpec
    weights: np.ndarray
    version: int = 1

    def __post_init__(self) -> None:
        if self.config.n_classes != 2:
            raise ValueError("trainable model supports n_classes=2 only")
        expected = (self.config.out_size**2, self.feature_spec.n_features + 1)
        self.weights = np.asarray(self.weights, dtype=np.float32)
        if self.weights.shape != expected:
            raise ValueError(f"weights shape {self.weights.shape}, expected {expected}")


def new_model(config: ClassifierConfig | None = None, feature_spec: FeatureSpec | None = None) -> ClassifierModel:
    """Zero-initialized model: every output probability starts at 0.5."""
    config = config or ClassifierConfig()
    feature_spec = feature_spec or FeatureSpec()
    if config.tile_size % feature_spec.pool != 0:
        raise ValueError("tile_size must be divisible by the pooling grid")
    shape = (config.out_size**2, feature_spec.n_features + 1)
    return ClassifierModel(config=config, feature_spec=feature_spec, weights=np.zeros(shape, np.float32))


def batch_features(tiles: np.ndarray, spec: FeatureSpec) -> np.ndarray:
    """Pooled features for a stack of tiles, shape (n, T, T, C) -> (n, n_features).

    Per channel: a pool x pool grid of block-mean intensities, plus (when
    enabled) the mean absolute forward difference along both axes.
    """
    tiles = np.asarray(tiles, dtype=np.float64)
    if tiles.ndim != 4:
        raise ValueError(f"expected tiles of shape (n, T, T, C), got {tiles.shape}")
    n, th, tw, c = tiles.shape
    if th != tw or c != spec.channels or th % spec.pool != 0:
        raise ValueError(f"tile shape {tiles.shape[1:]} incompatible with {spec}")
    block = th // spec.pool
    pooled = tiles.reshape(n, spec.pool, block, spec.pool, block, c).mean(axis=(2, 4))
    feats = [pooled.reshape(n, -1)]
    if spec.gradient:
        gx = np.abs(np.diff(tiles, axis=2)).sum(axis=(1, 2))
        gy = np.abs(np.diff(tiles, axis=1)).sum(axis=(1, 2))
        feats.append((gx + gy) / (2.0 * th * (th - 1)))
    return np.concatenate(feats, axis=1)


def feature_extract(tile: np.ndarray, spec: FeatureSpec) -> np.ndarray:
    """Feature vector for a single tile of shape (T, T, C)."""
    tile = np.asarray(tile)
    if tile.ndim != 3:
        raise ValueError(f"expected tile of shape (T, T, C), got {tile.shape}")
    return batch_features(tile[None], spec)[0]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(weights: np.ndarray, features: np.ndarray, out_size: int) -> np.ndarray:
    """Logistic probabilities, (n, n_features) -> (n, out_size, out_size).

    The dot products are reduced per row (not via matmul) so results are
    bit-identical however the batch is partitioned.
    """
    n = len(features)
    x = np.concatenate([features, np.ones((n, 1))], axis=1)
    z = (x[:, None, :] * weights.astype(np.float64)[None, :, :]).sum(axis=2)
    # keep outputs strictly inside (0, 1) even where the logistic saturates
    probs = np.clip(_sigmoid(z), 1e-12, 1.0 - 1e-12)
    return probs.reshape(n, out_size, out_size)


def predict_model(model: ClassifierModel, tile: np.ndarray) -> np.ndarray:
    """Probability grid for one tile; all outputs lie strictly in (0, 1)."""
    if tile.shape != (model.config.tile_size, model.config.tile_size, model.feature_spec.channels):
        raise ValueError(
            f"tile shape {tile.shape} does not match model config "
            f"({model.config.tile_size}, {model.config.tile_size}, {model.feature_spec.channels})"
        )
    feats = feature_extract(tile, model.feature_spec)
    return _forward(model.weights, feats[None], model.config.out_size)[0]


def _box_sum(field: np.ndarray, wh: int, ww: int) -> np.ndarray:
    """Sums of all (wh, ww) windows of a (H, W, C) field, shape (H-wh+1, W-ww+1, C)."""
    h, w, c = field.shape
    integral = np.zeros((h + 1, w + 1, c))
    integral[1:, 1:] = field.cumsum(axis=0).cumsum(axis=1)
    return (
        integral[wh:, ww:]
        - integral[: h - wh + 1, ww:]
        - integral[wh:, : w - ww + 1]
        + integral[: h - wh + 1, : w - ww + 1]
    )


class _BoundModel:
    """Model evaluation against one image via precomputed box-mean maps.

    Pooled block means and tile-wide difference sums only depend on the
    tile's position, so they are computed once for the whole (zero-padded)
    image and gathered per center afterwards.
    """

    def __init__(self, model: ClassifierModel, img: np.ndarray):
        self.model = model
        t = model.config.tile_size
        spec = model.feature_spec
        if img.shape[2] != spec.channels:
            raise ValueError(f"image has {img.shape[2]} channels, model expects {spec.channels}")
        self._shape = img.shape[:2]
        half = t // 2
        padded = np.pad(img.astype(np.float64), ((half, half - 1), (half, half - 1), (0, 0)))
        block = t // spec.pool
        # block_mean[r, c, ch] = mean of padded[r : r + block, c : c + block, ch]
        self._block_mean = sliding_window_view(padded, (block, block), axis=(0, 1)).mean(axis=(3, 4))
        self._block = block
        if spec.gradient:
            dx = np.abs(np.diff(padded, axis=1))
            dy = np.abs(np.diff(padded, axis=0))
            # box sums over the (t, t-1) and (t-1, t) tile-difference windows
            # via integral images; O(1) per center
            sx = _box_sum(dx, t, t - 1)
            sy = _box_sum(dy, t - 1, t)
            self._grad = (sx + sy) / (2.0 * t * (t - 1))
        else:
            self._grad = None

    def predict_probs(self, centers) -> np.ndarray:
        centers = _as_centers(centers)
        _check_bounds(centers, self._shape)
        model, spec = self.model, self.model.feature_spec
        if len(centers) == 0:
            return np.zeros((0, model.config.out_size, model.config.out_size))
        rows, cols = centers[:, 0], centers[:, 1]
        grid = np.arange(spec.pool) * self._block
        pr = rows[:, None, None] + grid[None, :, None]
        pc = cols[:, None, None] + grid[None, None, :]
        pooled = self._block_mean[pr, pc].reshape(len(centers), -1)
        feats = pooled if self._grad is None else np.concatenate([pooled, self._grad[rows, cols]], axis=1)
        return _forward(model.weights, feats, model.config.out_size)


class ModelClassifier:
    def __init__(self, model: ClassifierModel):
        self.model = model
        self.config = model.config

    def bind(self, img: np.ndarray) -> _BoundModel:
        return _BoundModel(self.model, as_image(img))


# ---------------------------------------------------------------------------
# batch API

def classify_batch(classifier, img: np.ndarray, centers, batch_size: int = 100) -> list[NeighborhoodPrediction]:
    """Predict neighborhood probabilities for many centers of one image.

    Evaluation is chunked into batches; results are order-aligned with the
    input and independent of the chunking.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    centers = _as_centers(centers)
    bound = classifier.bind(as_image(img))
    chunks = [bound.predict_probs(centers[i : i + batch_size]) for i in range(0, len(centers), batch_size)]
    probs = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 0, 0))
    return [NeighborhoodPrediction(center=(int(r), int(c)), probs=p) for (r, c), p in zip(centers, probs)]


# ---------------------------------------------------------------------------
# model serialization: magic, version, config, feature spec, then the
# weights as little-endian float32 with an explicit count prefix

def save_model(model: ClassifierModel, path: str) -> None:
    if model.weights.size == 0:
        raise ValueError("refusing to save a model with empty weights")
    header = struct.pack(
        "<7I",
        model.version,
        model.config.tile_size,
        model.config.out_size,
        model.config.n_classes,
        model.feature_spec.pool,
        1 if model.feature_spec.gradient else 0,
        model.feature_spec.channels,
    )
    flat = np.ascontiguousarray(model.weights, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(header)
        f.write(struct.pack("<I", flat.size))
        f.write(flat.tobytes())


def load_model(path: str) -> ClassifierModel:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MODEL_MAGIC):
        raise FormatError(f"{path}: not a model file")
    off = len(MODEL_MAGIC)
    try:
        version, tile, out, ncls, pool, grad, channels = struct.unpack_from("<7I", data, off)
        off += struct.calcsize("<7I")
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
    except struct.error:
        raise OSError(f"{path}: truncated model header") from None
    if version != 1:
        raise FormatError(f"{path}: unsupported model version {version}")
    body = data[off : off + 4 * count]
    if len(body) < 4 * count:
        raise OSError(f"{path}: truncated weights (expected {count} floats)")
    config = ClassifierConfig(tile_size=tile, out_size=out, n_classes=ncls)
    spec = FeatureSpec(pool=pool, gradient=bool(grad), channels=channels)
    weights = np.frombuffer(body, dtype="<f4").reshape(out**2, spec.n_features + 1)
    return ClassifierModel(config=config, feature_spec=spec, weights=weights.copy(), version=version)
