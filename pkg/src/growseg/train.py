"""Training pipeline for the reference neighborhood classifier.

Training data is drawn from (image, ground truth, RoI) triples by
neighborhood-count balanced sampling: every RoI pixel is bucketed by how
many foreground pixels its 3x3 neighborhood contains, and buckets are
sampled evenly, which roughly balances foreground/background centers.
The loss is pixel-wise cross-entropy, upweighted on ground-truth contour
pixels and their adjacent background, optimized with plain mini-batch
SGD. Tiles are augmented with right-angle rotations and small
brightness/contrast perturbations; labels (and their weights) rotate with
the tile.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .classify import ClassifierModel, batch_features, _sigmoid
from .dataset import DatasetSplit, Triple
from .imgio import as_mask, pad_for_tiles

CLAMP_EPS = 1e-7


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1.0
    boundary_weight: float = 5.0
    samples_per_count: int = 500
    pretrain: bool = True
    pretrain_size: int = 5000
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.boundary_weight < 1.0:
            raise ValueError("boundary_weight must be >= 1")
        if self.samples_per_count < 1:
            raise ValueError("samples_per_count must be >= 1")
        if self.pretrain_size < 1:
            raise ValueError("pretrain_size must be >= 1")


@dataclass(frozen=True)
class TrainSample:
    image_index: int
    center: tuple[int, int]
    label: np.ndarray  # (out, out) uint8
    weight: np.ndarray  # (out, out) float64


@dataclass(frozen=True)
class EpochStats:
    epoch: int  # 0 = pre-training epoch
    train_loss: float
    val_loss: float


# ---------------------------------------------------------------------------
# neighborhood counts and boundary weights

def count_map(gt: np.ndarray) -> np.ndarray:
    """Per pixel: number of foreground pixels in its 3x3 neighborhood (0..9)."""
    gt = as_mask(gt)
    padded = np.pad(gt.astype(np.int64), 1)
    return sliding_window_view(padded, (3, 3)).sum(axis=(2, 3))


def neighborhood_count(gt: np.ndarray, pixel: tuple[int, int]) -> int:
    """Foreground count in the 3x3 window around one pixel; off-image counts 0."""
    gt = as_mask(gt)
    r, c = int(pixel[0]), int(pixel[1])
    h, w = gt.shape
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"pixel {pixel} outside {h}x{w} mask")
    return int(gt[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2].sum())


def boundary_weight_map(gt: np.ndarray, boundary_weight: float) -> np.ndarray:
    """Loss weights: boundary_weight on contour pixels and the background
    pixels 8-adjacent to them, 1.0 everywhere else.

    A contour pixel is a foreground pixel with at least one background
    8-neighbor; off-image neighbors count as background.
    """
    gt = as_mask(gt)
    if boundary_weight < 1.0:
        raise ValueError("boundary_weight must be >= 1")
    fg = gt > 0
    window_min = sliding_window_view(np.pad(gt, 1, constant_values=0), (3, 3)).min(axis=(2, 3))
    contour = fg & (window_min == 0)
    near_contour = sliding_window_view(np.pad(contour, 1), (3, 3)).max(axis=(2, 3))
    weighted = contour | (~fg & near_contour)
    return np.where(weighted, float(boundary_weight), 1.0)


# ---------------------------------------------------------------------------
# sample selection

def _window(padded: np.ndarray, r: int, c: int, out_size: int) -> np.ndarray:
    # padded has a margin of out_size//2 on each side
    return padded[r : r + out_size, c : c + out_size]


def _make_samples(
    triples: list[Triple],
    picks: list[tuple[int, int, int]],
    boundary_weight: float,
    out_size: int,
) -> list[TrainSample]:
    half = out_size // 2
    gt_pad = [np.pad(t.gt, half) for t in triples]
    wm_pad = [
        np.pad(boundary_weight_map(t.gt, boundary_weight), half, constant_values=1.0)
        for t in triples
    ]
    return [
        TrainSample(
            image_index=i,
            center=(r, c),
            label=_window(gt_pad[i], r, c, out_size).copy(),
            weight=_window(wm_pad[i], r, c, out_size).copy(),
        )
        for i, r, c in picks
    ]


def _roi_pixels(triples: list[Triple]) -> tuple[np.ndarray, np.ndarray]:
    """All RoI pixel coordinates as (image_index, row, col) plus their counts."""
    coords, counts = [], []
    for i, t in enumerate(triples):
        cm = count_map(t.gt)
        rs, cs = np.nonzero(t.roi)
        coords.append(np.stack([np.full(len(rs), i), rs, cs], axis=1))
        counts.append(cm[rs, cs])
    return np.concatenate(coords, axis=0), np.concatenate(counts)


def balanced_sample(
    split: DatasetSplit,
    samples_per_count: int,
    rng_seed: int = 0,
    boundary_weight: float = 5.0,
    out_size: int = 3,
    subset: str = "train",
) -> list[TrainSample]:
    """Sample RoI pixels evenly across neighborhood-count buckets 0..9.

    Buckets with fewer pixels than samples_per_count are exhausted;
    sampling is without replacement within a bucket and deterministic for
    a given seed.
    """
    triples = split.train if subset == "train" else split.validation
    if not triples:
        raise ValueError(f"split has no {subset} images")
    coords, counts = _roi_pixels(triples)
    if len(coords) == 0:
        raise ValueError("no RoI pixels to sample from")
    rng = np.random.default_rng(rng_seed)
    picks: list[tuple[int, int, int]] = []
    for bucket in range(10):
        idx = np.flatnonzero(counts == bucket)
        if len(idx) == 0:
            continue
        take = min(samples_per_count, len(idx))
        chosen = rng.choice(idx, size=take, replace=False)
        picks.extend((int(coords[j, 0]), int(coords[j, 1]), int(coords[j, 2])) for j in chosen)
    return _make_samples(triples, picks, boundary_weight, out_size)


def pretrain_sample(
    split: DatasetSplit,
    n: int,
    rng_seed: int = 0,
    boundary_weight: float = 5.0,
    out_size: int = 3,
) -> list[TrainSample]:
    """Random sample with exactly ceil(n/2) foreground and floor(n/2) background centers."""
    triples = split.train
    if not triples:
        raise ValueError("split has no train images")
    coords, _ = _roi_pixels(triples)
    fg = np.array([triples[i].gt[r, c] > 0 for i, r, c in coords])
    n_fg = (n + 1) // 2
    n_bg = n // 2
    fg_idx = np.flatnonzero(fg)
    bg_idx = np.flatnonzero(~fg)
    if len(fg_idx) < n_fg or len(bg_idx) < n_bg:
        raise ValueError(
            f"not enough pixels per class: have {len(fg_idx)} fg / {len(bg_idx)} bg, "
            f"need {n_fg} / {n_bg}"
        )
    rng = np.random.default_rng(rng_seed)
    picks = [
        (int(coords[j, 0]), int(coords[j, 1]), int(coords[j, 2]))
        for j in np.concatenate(
            [rng.choice(fg_idx, n_fg, replace=False), rng.choice(bg_idx, n_bg, replace=False)]
        )
    ]
    return _make_samples(triples, picks, boundary_weight, out_size)


# ---------------------------------------------------------------------------
# loss and augmentation

def weighted_cross_entropy(pred: np.ndarray, label: np.ndarray, weight: np.ndarray) -> float:
    """Mean over positions of weight * cross-entropy(pred, label).

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if pred.shape != label.shape or pred.shape != weight.shape:
        raise ValueError(f"shape mismatch: {pred.shape} / {label.shape} / {weight.shape}")
    p = np.clip(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)
    ce = -label * np.log(p) - (1.0 - label) * np.log(1.0 - p)
    return float(np.mean(weight * ce))


def photometric_adjust(tile: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """clip(contrast * (v - 0.5) + 0.5 + brightness, 0, 1) per value."""
    return np.clip(contrast * (tile - 0.5) + 0.5 + brightness, 0.0, 1.0)


def augment_tile(
    tile: np.ndarray, label: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Random right-angle rotation (tile and label together) plus a small
    brightness shift in [-0.1, 0.1] and contrast scale in [0.9, 1.1]."""
    k = int(rng.integers(0, 4))
    b = rng.uniform(-0.1, 0.1)
    c = rng.uniform(0.9, 1.1)
    out_tile = photometric_adjust(np.rot90(tile, k, axes=(0, 1)), b, c)
    return out_tile, np.rot90(label, k)


def _augment_batch(
    tiles: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(tiles)
    ks = rng.integers(0, 4, size=n)
    bs = rng.uniform(-0.1, 0.1, size=n)
    cs = rng.uniform(0.9, 1.1, size=n)
    tiles = tiles.copy()
    labels = labels.copy()
    weights = weights.copy()
    for k in (1, 2, 3):
        sel = ks == k
        if sel.any():
            tiles[sel] = np.rot90(tiles[sel], k, axes=(1, 2))
            labels[sel] = np.rot90(labels[sel], k, axes=(1, 2))
            weights[sel] = np.rot90(weights[sel], k, axes=(1, 2))
    tiles = photometric_adjust(tiles, bs[:, None, None, None], cs[:, None, None, None])
    return tiles, labels, weights


# ---------------------------------------------------------------------------
# optimization

def loss_and_grad(
    weights: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Boundary-weighted cross-entropy and its gradient w.r.t. the weights.

    weights: (P, D+1) with bias last; features: (B, D); labels and
    sample_weights: (B, P). The loss is the batch mean of the per-sample
    position-mean weighted cross-entropy.
    """
    b, p = labels.shape
    x = np.concatenate([features, np.ones((b, 1))], axis=1)
    z = x @ weights.T
    probs = _sigmoid(z)
    pc = np.clip(probs, CLAMP_EPS, 1.0 - CLAMP_EPS)
    ce = -labels * np.log(pc) - (1.0 - labels) * np.log(1.0 - pc)
    loss = float(np.mean(np.mean(sample_weights * ce, axis=1)))
    dz = sample_weights * (probs - labels) / (p * b)
    return loss, dz.T @ x


def _batch_arrays(
    samples: list[TrainSample],
    padded_images: list[np.ndarray],
    tile_size: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tiles = np.stack(
        [
            padded_images[s.image_index][
                s.center[0] : s.center[0] + tile_size, s.center[1] : s.center[1] + tile_size
            ]
            for s in samples
        ]
    ).astype(np.float64)
    labels = np.stack([s.label for s in samples]).astype(np.float64)
    weights = np.stack([s.weight for s in samples]).astype(np.float64)
    return tiles, labels, weights


def _check_classes(triples: list[Triple]) -> None:
    any_fg = any((t.gt & t.roi).any() for t in triples)
    any_bg = any(((1 - t.gt) & t.roi).any() for t in triples)
    if not (any_fg and any_bg):
        raise ValueError("training data must contain both classes inside the RoI")


def fit(
    model: ClassifierModel,
    split: DatasetSplit,
    config: TrainConfig,
) -> tuple[ClassifierModel, list[EpochStats]]:
    """Train a model on a split; returns the fitted model and loss history.

    Training samples are redrawn every epoch; the validation sample is
    drawn once and kept fixed. With pretraining enabled, one epoch on a
    50/50 foreground/background-center sample runs first (epoch 0 in the
    history). Deterministic for a given config.rng_seed.
    """
    _check_classes(split.train)
    if not split.validation:
        raise ValueError("fit requires at least one validation image")
    rng = np.random.default_rng(config.rng_seed)
    spec = model.feature_spec
    tile_size = model.config.tile_size
    out_size = model.config.out_size
    train_padded = [pad_for_tiles(t.image, tile_size) for t in split.train]
    val_padded = [pad_for_tiles(t.image, tile_size) for t in split.validation]

    val_samples = balanced_sample(
        split,
        config.samples_per_count,
        rng_seed=int(rng.integers(2**32)),
        boundary_weight=config.boundary_weight,
        out_size=out_size,
        subset="validation",
    )
    vt, val_labels, val_weights = _batch_arrays(val_samples, val_padded, tile_size)
    val_features = batch_features(vt, spec)
    val_labels = val_labels.reshape(len(val_samples), -1)
    val_weights = val_weights.reshape(len(val_samples), -1)

    w = model.weights.astype(np.float64)

    def run_epoch(samples: list[TrainSample]) -> float:
        nonlocal w
        order = rng.permutation(len(samples))
        total, seen = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            batch = [samples[j] for j in order[i : i + config.batch_size]]
            tiles, labels, weights = _batch_arrays(batch, train_padded, tile_size)
            tiles, labels, weights = _augment_batch(tiles, labels, weights, rng)
            feats = batch_features(tiles, spec)
            loss, grad = loss_and_grad(
                w, feats, labels.reshape(len(batch), -1), weights.reshape(len(batch), -1)
            )
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss {loss}")
            w -= config.learning_rate * grad
            total += loss * len(batch)
            seen += len(batch)
        return total / seen

    def val_loss() -> float:
        loss, _ = loss_and_grad(w, val_features, val_labels, val_weights)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite validation loss {loss}")
        return loss

    history: list[EpochStats] = []
    if config.pretrain:
        pre = pretrain_sample(
            split,
            config.pretrain_size,
            rng_seed=int(rng.integers(2**32)),
            boundary_weight=config.boundary_weight,
            out_size=out_size,
        )
        history.append(EpochStats(epoch=0, train_loss=run_epoch(pre), val_loss=val_loss()))
    for epoch in range(1, config.epochs + 1):
        samples = balanced_sample(
            split,
            config.samples_per_count,
            rng_seed=int(rng.integers(2**32)),
            boundary_weight=config.boundary_weight,
            out_size=out_size,
        )
        history.append(EpochStats(epoch=epoch, train_loss=run_epoch(samples), val_loss=val_loss()))

    fitted = replace(model, weights=w.astype(np.float32))
    return fitted, history
