"""Iterative region-growing segmentation engine.

Growth starts from randomly sampled seed pixels inside the region of
interest. Every frontier pixel is classified in batches; the predicted
neighborhood probabilities are accumulated as votes on the covered
pixels. When all votes of an iteration have landed, each unadmitted RoI
pixel whose running average vote exceeds the threshold joins the mask and
the next frontier, so growth spreads one neighborhood step per iteration
and stops when no pixel is admitted.

A dense thresholding path over externally supplied probability maps is
included as the non-growing baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgio import as_image, as_mask


@dataclass(frozen=True)
class GrowConfig:
    threshold: float
    n_seeds: int = 10_000
    batch_size: int = 100
    rng_seed: int = 0
    max_iterations: int | None = None  # defaults to H*W at run time

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class VoteAccumulator:
    """Running per-pixel sum and count of received probability votes."""

    sum: np.ndarray  # float64 (H, W)
    count: np.ndarray  # int64 (H, W)

    def average(self) -> np.ndarray:
        """Mean vote per pixel; pixels without votes report 0.0."""
        return np.where(self.count > 0, self.sum / np.maximum(self.count, 1), 0.0)


@dataclass
class GrowResult:
    mask: np.ndarray
    iterations: int
    votes: VoteAccumulator
    pixels_evaluated: int
    snapshots: list[np.ndarray] | None = None


def sample_seeds(roi: np.ndarray, n_seeds: int, rng_seed: int = 0) -> np.ndarray:
    """Uniformly sample distinct RoI pixels, shape (min(n_seeds, |RoI|), 2)."""
    roi = as_mask(roi)
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    flat = np.flatnonzero(roi)
    if len(flat) == 0:
        raise ValueError("cannot sample seeds from an empty RoI")
    rng = np.random.default_rng(rng_seed)
    take = min(n_seeds, len(flat))
    chosen = rng.choice(flat, size=take, replace=False)
    rows, cols = np.divmod(chosen, roi.shape[1])
    return np.stack([rows, cols], axis=1).astype(np.int64)


def grow_region(
    img: np.ndarray,
    roi: np.ndarray,
    classifier,
    config: GrowConfig,
    seeds: np.ndarray | None = None,
    record_snapshots: bool = False,
) -> GrowResult:
    """Run the region-growing segmentation of one image.

    The result is deterministic for a given rng seed and independent of
    the batch partitioning: votes are accumulated per iteration in
    frontier order regardless of batch_size, and admission is decided only
    after the whole iteration is classified.
    """
    img = as_image(img)
    roi = as_mask(roi)
    h, w = roi.shape
    if img.shape[:2] != (h, w):
        raise ValueError(f"image {img.shape[:2]} does not match RoI {roi.shape}")
    if seeds is None:
        seeds = sample_seeds(roi, config.n_seeds, config.rng_seed)
    else:
        seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)
        if len(seeds) and not roi[seeds[:, 0], seeds[:, 1]].all():
            raise ValueError("explicit seeds must lie inside the RoI")

    bound = classifier.bind(img)
    k = classifier.config.out_size
    half = k // 2
    offsets = [(dr, dc) for dr in range(-half, half + 1) for dc in range(-half, half + 1)]

    vote_sum = np.zeros((h, w), dtype=np.float64)
    vote_count = np.zeros((h, w), dtype=np.int64)
    mask = np.zeros((h, w), dtype=bool)
    in_roi = roi > 0
    frontier = seeds
    iterations = 0
    evaluated = 0
    snapshots: list[np.ndarray] | None = [] if record_snapshots else None
    max_iterations = config.max_iterations if config.max_iterations is not None else h * w

    while len(frontier) > 0 and iterations < max_iterations:
        iterations += 1
        probs = np.concatenate(
            [
                bound.predict_probs(frontier[i : i + config.batch_size])
                for i in range(0, len(frontier), config.batch_size)
            ],
            axis=0,
        )
        evaluated += len(frontier)
        for idx, (dr, dc) in enumerate(offsets):
            rows = frontier[:, 0] + dr
            cols = frontier[:, 1] + dc
            valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
            np.add.at(vote_sum, (rows[valid], cols[valid]), probs[valid, idx // k, idx % k])
            np.add.at(vote_count, (rows[valid], cols[valid]), 1)
        voted = vote_count > 0
        average = np.where(voted, vote_sum / np.maximum(vote_count, 1), 0.0)
        admit = voted & in_roi & ~mask & (average > config.threshold)
        mask |= admit
        frontier = np.argwhere(admit)
        if snapshots is not None:
            snapshots.append(mask.astype(np.uint8))

    return GrowResult(
        mask=mask.astype(np.uint8),
        iterations=iterations,
        votes=VoteAccumulator(sum=vote_sum, count=vote_count),
        pixels_evaluated=evaluated,
        snapshots=snapshots,
    )


def dense_threshold_segment(pmap: np.ndarray, roi: np.ndarray, threshold: float) -> np.ndarray:
    """Baseline segmentation: keep RoI pixels whose map value exceeds the threshold."""
    pmap = np.asarray(pmap, dtype=np.float64)
    roi = as_mask(roi)
    if pmap.shape != roi.shape:
        raise ValueError(f"map {pmap.shape} does not match RoI {roi.shape}")
    return ((pmap > threshold) & (roi > 0)).astype(np.uint8)
