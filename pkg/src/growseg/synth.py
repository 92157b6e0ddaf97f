"""Synthetic vessel-like test imagery.

Each ground-truth object is drawn as a branching random walk stamped with
small discs, which keeps every tree a single 8-connected component and
gives variable stroke width. The intensity image is a smoothed rendering
of the mask plus Gaussian noise; the region of interest is a centered
disc mimicking a circular camera field of view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKGROUND_LEVEL = 0.25
FOREGROUND_LEVEL = 0.85
ROI_RADIUS_FRACTION = 0.47


@dataclass(frozen=True)
class SynthParams:
    height: int
    width: int
    n_trees: int = 3
    branch_prob: float = 0.08
    width_range: tuple[int, int] = (1, 4)
    noise_sigma: float = 0.05
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("image area must be positive")
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if not 0.0 <= self.branch_prob <= 1.0:
            raise ValueError("branch_prob must lie in [0, 1]")
        lo, hi = self.width_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad width_range {self.width_range}")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")


def _disc_offsets(width: int) -> np.ndarray:
    """Pixel offsets within Euclidean distance width/2 of the origin."""
    r = width / 2.0
    n = int(math.ceil(r))
    ys, xs = np.mgrid[-n : n + 1, -n : n + 1]
    keep = ys * ys + xs * xs <= r * r
    return np.stack([ys[keep], xs[keep]], axis=1)


def _roi_disc(height: int, width: int) -> np.ndarray:
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    radius = ROI_RADIUS_FRACTION * min(height, width)
    ys, xs = np.mgrid[0:height, 0:width]
    return ((ys - cy) ** 2 + (xs - cx) ** 2 <= radius * radius).astype(np.uint8)


def _gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = field.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        out = sliding_window_view(padded, 2 * radius + 1, axis=axis) @ kernel
    return out


def _tree_starts(rng: np.random.Generator, roi: np.ndarray, n_trees: int) -> list[tuple[int, int]]:
    """Sample start points inside the RoI, preferring mutual separation."""
    coords = np.argwhere(roi > 0)
    min_sep = max(6.0, min(roi.shape) / 6.0)
    starts: list[tuple[int, int]] = []
    for _ in range(n_trees):
        chosen = None
        for _attempt in range(64):
            cand = coords[rng.integers(len(coords))]
            if all((cand[0] - s[0]) ** 2 + (cand[1] - s[1]) ** 2 >= min_sep**2 for s in starts):
                chosen = cand
                break
        if chosen is None:
            chosen = coords[rng.integers(len(coords))]
        starts.append((int(chosen[0]), int(chosen[1])))
    return starts


def _grow_tree(
    rng: np.random.Generator,
    mask: np.ndarray,
    roi: np.ndarray,
    start: tuple[int, int],
    step_budget: int,
    params: SynthParams,
) -> None:
    h, w = mask.shape
    lo, hi = params.width_range
    offsets = {k: _disc_offsets(k) for k in range(lo, hi + 1)}
    # branch stack entries: (row, col, angle, stroke width); all branches draw
    # from one shared step budget so total drawn area stays bounded
    stack = [(float(start[0]), float(start[1]), rng.uniform(0.0, 2.0 * math.pi),
              int(rng.integers(lo, hi + 1)))]
    budget = step_budget
    while stack and budget > 0:
        y, x, angle, width = stack.pop()
        stalled = 0
        while budget > 0 and stalled < 8:
            iy, ix = int(math.floor(y + 0.5)), int(math.floor(x + 0.5))
            if not (0 <= iy < h and 0 <= ix < w) or roi[iy, ix] == 0:
                break
            budget -= 1
            pts = offsets[width] + (iy, ix)
            keep = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
            pts = pts[keep]
            # clip the stamp to the RoI disc; both regions are convex so the
            # stamped stroke stays 8-connected through its center
            pts = pts[roi[pts[:, 0], pts[:, 1]] > 0]
            mask[pts[:, 0], pts[:, 1]] = 1
            if rng.random() < params.branch_prob and len(stack) < 32:
                side = 1.0 if rng.random() < 0.5 else -1.0
                stack.append((y, x, angle + side * rng.uniform(0.4, 1.2),
                              int(np.clip(width + rng.integers(-1, 2), lo, hi))))
            angle += rng.normal(0.0, 0.22)
            width = int(np.clip(width + rng.integers(-1, 2), lo, hi))
            ny, nx = y + math.sin(angle), x + math.cos(angle)
            niy, nix = int(math.floor(ny + 0.5)), int(math.floor(nx + 0.5))
            if 0 <= niy < h and 0 <= nix < w and roi[niy, nix] > 0:
                y, x = ny, nx
                stalled = 0
            else:
                # bounce back toward the RoI interior instead of leaving
                angle += math.pi + rng.normal(0.0, 0.4)
                stalled += 1


def generate_synthetic(params: SynthParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Generate one (image, ground-truth mask, RoI mask) triple.

    Deterministic for a given rng_seed. The image is float32 (H, W, 1) in
    [0, 1]; both masks are uint8 (H, W) in {0, 1}.
    """
    rng = np.random.default_rng(params.rng_seed)
    roi = _roi_disc(params.height, params.width)
    mask = np.zeros((params.height, params.width), dtype=np.uint8)
    # total drawn area targets a DRIVE-like fraction of the RoI regardless of size
    step_budget = max(24, int(0.022 * params.height * params.width / max(params.n_trees, 1)))
    for start in _tree_starts(rng, roi, params.n_trees):
        _grow_tree(rng, mask, roi, start, step_budget, params)
    rendered = _gaussian_blur(mask.astype(np.float64), sigma=0.8)
    img = BACKGROUND_LEVEL + (FOREGROUND_LEVEL - BACKGROUND_LEVEL) * rendered
    if params.noise_sigma > 0.0:
        img = img + rng.normal(0.0, params.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)[:, :, None]
    return img, mask, roi
