"""Shared independent oracles for the test suite.

These deliberately use naive algorithms (BFS queues, O(n^2) scans) so they
stay independent of the library code paths they check.
"""

from collections import deque

import numpy as np


def flood_fill_oracle(gt: np.ndarray, roi: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """BFS flood fill over (gt & roi) from the seeds, 8-connectivity.

    Each seed contributes its full 3x3 neighborhood as potential entry
    points (the neighborhood prediction covers all 8 neighbors), then the
    fill spreads only through included pixels.
    """
    target = (np.asarray(gt) > 0) & (np.asarray(roi) > 0)
    h, w = target.shape
    included = np.zeros((h, w), dtype=bool)
    queue: deque[tuple[int, int]] = deque()

    def try_include(r: int, c: int) -> None:
        if 0 <= r < h and 0 <= c < w and target[r, c] and not included[r, c]:
            included[r, c] = True
            queue.append((r, c))

    for r, c in np.asarray(seeds).reshape(-1, 2):
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                try_include(int(r) + dr, int(c) + dc)
    while queue:
        r, c = queue.popleft()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                try_include(r + dr, c + dc)
    return included.astype(np.uint8)


def brute_squared_distances(mask: np.ndarray) -> np.ndarray:
    """Min squared Euclidean distance to foreground, by scanning every pixel pair."""
    mask = np.asarray(mask)
    fg = np.argwhere(mask > 0)
    assert len(fg) > 0
    h, w = mask.shape
    ys, xs = np.mgrid[0:h, 0:w]
    d2 = (ys[:, :, None] - fg[:, 0]) ** 2 + (xs[:, :, None] - fg[:, 1]) ** 2
    return d2.min(axis=2)


def brute_mssd(a: np.ndarray, b: np.ndarray) -> float | None:
    a, b = np.asarray(a), np.asarray(b)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 0.0
    if na == 0 or nb == 0:
        return None
    total = np.sqrt(brute_squared_distances(b).astype(np.float64))[a > 0].sum()
    total += np.sqrt(brute_squared_distances(a).astype(np.float64))[b > 0].sum()
    return float(total / (na + nb))


def random_mask(rng: np.random.Generator, h: int, w: int, density: float = 0.2,
                allow_empty: bool = False) -> np.ndarray:
    mask = (rng.random((h, w)) < density).astype(np.uint8)
    if not allow_empty and mask.sum() == 0:
        mask[rng.integers(h), rng.integers(w)] = 1
    return mask
