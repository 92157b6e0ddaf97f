"""Dataset layout and train/validation splitting.

A dataset directory holds three subdirectories, `images/`, `masks/` and
`roi/`, with files paired by shared stem.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .imgio import SUPPORTED_EXTENSIONS, load_image, load_mask, save_image, save_mask

SUBDIRS = ("images", "masks", "roi")


@dataclass(frozen=True)
class Triple:
    """One image with its ground-truth segmentation and region of interest."""

    stem: str
    image: np.ndarray
    gt: np.ndarray
    roi: np.ndarray

    def __post_init__(self) -> None:
        if self.image.shape[:2] != self.gt.shape or self.gt.shape != self.roi.shape:
            raise ValueError(
                f"{self.stem}: image/gt/roi dimensions differ: "
                f"{self.image.shape[:2]} vs {self.gt.shape} vs {self.roi.shape}"
            )


@dataclass(frozen=True)
class DatasetSplit:
    train: list[Triple]
    validation: list[Triple]
    excluded_ids: list[str] = field(default_factory=list)


def split_dataset(
    triples: list[Triple],
    n_val: int,
    exclude: tuple[str, ...] | list[str] = (),
    rng_seed: int = 0,
) -> DatasetSplit:
    """Drop excluded stems, then randomly partition the rest into train/validation."""
    excluded = [t.stem for t in triples if t.stem in set(exclude)]
    kept = [t for t in triples if t.stem not in set(exclude)]
    if not 0 <= n_val < len(kept):
        raise ValueError(f"n_val={n_val} out of range for {len(kept)} usable triples")
    order = np.random.default_rng(rng_seed).permutation(len(kept))
    val_idx = set(order[:n_val].tolist())
    train = [kept[i] for i in range(len(kept)) if i not in val_idx]
    validation = [kept[i] for i in sorted(val_idx)]
    return DatasetSplit(train=train, validation=validation, excluded_ids=excluded)


def collect_stems(directory: str, extensions: tuple[str, ...] = SUPPORTED_EXTENSIONS) -> dict[str, str]:
    """Map file stem -> path for every matching file in a directory."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"not a directory: {directory}")
    out: dict[str, str] = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in extensions:
            if stem in out:
                raise ValueError(f"duplicate stem {stem!r} in {directory}")
            out[stem] = os.path.join(directory, name)
    return out


def load_dataset(root: str) -> list[Triple]:
    """Load every triple from an images/masks/roi directory layout."""
    paths = {sub: collect_stems(os.path.join(root, sub)) for sub in SUBDIRS}
    triples = []
    for stem in sorted(paths["images"]):
        for sub in ("masks", "roi"):
            if stem not in paths[sub]:
                raise ValueError(f"unpaired image {stem!r}: missing {sub}/ file")
        triples.append(
            Triple(
                stem=stem,
                image=load_image(paths["images"][stem]),
                gt=load_mask(paths["masks"][stem]),
                roi=load_mask(paths["roi"][stem]),
            )
        )
    if not triples:
        raise ValueError(f"no images found under {root}")
    return triples


def save_triple(root: str, triple: Triple) -> list[str]:
    """Write a triple into the dataset layout; returns the paths written."""
    written = []
    for sub in SUBDIRS:
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    img_ext = ".pgm" if triple.image.shape[2] == 1 else ".ppm"
    img_path = os.path.join(root, "images", triple.stem + img_ext)
    save_image(img_path, triple.image)
    written.append(img_path)
    for sub, mask in (("masks", triple.gt), ("roi", triple.roi)):
        path = os.path.join(root, sub, triple.stem + ".pgm")
        save_mask(path, mask)
        written.append(path)
    return written
