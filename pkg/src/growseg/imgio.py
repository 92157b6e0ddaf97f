"""Raster I/O and tile extraction.

Images are float32 arrays of shape (H, W, C) with C in {1, 3} and values
in [0, 1]; masks are uint8 arrays of shape (H, W) with values in {0, 1}.
Supported on disk: 8-bit PNG, binary PGM (P5) and PPM (P6), plus the
PMAPv1 float-map format used to exchange per-pixel probabilities.
"""

from __future__ import annotations

import io
import os

import numpy as np
from PIL import Image as PILImage

SUPPORTED_EXTENSIONS = (".png", ".pgm", ".ppm")


class FormatError(ValueError):
    """File exists but its contents are not in a supported format."""


def as_image(arr: np.ndarray) -> np.ndarray:
    """Validate and canonicalize an image array to float32 (H, W, C)."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"image must be (H, W) or (H, W, 1|3), got {a.shape}")
    if a.size == 0:
        raise ValueError("image has zero area")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return a


def as_mask(arr: np.ndarray) -> np.ndarray:
    """Validate and canonicalize a binary mask to uint8 (H, W) in {0, 1}."""
    a = np.asarray(arr)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"mask must be a nonempty 2-d array, got shape {a.shape}")
    if a.dtype == bool:
        return a.astype(np.uint8)
    a = a.astype(np.uint8, copy=False)
    bad = (a != 0) & (a != 1)
    if bad.any():
        raise ValueError("mask values must be exactly 0 or 1")
    return a


# ---------------------------------------------------------------------------
# PGM / PPM (binary, 8-bit)

def _read_pnm(data: bytes, path: str) -> np.ndarray:
    """Parse binary P5/P6 bytes into a uint8 array (H, W) or (H, W, 3)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments run to end of line
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise FormatError(f"{path}: truncated header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            try:
                tokens.append(int(data[pos:end]))
            except ValueError:
                raise FormatError(f"{path}: bad header token {data[pos:end]!r}") from None
            pos = end
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = tokens
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit rasters supported (maxval={maxval})")
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    body = data[pos : pos + n]
    if len(body) < n:
        raise FormatError(f"{path}: truncated pixel data")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    return arr[:, :, 0] if channels == 1 else arr


def _write_pnm(path: str, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr, dtype=np.uint8)
    if a.ndim == 2:
        magic = b"P5"
        h, w = a.shape
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
        h, w = a.shape[:2]
    else:
        raise ValueError(f"cannot write array of shape {a.shape} as PGM/PPM")
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(a.tobytes())


# ---------------------------------------------------------------------------
# public loaders / savers

def _read_raw(path: str) -> np.ndarray:
    """Read any supported raster file as uint8 (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] in (b"P5", b"P6"):
        return _read_pnm(data, path)
    try:
        pil = PILImage.open(io.BytesIO(data))
        pil.load()
    except Exception as exc:
        raise FormatError(f"{path}: unrecognized image file ({exc})") from exc
    if pil.mode == "P":
        pil = pil.convert("RGB")
    if pil.mode not in ("L", "RGB"):
        raise FormatError(f"{path}: unsupported mode {pil.mode!r} (8-bit L/RGB only)")
    return np.asarray(pil, dtype=np.uint8)


def load_image(path: str) -> np.ndarray:
    """Load an 8-bit raster and normalize values to [0, 1] by dividing by 255."""
    raw = _read_raw(path)
    return as_image(raw.astype(np.float32) / 255.0)


def save_image(path: str, img: np.ndarray) -> None:
    """Write an image; format chosen by extension (.png, .pgm, .ppm)."""
    img = as_image(img)
    raw = np.rint(img * 255.0).astype(np.uint8)
    if raw.shape[2] == 1:
        raw = raw[:, :, 0]
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        PILImage.fromarray(raw).save(path, format="PNG")
    elif ext in (".pgm", ".ppm"):
        _write_pnm(path, raw)
    else:
        raise ValueError(f"unsupported image extension {ext!r}")


def load_mask(path: str) -> np.ndarray:
    """Load a single-channel raster as a binary mask (1 iff raw value > 127)."""
    raw = _read_raw(path)
    if raw.ndim != 2:
        raise FormatError(f"{path}: mask files must be single-channel")
    return (raw > 127).astype(np.uint8)


def save_mask(path: str, mask: np.ndarray) -> None:
    """Write a mask as binary PGM (P5) with values {0, 255}."""
    mask = as_mask(mask)
    _write_pnm(path, mask * np.uint8(255))


# ---------------------------------------------------------------------------
# PMAPv1: ASCII header "PMAPv1 <width> <height>\n", then H*W little-endian
# float32, row-major.

def read_pmap(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing PMAP header")
    parts = data[:nl].split()
    if len(parts) != 3 or parts[0] != b"PMAPv1":
        raise FormatError(f"{path}: bad PMAP header {data[:nl]!r}")
    try:
        width, height = int(parts[1]), int(parts[2])
    except ValueError:
        raise FormatError(f"{path}: bad PMAP dimensions") from None
    n = width * height
    body = data[nl + 1 :]
    if len(body) < 4 * n:
        raise FormatError(f"{path}: truncated PMAP payload")
    arr = np.frombuffer(body[: 4 * n], dtype="<f4").reshape(height, width)
    return arr.astype(np.float32)


def write_pmap(path: str, values: np.ndarray) -> None:
    a = np.asarray(values, dtype=np.float32)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"PMAP payload must be a nonempty 2-d array, got {a.shape}")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"PMAPv1 %d %d\n" % (w, h))
        f.write(a.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# tiles

def extract_tile(img: np.ndarray, center: tuple[int, int], tile_size: int = 80) -> np.ndarray:
    """Extract the square tile centered at a pixel, zero-padding off-image parts.

    For even tile size T the tile covers rows [r - T/2, r + T/2 - 1] and the
    analogous columns, so the center pixel lands at tile index (T/2, T/2).
    """
    img = as_image(img)
    if tile_size < 2 or tile_size % 2 != 0:
        raise ValueError(f"tile_size must be even and >= 2, got {tile_size}")
    h, w, c = img.shape
    r, col = int(center[0]), int(center[1])
    if not (0 <= r < h and 0 <= col < w):
        raise ValueError(f"center {center} outside {h}x{w} image")
    half = tile_size // 2
    tile = np.zeros((tile_size, tile_size, c), dtype=img.dtype)
    r0, r1 = r - half, r + half  # exclusive end
    c0, c1 = col - half, col + half
    sr0, sr1 = max(r0, 0), min(r1, h)
    sc0, sc1 = max(c0, 0), min(c1, w)
    tile[sr0 - r0 : sr1 - r0, sc0 - c0 : sc1 - c0] = img[sr0:sr1, sc0:sc1]
    return tile


def pad_for_tiles(img: np.ndarray, tile_size: int) -> np.ndarray:
    """Zero-pad an image so any pixel can serve as a tile center.

    With padding (T/2 before, T/2 - 1 after) on both spatial axes, the tile
    at center (r, c) is padded[r : r + T, c : c + T].
    """
    half = tile_size // 2
    return np.pad(img, ((half, half - 1), (half, half - 1), (0, 0)))
