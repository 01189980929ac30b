"""
images.py — Binary PGM (P5) I/O and the bundled digit fixture.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from config import DIGIT_FIXTURE
from errors import ImageFormatError
from numeric import ImageVector

logger = logging.getLogger(__name__)


# ── PGM ──────────────────────────────────────────────────────────────────────

def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated header tokens, skipping # comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path: str | Path) -> np.ndarray:
    """Decode an 8-bit binary PGM into an h × w uint8 array."""
    data = Path(path).read_bytes()
    tokens, offset = _header_tokens(data, 4)
    magic, width, height, max_value = tokens
    if magic != b"P5":
        raise ImageFormatError(f"{path}: expected binary PGM (P5), got {magic!r}")
    try:
        width, height, max_value = int(width), int(height), int(max_value)
    except ValueError as e:
        raise ImageFormatError(f"{path}: malformed PGM header") from e
    if max_value != 255:
        raise ImageFormatError(f"{path}: only 8-bit PGM is supported (maxval {max_value})")
    raster = data[offset:offset + width * height]
    if len(raster) != width * height:
        raise ImageFormatError(f"{path}: raster has {len(raster)} bytes, expected {width * height}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path: str | Path, pixels: np.ndarray):
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ImageFormatError(f"write_pgm expects an h×w uint8 array, got {pixels.dtype} {pixels.shape}")
    height, width = pixels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode() + pixels.tobytes())


# ── Images in [0, 1] ─────────────────────────────────────────────────────────

def load_image(path: str | Path, latent_side: int | None = None) -> ImageVector:
    """
    Load a square 8-bit PGM scaled to [0, 1]. With `latent_side`, the side must
    be latent_side · 2^m for some m ≥ 0.
    """
    pixels = read_pgm(path)
    height, width = pixels.shape
    if height != width:
        raise ImageFormatError(f"{path}: image must be square, got {width}×{height}")
    if latent_side is not None:
        ratio, rem = divmod(height, latent_side)
        if rem or ratio < 1 or ratio & (ratio - 1):
            raise ImageFormatError(
                f"{path}: side {height} is not a power-of-two multiple of latent side {latent_side}"
            )
    return ImageVector.from_grid(pixels.astype(np.float64) / 255.0)


def save_image(path: str | Path, image: ImageVector):
    """Clamp to [0, 1] and write as 8-bit PGM."""
    grid = np.clip(image.as_grid(), 0.0, 1.0)
    if grid.ndim != 2:
        raise ImageFormatError(f"only single-channel 2-D images can be saved, got shape {grid.shape}")
    write_pgm(path, np.rint(grid * 255.0).astype(np.uint8))
    logger.debug(f"[ 💾 save_image ] {path}")


# ── Bundled fixture ──────────────────────────────────────────────────────────

def digit_fixture() -> ImageVector:
    """The bundled 28×28 handwritten-style '0', read from `data/digit0.pgm`."""
    return load_image(DIGIT_FIXTURE)
