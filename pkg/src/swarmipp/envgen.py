"""Ground-truth ingestion: synthetic star fields and grayscale image loading.

Synthetic environments are fields of jittered star polygons; generated images
use the same convention as user-supplied ones: dark pixels (0) are valuable,
bright pixels (255) valueless.  Thermal white-hot imagery flips that polarity,
so the loader takes an invert flag.  An optional mask image marks no-fly
building cells, and an integer downsample factor pools blocks by majority
vote.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .grid import ConfigurationError, GroundTruthGrid


@dataclass(frozen=True)
class SyntheticEnvSpec:
    """Parameters of the star-blob generator."""

    kind: str = "star_blobs"
    width: int = 30
    height: int = 30
    n_shapes: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind != "star_blobs":
            raise ConfigurationError(f"unknown generator kind {self.kind!r}")
        if self.n_shapes < 1:
            raise ConfigurationError("n_shapes must be >= 1")
        if self.width < 4 or self.height < 4:
            raise ConfigurationError("grid must be at least 4x4")


def render_star_field(
    width: int, height: int, n_shapes: int, rng: np.random.Generator
) -> np.ndarray:
    """Binary (height, width) array with n filled, jittered star polygons."""
    img = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(img)
    for _ in range(n_shapes):
        cx = rng.uniform(0.15, 0.85) * width
        cy = rng.uniform(0.15, 0.85) * height
        spikes = int(rng.integers(5, 9))
        outer = max(rng.uniform(0.12, 0.28) * min(width, height), 2.0)
        inner = outer * rng.uniform(0.35, 0.6)
        phase = rng.uniform(0, 2 * np.pi)
        points = []
        for k in range(2 * spikes):
            radius = outer if k % 2 == 0 else inner
            radius *= rng.uniform(0.85, 1.15)
            angle = phase + np.pi * k / spikes
            points.append((cx + radius * np.cos(angle), cy + radius * np.sin(angle)))
        draw.polygon(points, fill=1)
    return np.asarray(img, dtype=np.int8)


def gen_env(spec: SyntheticEnvSpec, out_path: str | Path | None = None) -> GroundTruthGrid:
    """Generate a synthetic ground truth, optionally writing its image.

    Deterministic for a fixed spec.  The image uses 0 (black) for valuable
    cells and 255 for valueless ones, so it round-trips through load_env with
    the default threshold.
    """
    rng = np.random.default_rng(spec.seed)
    for attempt in range(32):
        cells = render_star_field(spec.width, spec.height, spec.n_shapes, rng)
        if cells.any():
            break
    else:
        raise ConfigurationError("generator produced no valuable cells")
    grid = GroundTruthGrid(cells=cells)
    if out_path is not None:
        write_grid_image(grid, out_path)
    return grid


def write_grid_image(grid: GroundTruthGrid, path: str | Path) -> None:
    pixels = np.where(grid.cells == 1, 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)


def _majority_pool(flags: np.ndarray, factor: int) -> np.ndarray:
    """Blockwise strict-majority vote; ties resolve to False.

    Trailing rows/columns that do not fill a complete block are dropped.
    """
    h = (flags.shape[0] // factor) * factor
    w = (flags.shape[1] // factor) * factor
    if h == 0 or w == 0:
        raise ConfigurationError("image smaller than the downsample factor")
    blocks = flags[:h, :w].reshape(h // factor, factor, w // factor, factor)
    counts = blocks.sum(axis=(1, 3))
    return counts * 2 > factor * factor


def load_env(
    image_path: str | Path,
    threshold: int = 128,
    mask_path: str | Path | None = None,
    invert: bool = False,
    downsample: int = 1,
) -> GroundTruthGrid:
    """Build a ground-truth grid from an 8-bit grayscale image.

    Default polarity: pixel < threshold means valuable (dark regions).  With
    ``invert`` the complement applies (bright regions valuable, for white-hot
    thermal images).  A mask image of the same size marks no-fly cells where
    its pixels are bright (> 127).
    """
    if downsample < 1:
        raise ConfigurationError("downsample factor must be >= 1")
    try:
        img = Image.open(image_path).convert("L")
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read image {image_path}: {exc}") from exc
    pixels = np.asarray(img, dtype=np.uint8)
    valuable = pixels >= threshold if invert else pixels < threshold

    mask = None
    if mask_path is not None:
        try:
            mask_img = Image.open(mask_path).convert("L")
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read mask {mask_path}: {exc}") from exc
        mask_pixels = np.asarray(mask_img, dtype=np.uint8)
        if mask_pixels.shape != pixels.shape:
            raise ConfigurationError(
                f"mask size {mask_pixels.shape} does not match image {pixels.shape}"
            )
        mask = mask_pixels > 127

    if downsample > 1:
        valuable = _majority_pool(valuable, downsample)
        if mask is not None:
            mask = _majority_pool(mask, downsample)

    return GroundTruthGrid(cells=valuable.astype(np.int8), mask=mask)
