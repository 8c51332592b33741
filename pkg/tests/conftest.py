"""Shared fixtures: synthetic images and on-disk toy datasets."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from salfuse import pnm

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def rect_mask(h: int, w: int, top: int, left: int, height: int, width: int) -> np.ndarray:
    """Binary float map with a filled rectangle of ones."""
    m = np.zeros((h, w), dtype=np.float64)
    m[top:top + height, left:left + width] = 1.0
    return m


def quantized(arr: np.ndarray) -> np.ndarray:
    """Snap a [0, 1] map to the 8-bit grid (v = k / 255), as file I/O would."""
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0) / 255.0


def random_pair(rng: np.random.Generator, h: int = 8, w: int = 8):
    """A quantized random prediction and a random (usually mixed) binary GT."""
    pred = quantized(rng.random((h, w)))
    gt = (rng.random((h, w)) > 0.5).astype(np.float64)
    return pred, gt


def write_triplet(root: Path, stem: str, rgb: np.ndarray, depth: np.ndarray,
                  gt: np.ndarray) -> None:
    (root / "RGB").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    (root / "GT").mkdir(parents=True, exist_ok=True)
    pnm.save_ppm(root / "RGB" / f"{stem}.ppm", rgb)
    pnm.save_pgm(root / "depth" / f"{stem}.pgm", depth)
    pnm.save_pgm(root / "GT" / f"{stem}.pgm", gt)


def make_synthetic_triplet(seed: int, size: int = 64):
    """One high-contrast RGB-D sample: a bright warm rectangle standing
    proud of a dark cool background, GT = the rectangle."""
    g = np.random.default_rng(seed)
    top, left = int(g.integers(8, 24)), int(g.integers(8, 24))
    height, width = int(g.integers(16, 32)), int(g.integers(16, 32))
    gt = rect_mask(size, size, top, left, height, width)
    rgb = np.empty((3, size, size), dtype=np.float64)
    rgb[0] = 0.15 + 0.75 * gt
    rgb[1] = 0.25 + 0.55 * gt
    rgb[2] = 0.45 - 0.30 * gt
    depth = 0.20 + 0.70 * gt
    return rgb, depth, gt


@pytest.fixture()
def toy_dataset(tmp_path: Path) -> Path:
    """Four synthetic 64x64 triplets written as PNM files."""
    root = tmp_path / "toy"
    for i in range(4):
        rgb, depth, gt = make_synthetic_triplet(seed=100 + i)
        write_triplet(root, f"img{i}", rgb, depth, gt)
    return root
