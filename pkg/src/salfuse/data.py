"""Dataset layout discovery and prediction/GT pairing.

A training dataset root holds three subdirectories, RGB/, depth/ and
GT/, whose files match by stem. Color images are .ppm, single-channel
maps are .pgm; .png works for either when Pillow is installed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from salfuse import pnm
from salfuse.errors import DatasetError
from salfuse.tensor import Tensor, resize_bilinear

_COLOR_EXTS = (".ppm",)
_GRAY_EXTS = (".pgm",)
_PNG_EXTS = (".png",)


def _index_dir(directory: Path, exts: tuple[str, ...]) -> dict[str, Path]:
    if not directory.is_dir():
        raise DatasetError(f"missing dataset directory {directory}")
    if pnm.PNG_SUPPORTED:
        exts = exts + _PNG_EXTS
    index: dict[str, Path] = {}
    for f in sorted(directory.iterdir()):
        if f.suffix.lower() not in exts or not f.is_file():
            continue
        if f.stem in index:
            raise DatasetError(f"ambiguous stem {f.stem!r} in {directory}: "
                               f"{index[f.stem].name} vs {f.name}")
        index[f.stem] = f
    return index


def _match_stems(indexes: dict[str, dict[str, Path]]) -> list[str]:
    all_stems = sorted(set().union(*[set(ix) for ix in indexes.values()]))
    if not all_stems:
        raise DatasetError("no images found")
    unmatched = []
    for stem in all_stems:
        missing = [name for name, ix in indexes.items() if stem not in ix]
        if missing:
            unmatched.append(f"{stem} (missing in {', '.join(missing)})")
    if unmatched:
        raise DatasetError("unmatched stems: " + "; ".join(unmatched))
    return all_stems


@dataclass(frozen=True)
class Triplet:
    stem: str
    rgb: Path
    depth: Path
    gt: Path


def discover_triplets(root) -> list[Triplet]:
    """RGB/depth/GT triplets under a dataset root, sorted by stem."""
    root = Path(root)
    indexes = {
        "RGB": _index_dir(root / "RGB", _COLOR_EXTS),
        "depth": _index_dir(root / "depth", _GRAY_EXTS),
        "GT": _index_dir(root / "GT", _GRAY_EXTS),
    }
    stems = _match_stems(indexes)
    return [Triplet(stem=s, rgb=indexes["RGB"][s], depth=indexes["depth"][s],
                    gt=indexes["GT"][s]) for s in stems]


@dataclass(frozen=True)
class RgbdPair:
    stem: str
    rgb: Path
    depth: Path


def discover_rgbd_pairs(root) -> list[RgbdPair]:
    """RGB/depth pairs (no GT needed), sorted by stem."""
    root = Path(root)
    indexes = {
        "RGB": _index_dir(root / "RGB", _COLOR_EXTS),
        "depth": _index_dir(root / "depth", _GRAY_EXTS),
    }
    stems = _match_stems(indexes)
    return [RgbdPair(stem=s, rgb=indexes["RGB"][s], depth=indexes["depth"][s])
            for s in stems]


def discover_eval_pairs(pred_dir, gt_dir) -> list[tuple[str, Path, Path]]:
    """(stem, prediction, GT) path pairs matched by stem, sorted."""
    indexes = {
        "predictions": _index_dir(Path(pred_dir), _GRAY_EXTS),
        "GT": _index_dir(Path(gt_dir), _GRAY_EXTS),
    }
    stems = _match_stems(indexes)
    return [(s, indexes["predictions"][s], indexes["GT"][s]) for s in stems]


def resample_to(pred: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Bilinearly resample a prediction map to the GT's size. Predictions
    are always mapped onto the GT grid, never the other way around."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape == tuple(target_hw):
        return pred
    t = Tensor(pred[None, None, :, :])
    out = resize_bilinear(t, tuple(target_hw))
    return out.data[0, 0]


def load_input_tensors(rgb_path, depth_path) -> tuple[Tensor, Tensor]:
    """Network-ready (1, 3, H, W) and (1, 1, H, W) float32 inputs."""
    rgb = pnm.load_rgb(rgb_path)
    depth = pnm.load_gray(depth_path).astype(np.float32)
    return Tensor(rgb[None]), Tensor(depth[None, None])


def load_triplet_arrays(t: Triplet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(3, H, W) rgb, (1, H, W) depth, (1, H, W) GT float32 arrays."""
    rgb = pnm.load_rgb(t.rgb)
    depth = pnm.load_gray(t.depth).astype(np.float32)[None]
    gt = pnm.load_gray(t.gt).astype(np.float32)[None]
    return rgb, depth, gt
