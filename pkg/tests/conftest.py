"""Shared synthetic-data fixtures."""

from __future__ import annotations

from pathlib import Path

import h5py
import numpy as np
import pytest

from slideseg.data import ORIGINAL_BANDS, BandStack, GroundTruthMask, Sample


def random_stack(rng: np.random.Generator, size: int = 16, patch_id: str = "1") -> BandStack:
    """Random 14-band stack with per-band value scales."""
    scales = rng.uniform(0.5, 3.0, size=14)
    pixels = rng.uniform(0.0, 1.0, size=(size, size, 14)).astype(np.float32) * scales.astype(np.float32)
    return BandStack(pixels=pixels, band_meta=ORIGINAL_BANDS, patch_id=patch_id)


def blob_mask(
    rng: np.random.Generator,
    size: int = 16,
    n_blobs: int = 1,
    min_side: int | None = None,
    max_side: int | None = None,
) -> np.ndarray:
    """Binary mask with n rectangular blobs (possibly overlapping)."""
    if min_side is None:
        min_side = 2
    if max_side is None:
        max_side = max(3, size // 3)
    mask = np.zeros((size, size), dtype=np.uint8)
    for _ in range(n_blobs):
        h = int(rng.integers(min_side, max_side))
        w = int(rng.integers(min_side, max_side))
        i = int(rng.integers(0, size - h))
        j = int(rng.integers(0, size - w))
        mask[i : i + h, j : j + w] = 1
    return mask


def random_sample(
    rng: np.random.Generator,
    size: int = 16,
    patch_id: str = "1",
    n_blobs: int = 1,
    informative: bool = False,
    min_side: int | None = None,
    max_side: int | None = None,
) -> Sample:
    """Random sample; informative=True makes the bands encode the mask."""
    stack = random_stack(rng, size=size, patch_id=patch_id)
    if n_blobs:
        mask = blob_mask(rng, size=size, n_blobs=n_blobs, min_side=min_side, max_side=max_side)
    else:
        mask = np.zeros((size, size), np.uint8)
    if informative:
        pixels = stack.pixels.copy()
        pixels += 2.0 * mask[:, :, None].astype(np.float32)
        stack = BandStack(pixels=pixels, band_meta=stack.band_meta, patch_id=patch_id)
    return Sample(image=stack, mask=GroundTruthMask(labels=mask, patch_id=patch_id))


def write_disk_dataset(
    root: Path,
    n_samples: int = 6,
    seed: int = 0,
    n_empty: int = 1,
    informative: bool = False,
    min_side: int | None = None,
    max_side: int | None = None,
) -> Path:
    """Write a small 128x128 dataset in the paired-HDF5 layout."""
    rng = np.random.default_rng(seed)
    (root / "img").mkdir(parents=True, exist_ok=True)
    (root / "mask").mkdir(parents=True, exist_ok=True)
    for i in range(1, n_samples + 1):
        blobs = 0 if i <= n_empty else int(rng.integers(1, 4))
        sample = random_sample(
            rng, size=128, patch_id=str(i), n_blobs=blobs, informative=informative,
            min_side=min_side, max_side=max_side,
        )
        with h5py.File(root / "img" / f"image_{i}.h5", "w") as f:
            f.create_dataset("img", data=sample.image.pixels, dtype=np.float32)
        with h5py.File(root / "mask" / f"mask_{i}.h5", "w") as f:
            f.create_dataset("mask", data=sample.mask.labels, dtype=np.uint8)
    return root


@pytest.fixture
def disk_dataset(tmp_path):
    """Six 128x128 samples on disk, one with an all-zero mask."""
    return write_disk_dataset(tmp_path / "data", n_samples=6, seed=7)


class ScriptedRng:
    """Generator stand-in returning queued integers (for forced draws)."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, low, high=None):
        return self.values.pop(0)
