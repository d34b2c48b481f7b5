"""Online batch augmentation: right-angle rotation and landslide-region cutmix.

All transforms are pure functions of (inputs, rng state); rotation uses
the counter-clockwise convention of numpy's rot90. Cutmix pastes one
8-connected landslide component per donor, at the component's own
coordinates, copying every image band together with the mask so the
stack stays physically self-consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import BandStack, GroundTruthMask, Sample
from .errors import EmptyDonorPool

RngState = np.random.Generator

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass
class AugmentConfig:
    rotation_enabled: bool = True
    cutmix_enabled: bool = True
    max_donors: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_donors < 0:
            raise ValueError("max_donors must be >= 0")


def random_rotate(sample: Sample, rng: RngState) -> Sample:
    """Rotate image and mask together by k*90 degrees, k drawn from {1, 2, 3}."""
    k = int(rng.integers(1, 4))
    return rotate(sample, k)


def rotate(sample: Sample, k: int) -> Sample:
    """Deterministic counter-clockwise rotation by k*90 degrees."""
    pixels = np.ascontiguousarray(np.rot90(sample.image.pixels, k=k, axes=(0, 1)))
    labels = np.ascontiguousarray(np.rot90(sample.mask.labels, k=k))
    return Sample(
        image=BandStack(pixels=pixels, band_meta=sample.image.band_meta, patch_id=sample.patch_id),
        mask=GroundTruthMask(labels=labels, patch_id=sample.patch_id),
    )


def landslide_components(mask: GroundTruthMask) -> list[np.ndarray]:
    """Boolean masks of the 8-connected landslide regions, in label order."""
    labeled, count = ndimage.label(mask.labels, structure=_EIGHT_CONNECTED)
    return [labeled == i for i in range(1, count + 1)]


def cutmix(
    sample: Sample,
    donor_pool: list[Sample],
    rng: RngState,
    max_donors: int = 2,
) -> Sample:
    """Paste 0..max_donors random landslide regions from random donors.

    Each paste copies all image bands and the mask values of one donor
    component onto the sample at the component's own coordinates;
    pixels outside pasted regions are untouched.
    """
    if max_donors == 0:
        return sample
    if not donor_pool:
        raise EmptyDonorPool("cutmix requires a non-empty donor pool when max_donors > 0")

    n = int(rng.integers(0, max_donors + 1))
    if n == 0:
        return sample

    pixels = sample.image.pixels.copy()
    labels = sample.mask.labels.copy()
    for _ in range(n):
        donor = donor_pool[int(rng.integers(len(donor_pool)))]
        if donor.image.pixels.shape[:2] != pixels.shape[:2]:
            raise ValueError("donor is not spatially congruent with the sample")
        if donor.image.channels != sample.image.channels:
            raise ValueError("donor channel count differs from the sample")
        components = landslide_components(donor.mask)
        if not components:
            raise ValueError(f"donor '{donor.patch_id}' has no landslide pixels")
        region = components[int(rng.integers(len(components)))]
        pixels[region] = donor.image.pixels[region]
        labels[region] = donor.mask.labels[region]

    return Sample(
        image=BandStack(pixels=pixels, band_meta=sample.image.band_meta, patch_id=sample.patch_id),
        mask=GroundTruthMask(labels=labels, patch_id=sample.patch_id),
    )


def augment_batch(
    batch: list[Sample],
    pool: list[Sample],
    cfg: AugmentConfig,
    rng: RngState | None = None,
) -> list[Sample]:
    """Apply rotation then cutmix to each sample independently.

    Deterministic given (cfg.rng_seed, batch order); passing an explicit
    rng overrides the seed.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    if cfg.cutmix_enabled and cfg.max_donors > 0 and not pool:
        raise EmptyDonorPool("cutmix enabled with max_donors > 0 but the donor pool is empty")

    out = []
    for sample in batch:
        if cfg.rotation_enabled:
            sample = random_rotate(sample, rng)
        if cfg.cutmix_enabled:
            sample = cutmix(sample, pool, rng, cfg.max_donors)
        out.append(sample)
    return out
