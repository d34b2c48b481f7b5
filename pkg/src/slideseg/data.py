"""Dataset model and HDF5 I/O for 128x128 multispectral landslide patches.

On-disk layout (one file per patch, paired by numeric id):

    <root>/img/image_<N>.h5    dataset 'img',  float, shape [128, 128, 14]
    <root>/mask/mask_<N>.h5    dataset 'mask', int,   shape [128, 128]

Band order in the stored files is assumed to be B1..B12 (Sentinel-2
spectral bands), B13 (slope), B14 (DEM); the files themselves carry no
band metadata, so the loader cannot verify this.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import h5py
import numpy as np

from .errors import (
    CorruptFile,
    EmptyDataset,
    IoError,
    MissingMask,
    NonBinaryMask,
    ShapeMismatch,
    UnknownId,
)

PATCH_SIZE = 128
ORIGINAL_BAND_COUNT = 14
MAX_BAND_COUNT = 26

ORIGINAL_BANDS: tuple[str, ...] = tuple(f"B{i}" for i in range(1, ORIGINAL_BAND_COUNT + 1))

_IMAGE_RE = re.compile(r"^image_([1-9][0-9]*)\.h5$")


@dataclass
class BandStack:
    """One multispectral patch: [H, W, C] float32 pixels plus band names.

    band_meta always begins with B1..B14 in order; engineered bands
    (B15..B26) may follow. All pixel values must be finite.
    """

    pixels: np.ndarray
    band_meta: tuple[str, ...]
    patch_id: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        self.band_meta = tuple(self.band_meta)
        if self.pixels.ndim != 3:
            raise ShapeMismatch(f"pixels must be [H, W, C], got ndim={self.pixels.ndim}")
        h, w, c = self.pixels.shape
        if h != w or h < 2:
            raise ShapeMismatch(f"patches must be square, got {h}x{w}")
        if not (ORIGINAL_BAND_COUNT <= c <= MAX_BAND_COUNT):
            raise ShapeMismatch(
                f"channel count must be in [{ORIGINAL_BAND_COUNT}, {MAX_BAND_COUNT}], got {c}"
            )
        if len(self.band_meta) != c:
            raise ShapeMismatch(f"band_meta has {len(self.band_meta)} entries for {c} channels")
        if self.band_meta[:ORIGINAL_BAND_COUNT] != ORIGINAL_BANDS:
            raise ShapeMismatch("band_meta must begin with B1..B14 in order")
        if not np.isfinite(self.pixels).all():
            raise CorruptFile(self.patch_id, "non-finite pixel values")

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def band(self, name: str) -> np.ndarray:
        """Return one band as a [H, W] view."""
        try:
            idx = self.band_meta.index(name)
        except ValueError:
            from .errors import MissingSourceBand

            raise MissingSourceBand(name) from None
        return self.pixels[:, :, idx]


@dataclass
class GroundTruthMask:
    """Binary square label image; 1 marks landslide pixels.

    Dataset samples are always 128x128 (enforced by the loader)."""

    labels: np.ndarray
    patch_id: str

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.shape[0] != labels.shape[1]:
            raise ShapeMismatch(f"mask must be a square 2-D array, got {labels.shape}")
        values = np.unique(labels)
        if not np.isin(values, (0, 1)).all():
            raise NonBinaryMask(
                f"mask '{self.patch_id}' contains values outside {{0, 1}}: {values[:8]}"
            )
        self.labels = labels.astype(np.uint8)

    @property
    def positive_count(self) -> int:
        return int(self.labels.sum())


@dataclass
class Sample:
    """Paired image stack and ground-truth mask for one patch."""

    image: BandStack
    mask: GroundTruthMask

    def __post_init__(self):
        if self.image.patch_id != self.mask.patch_id:
            raise ShapeMismatch(
                f"patch_id mismatch: image '{self.image.patch_id}' vs mask '{self.mask.patch_id}'"
            )
        if self.image.pixels.shape[:2] != self.mask.labels.shape:
            raise ShapeMismatch(
                f"image {self.image.pixels.shape[:2]} and mask {self.mask.labels.shape} differ spatially"
            )

    @property
    def patch_id(self) -> str:
        return self.image.patch_id


@dataclass
class DatasetIndex:
    """Discovered samples under one dataset root.

    sample_ids are numeric-id strings in lexicographic order;
    landslide_ids is the subset whose mask contains at least one
    landslide pixel (same ordering).
    """

    root_path: Path
    sample_ids: tuple[str, ...]
    landslide_ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.root_path = Path(self.root_path)
        self.sample_ids = tuple(self.sample_ids)
        self.landslide_ids = tuple(self.landslide_ids)
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ShapeMismatch("sample_ids contain duplicates")
        if not set(self.landslide_ids) <= set(self.sample_ids):
            raise ShapeMismatch("landslide_ids is not a subset of sample_ids")

    def __len__(self) -> int:
        return len(self.sample_ids)

    def image_path(self, sample_id: str) -> Path:
        return self.root_path / "img" / f"image_{sample_id}.h5"

    def mask_path(self, sample_id: str) -> Path:
        return self.root_path / "mask" / f"mask_{sample_id}.h5"


@dataclass
class DatasetStats:
    pixel_positive_rate: float
    per_image_positive_rate_range: tuple[float, float]


def _read_h5_dataset(path: Path, name: str) -> np.ndarray:
    try:
        with h5py.File(path, "r") as f:
            if name not in f:
                raise CorruptFile(path, f"missing dataset '{name}'")
            return np.asarray(f[name])
    except OSError as exc:
        raise CorruptFile(path, str(exc)) from exc


def load_dataset(root, layout: str = "paired_h5") -> DatasetIndex:
    """Scan a dataset root and build an index of all image/mask pairs.

    Deterministic: ids are sorted lexicographically. Every image must
    have a paired mask (MissingMask otherwise); landslide_ids is filled
    by scanning each mask for positive pixels.
    """
    if layout != "paired_h5":
        raise ValueError(f"unsupported layout '{layout}'")
    root = Path(root)
    img_dir = root / "img"
    if not img_dir.is_dir():
        raise EmptyDataset(f"no 'img' directory under '{root}'")

    ids = sorted(
        m.group(1) for m in (_IMAGE_RE.match(p.name) for p in img_dir.iterdir()) if m
    )
    if not ids:
        raise EmptyDataset(f"no image files matching 'image_<N>.h5' under '{img_dir}'")

    landslide_ids = []
    for sample_id in ids:
        mask_path = root / "mask" / f"mask_{sample_id}.h5"
        if not mask_path.is_file():
            raise MissingMask(sample_id)
        labels = _read_h5_dataset(mask_path, "mask")
        if (labels > 0).any():
            landslide_ids.append(sample_id)

    return DatasetIndex(root_path=root, sample_ids=tuple(ids), landslide_ids=tuple(landslide_ids))


def read_sample(index: DatasetIndex, sample_id: str) -> Sample:
    """Load and validate one sample (14-band stack + binary mask)."""
    if sample_id not in index.sample_ids:
        raise UnknownId(sample_id)

    pixels = _read_h5_dataset(index.image_path(sample_id), "img")
    if pixels.shape != (PATCH_SIZE, PATCH_SIZE, ORIGINAL_BAND_COUNT):
        raise ShapeMismatch(
            f"image '{sample_id}' has shape {pixels.shape}, "
            f"expected ({PATCH_SIZE}, {PATCH_SIZE}, {ORIGINAL_BAND_COUNT})"
        )
    image = BandStack(pixels=pixels, band_meta=ORIGINAL_BANDS, patch_id=sample_id)

    labels = _read_h5_dataset(index.mask_path(sample_id), "mask")
    mask = GroundTruthMask(labels=labels, patch_id=sample_id)
    return Sample(image=image, mask=mask)


def read_gt_mask(index: DatasetIndex, sample_id: str) -> GroundTruthMask:
    """Load and validate one ground-truth mask without touching the image."""
    if sample_id not in index.sample_ids:
        raise UnknownId(sample_id)
    labels = _read_h5_dataset(index.mask_path(sample_id), "mask")
    return GroundTruthMask(labels=labels, patch_id=sample_id)


def dataset_stats(index: DatasetIndex) -> DatasetStats:
    """Dataset-level class-imbalance statistics.

    pixel_positive_rate is landslide pixels over all pixels; the range
    is over the per-image positive fraction of images that contain at
    least one landslide pixel.
    """
    if len(index) == 0:
        raise EmptyDataset("cannot compute statistics of an empty index")

    total_positive = 0
    total_pixels = 0
    rates = []
    for sample_id in index.sample_ids:
        labels = _read_h5_dataset(index.mask_path(sample_id), "mask")
        positive = int((labels > 0).sum())
        total_positive += positive
        total_pixels += labels.size
        if positive:
            rates.append(positive / labels.size)

    rate_range = (min(rates), max(rates)) if rates else (0.0, 0.0)
    return DatasetStats(
        pixel_positive_rate=total_positive / total_pixels,
        per_image_positive_rate_range=rate_range,
    )


def write_mask(mask: np.ndarray, path, format: str = "h5") -> None:
    """Persist a binary mask; round-trip via read_mask is bit-identical.

    'h5' stores a uint8 dataset named 'mask'; 'png8' stores 8-bit
    grayscale with 0 -> 0 and 1 -> 255.
    """
    mask = np.asarray(mask)
    values = np.unique(mask)
    if not np.isin(values, (0, 1)).all():
        raise NonBinaryMask(f"refusing to write mask with values outside {{0, 1}}: {values[:8]}")
    mask = mask.astype(np.uint8)
    path = Path(path)

    try:
        if format == "h5":
            with h5py.File(path, "w") as f:
                f.create_dataset("mask", data=mask, dtype=np.uint8)
        elif format == "png8":
            from PIL import Image

            Image.fromarray(mask * np.uint8(255), mode="L").save(path, format="PNG")
        else:
            raise ValueError(f"unsupported mask format '{format}'")
    except OSError as exc:
        raise IoError(f"cannot write '{path}': {exc}") from exc


def read_mask(path, format: str | None = None) -> np.ndarray:
    """Read a mask written by write_mask; format inferred from suffix when omitted."""
    path = Path(path)
    if format is None:
        format = "png8" if path.suffix.lower() == ".png" else "h5"
    if format == "h5":
        data = _read_h5_dataset(path, "mask")
        return data.astype(np.uint8)
    if format == "png8":
        from PIL import Image

        try:
            data = np.asarray(Image.open(path).convert("L"))
        except OSError as exc:
            raise CorruptFile(path, str(exc)) from exc
        return (data >= 128).astype(np.uint8)
    raise ValueError(f"unsupported mask format '{format}'")
