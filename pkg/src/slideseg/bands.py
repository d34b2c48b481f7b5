"""Engineered bands B15..B26: normalizations, spectral indices, filtered variants.

The catalogue, in output order:

    B15..B17  per-patch min-max normalization of B2, B3, B4
    B18       NDVI  (B8 - B4) / (B8 + B4)
    B19       NDMI  (B8 - B11) / (B8 + B11)
    B20       NBR   (B8 - B12) / (B8 + B12)
    B21       Gray  (B2 + B3 + B4) / 3
    B22, B23  10x10 Gaussian / median filter of Gray
    B24, B25  finite-difference gradient of Gray along width / height
    B26       Canny edge map of Gray

Normalized differences emit 0 where the denominator is 0; min-max
normalization of a constant band emits 0. Filter kinds compute the Gray
values from B2..B4 directly, so a selection need not include B21 first.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import h5py
import numpy as np

from . import filters
from .data import BandStack, ORIGINAL_BAND_COUNT
from .errors import IoError, ShapeMismatch

KINDS = (
    "minmax_norm",
    "ndvi",
    "ndmi",
    "nbr",
    "gray",
    "gaussian",
    "median",
    "grad_x",
    "grad_y",
    "canny",
)


@dataclass(frozen=True)
class BandSpec:
    """Recipe for one engineered band."""

    kind: str
    output_band: str
    source: str | None = None
    ksize: int | None = None
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown band kind '{self.kind}'")
        if self.kind == "minmax_norm" and self.source is None:
            raise ValueError("minmax_norm requires a source band")
        if self.kind in ("gaussian", "median") and (self.ksize is None or self.ksize < 1):
            raise ValueError(f"{self.kind} requires kernel size >= 1")
        if self.kind == "canny":
            if self.lo is None or self.hi is None or not (0.0 <= self.lo < self.hi):
                raise ValueError("canny requires thresholds 0 <= lo < hi")


CANONICAL_SPECS: tuple[BandSpec, ...] = (
    BandSpec(kind="minmax_norm", source="B2", output_band="B15"),
    BandSpec(kind="minmax_norm", source="B3", output_band="B16"),
    BandSpec(kind="minmax_norm", source="B4", output_band="B17"),
    BandSpec(kind="ndvi", output_band="B18"),
    BandSpec(kind="ndmi", output_band="B19"),
    BandSpec(kind="nbr", output_band="B20"),
    BandSpec(kind="gray", output_band="B21"),
    BandSpec(kind="gaussian", ksize=10, output_band="B22"),
    BandSpec(kind="median", ksize=10, output_band="B23"),
    BandSpec(kind="grad_x", output_band="B24"),
    BandSpec(kind="grad_y", output_band="B25"),
    BandSpec(kind="canny", lo=0.1, hi=0.3, output_band="B26"),
)

PRESET_NAMES = ("none", "15-17", "15-21", "15-23", "15-25", "15-26")

_PRESET_SIZES = {"none": 0, "15-17": 3, "15-21": 7, "15-23": 9, "15-25": 11, "15-26": 12}

BANDS_15_17 = CANONICAL_SPECS[:3]
BANDS_15_21 = CANONICAL_SPECS[:7]
BANDS_15_23 = CANONICAL_SPECS[:9]
BANDS_15_25 = CANONICAL_SPECS[:11]
BANDS_15_26 = CANONICAL_SPECS[:12]

BandSelection = tuple[BandSpec, ...]


def preset(name: str) -> BandSelection:
    """Selection for one of the CLI preset names (none, 15-17, ..., 15-26)."""
    if name not in _PRESET_SIZES:
        raise ValueError(f"unknown band selection '{name}', expected one of {PRESET_NAMES}")
    return CANONICAL_SPECS[: _PRESET_SIZES[name]]


def validate_selection(selection: BandSelection) -> BandSelection:
    """Selections must be contiguous prefixes starting at B15."""
    selection = tuple(selection)
    expected = tuple(f"B{15 + i}" for i in range(len(selection)))
    got = tuple(spec.output_band for spec in selection)
    if got != expected:
        raise ValueError(f"selection output bands must be contiguous from B15, got {got}")
    return selection


def _normalized_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = a - b
    den = a + b
    out = np.zeros_like(num)
    nonzero = den != 0
    out[nonzero] = num[nonzero] / den[nonzero]
    return out


def _gray_values(stack: BandStack) -> np.ndarray:
    return (
        stack.band("B2").astype(np.float64)
        + stack.band("B3").astype(np.float64)
        + stack.band("B4").astype(np.float64)
    ) / 3.0


def derive_band(stack: BandStack, spec: BandSpec) -> np.ndarray:
    """Compute one engineered band as a float32 [H, W] array."""
    kind = spec.kind
    if kind == "minmax_norm":
        x = stack.band(spec.source).astype(np.float64)
        lo, hi = x.min(), x.max()
        if hi == lo:
            out = np.zeros_like(x)
        else:
            out = (x - lo) / (hi - lo)
    elif kind == "ndvi":
        out = _normalized_difference(stack.band("B8").astype(np.float64), stack.band("B4").astype(np.float64))
    elif kind == "ndmi":
        out = _normalized_difference(stack.band("B8").astype(np.float64), stack.band("B11").astype(np.float64))
    elif kind == "nbr":
        out = _normalized_difference(stack.band("B8").astype(np.float64), stack.band("B12").astype(np.float64))
    elif kind == "gray":
        out = _gray_values(stack)
    elif kind == "gaussian":
        out = filters.gaussian_filter2d(_gray_values(stack), spec.ksize)
    elif kind == "median":
        out = filters.median_filter2d(_gray_values(stack), spec.ksize)
    elif kind == "grad_x":
        out = filters.gradient_x(_gray_values(stack))
    elif kind == "grad_y":
        out = filters.gradient_y(_gray_values(stack))
    elif kind == "canny":
        out = filters.canny(_gray_values(stack), spec.lo, spec.hi)
    else:  # pragma: no cover - guarded by BandSpec validation
        raise ValueError(f"unknown band kind '{kind}'")
    return out.astype(np.float32)


def engineer_stack(stack14: BandStack, selection: BandSelection) -> BandStack:
    """Append the selected engineered bands to a 14-band stack.

    The original 14 bands are carried over bit-identically; band_meta is
    extended in selection order.
    """
    if stack14.channels != ORIGINAL_BAND_COUNT:
        raise ShapeMismatch(f"engineer_stack expects 14 bands, got {stack14.channels}")
    selection = validate_selection(selection)
    if not selection:
        return stack14

    derived = [derive_band(stack14, spec) for spec in selection]
    pixels = np.concatenate([stack14.pixels] + [d[:, :, None] for d in derived], axis=2)
    band_meta = stack14.band_meta + tuple(spec.output_band for spec in selection)
    return BandStack(pixels=pixels, band_meta=band_meta, patch_id=stack14.patch_id)


# -- engineered-stack cache ----------------------------------------------------

def selection_hash(selection: BandSelection) -> str:
    digest = hashlib.sha1()
    for spec in validate_selection(selection):
        digest.update(repr(spec).encode())
    return digest.hexdigest()[:12]


def engineered_dir(root, selection: BandSelection) -> Path:
    return Path(root) / "engineered" / selection_hash(selection)


def write_engineered(stack: BandStack, root, selection: BandSelection, overwrite: bool = False) -> Path:
    out_dir = engineered_dir(root, selection)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"image_{stack.patch_id}.h5"
    if path.exists() and not overwrite:
        raise IoError(f"refusing to overwrite existing cache file '{path}'")
    with h5py.File(path, "w") as f:
        f.create_dataset("img", data=stack.pixels, dtype=np.float32)
    return path


def read_engineered(root, selection: BandSelection, patch_id: str) -> BandStack | None:
    """Engineered stack from the cache, or None when not cached."""
    selection = validate_selection(selection)
    path = engineered_dir(root, selection) / f"image_{patch_id}.h5"
    if not path.is_file():
        return None
    with h5py.File(path, "r") as f:
        pixels = np.asarray(f["img"])
    band_meta = tuple(f"B{i}" for i in range(1, ORIGINAL_BAND_COUNT + 1)) + tuple(
        spec.output_band for spec in selection
    )
    return BandStack(pixels=pixels, band_meta=band_meta, patch_id=patch_id)
