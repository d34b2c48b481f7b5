"""Grayscale filtering primitives used by the engineered bands.

Conventions, fixed so results are reproducible against a per-pixel
reference implementation:

- Borders use reflect-101 padding (edge pixel not repeated).
- An even k x k window anchors at (k//2, k//2), i.e. a 10x10 window for
  output pixel (i, j) spans rows i-5..i+4 and columns j-5..j+4.
- Gaussian kernel width for size k follows sigma(k) = 0.3*((k-1)/2 - 1) + 0.8.
- Gradients are numpy-style first-order finite differences: central in
  the interior, one-sided at the borders.
- The Canny detector smooths with a Gaussian (sigma 1.4), takes Sobel
  gradients, suppresses non-maxima along the 4-quantized gradient
  direction, then double-thresholds at fixed fractions of the input
  value range and links weak edges to strong ones with 8-connected
  hysteresis. Non-max suppression keeps ties within a relative
  tolerance of 1e-9 of the peak magnitude, so symmetric ridges (e.g. a
  perfect step) keep both adjacent pixels regardless of float
  summation order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def gaussian_sigma_for_size(k: int) -> float:
    return 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8


def gaussian_kernel_2d(k: int, sigma: float | None = None) -> np.ndarray:
    """Normalized k x k Gaussian kernel centered on the (k//2, k//2) anchor."""
    if k < 1:
        raise ValueError("kernel size must be >= 1")
    if sigma is None:
        sigma = gaussian_sigma_for_size(k)
    offsets = np.arange(k, dtype=np.float64) - (k // 2)
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windows(image: np.ndarray, k: int) -> np.ndarray:
    """[H, W, k, k] view of reflect-101-padded k x k windows."""
    before = k // 2
    after = k - 1 - before
    padded = np.pad(np.asarray(image, dtype=np.float64), ((before, after), (before, after)), mode="reflect")
    return sliding_window_view(padded, (k, k))


def correlate2d(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Cross-correlation with reflect-101 borders and (k//2, k//2) anchor."""
    k = kernel.shape[0]
    if kernel.shape != (k, k):
        raise ValueError("kernel must be square")
    return np.tensordot(_windows(image, k), np.asarray(kernel, dtype=np.float64), axes=([2, 3], [0, 1]))


def gaussian_filter2d(image: np.ndarray, k: int, sigma: float | None = None) -> np.ndarray:
    return correlate2d(image, gaussian_kernel_2d(k, sigma))


def median_filter2d(image: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("kernel size must be >= 1")
    return np.median(_windows(image, k), axis=(2, 3))


def gradient_x(image: np.ndarray) -> np.ndarray:
    """First-order gradient along the width (column) axis."""
    return np.gradient(np.asarray(image, dtype=np.float64), axis=1)


def gradient_y(image: np.ndarray) -> np.ndarray:
    """First-order gradient along the height (row) axis."""
    return np.gradient(np.asarray(image, dtype=np.float64), axis=0)


def _nms_4dir(magnitude: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Keep pixels whose magnitude is >= both neighbours along the gradient.

    Directions are quantized to {0, 45, 90, 135} degrees; out-of-bounds
    neighbours count as zero; comparisons allow a 1e-9 relative slack so
    exact ties survive on both sides.
    """
    h, w = magnitude.shape
    padded = np.zeros((h + 2, w + 2), dtype=magnitude.dtype)
    padded[1:-1, 1:-1] = magnitude
    slack = 1e-9 * float(magnitude.max())

    bins = np.floor(((angle % np.pi) + np.pi / 8) / (np.pi / 4)).astype(int) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}

    keep = np.zeros_like(magnitude, dtype=bool)
    for b, (di, dj) in offsets.items():
        sel = bins == b
        fwd = padded[1 + di : 1 + di + h, 1 + dj : 1 + dj + w]
        bwd = padded[1 - di : 1 - di + h, 1 - dj : 1 - dj + w]
        keep |= sel & (magnitude >= fwd - slack) & (magnitude >= bwd - slack)
    return np.where(keep, magnitude, 0.0)


def canny(
    image: np.ndarray,
    lo_frac: float = 0.1,
    hi_frac: float = 0.3,
    sigma: float = 1.4,
) -> np.ndarray:
    """Binary {0, 1} edge map; thresholds are fractions of the value range."""
    if not (0.0 <= lo_frac < hi_frac):
        raise ValueError("canny thresholds require 0 <= lo < hi")
    image = np.asarray(image, dtype=np.float64)
    value_range = float(image.max() - image.min())
    if value_range == 0.0:
        return np.zeros_like(image)

    radius = int(3.0 * sigma + 0.5)
    smooth = gaussian_filter2d(image, 2 * radius + 1, sigma)
    gx = correlate2d(smooth, SOBEL_X)
    gy = correlate2d(smooth, SOBEL_Y)
    magnitude = np.hypot(gx, gy)
    angle = np.arctan2(gy, gx)

    ridge = _nms_4dir(magnitude, angle)
    lo = lo_frac * value_range
    hi = hi_frac * value_range
    strong = ridge >= hi
    weak = ridge >= lo

    labeled, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        return np.zeros_like(image)
    keep = np.zeros(count + 1, dtype=bool)
    keep[np.unique(labeled[strong])] = True
    keep[0] = False
    return keep[labeled].astype(np.float64)
