"""Gabor texture features for a single masked cell image.

The feature vector of a cell is built as follows:

1. histogram-equalize the (green channel) intensities,
2. filter with every kernel of a Gabor bank,
3. take mean absolute value, maximum and variance of each response inside the mask,
4. average those statistics over the orientations of each (sigma, frequency) group,
5. append maximum, variance and mean of the equalized intensity inside the mask.

With the default bank (5 scales, 4 orientations, 4 frequencies) this gives
``3 * 20 + 3 = 63`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

DEFAULT_SIGMAS = (1.0, 2.0, 3.0, 5.0, 7.0)
DEFAULT_THETAS = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)
DEFAULT_FREQUENCIES = (0.05, 0.1, 0.2, 0.3)


@dataclass(frozen=True)
class GaborParams:
    sigma: float
    theta: float
    lambda_freq: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.theta < math.pi):
            raise ValueError(f"theta must lie in [0, pi), got {self.theta}")
        if not self.lambda_freq > 0:
            raise ValueError(f"frequency must be positive, got {self.lambda_freq}")


@dataclass(frozen=True)
class GaborBank:
    """Filters ordered sigma-major, then frequency, then orientation."""

    sigmas: tuple = DEFAULT_SIGMAS
    thetas: tuple = DEFAULT_THETAS
    frequencies: tuple = DEFAULT_FREQUENCIES

    def __post_init__(self):
        for name in ("sigmas", "thetas", "frequencies"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        # constructing the params validates every combination
        self.params

    @property
    def params(self) -> list:
        return [
            GaborParams(s, t, f)
            for s in self.sigmas
            for f in self.frequencies
            for t in self.thetas
        ]

    @property
    def group_size(self) -> int:
        return len(self.thetas)

    @property
    def n_groups(self) -> int:
        return len(self.sigmas) * len(self.frequencies)

    def __len__(self) -> int:
        return len(self.sigmas) * len(self.thetas) * len(self.frequencies)

    @property
    def feature_dim(self) -> int:
        return 3 * self.n_groups + 3

    def describe(self) -> str:
        fmt = lambda vs: ",".join(repr(v) for v in vs)  # noqa: E731
        return f"sigma={fmt(self.sigmas)};theta={fmt(self.thetas)};lambda={fmt(self.frequencies)}"


def _check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a nonempty 2-d image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def _check_mask(mask, shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match image shape {tuple(shape)}")
    if not mask.any():
        raise ValueError("mask is empty")
    return mask


def equalize_histogram(img) -> np.ndarray:
    """Map each pixel to the fraction of pixels with a value ``<=`` its own."""
    img = _check_image(img)
    flat = img.ravel()
    ranks = np.searchsorted(np.sort(flat), flat, side="right")
    return (ranks / flat.size).reshape(img.shape)


def kernel_support(sigma: float, shape=None) -> int:
    """Smallest odd size covering +-3 sigma, capped by the image's smaller side."""
    size = math.ceil(6 * sigma + 1)
    if size % 2 == 0:
        size += 1
    if shape is not None:
        cap = min(shape)
        if cap % 2 == 0:
            cap -= 1
        size = min(size, max(cap, 3))
    return size


def gabor_value(x, y, sigma: float, theta: float, freq: float):
    """Gaussian envelope times an oriented cosine at offsets ``(x, y)`` from the center."""
    c, s = math.cos(theta), math.sin(theta)
    xr = x * c + y * s
    yr = -x * s + y * c
    return np.exp(-(xr**2 + yr**2) / (2 * sigma**2)) * np.cos(2 * math.pi * freq * xr)


def gabor_kernel(p: GaborParams, support: int) -> np.ndarray:
    """Gabor kernel sampled on a ``support x support`` grid.

    Entry ``K[r + y, r + x]`` (``r = support // 2``) holds the value at offset
    ``(x, y)`` from the center, i.e. rows run along y and columns along x.
    """
    if support < 3 or support % 2 == 0:
        raise ValueError(f"kernel support must be odd and >= 3, got {support}")
    r = support // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    return gabor_value(x, y, p.sigma, p.theta, p.lambda_freq)


def convolve_masked(img, kernel) -> np.ndarray:
    """Same-size cross-correlation with zero padding outside the image.

    No kernel flip is applied; the impulse response is therefore the kernel
    rotated by 180 degrees, which for point-symmetric Gabor kernels is the
    kernel itself. Large kernels are evaluated through FFTs.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError(f"kernel must be 2-d with odd sides, got shape {kernel.shape}")
    img = np.asarray(img, dtype=np.float64)
    return signal.correlate(img, kernel, mode="same", method="auto")


def response_stats(resp, mask) -> tuple:
    """(mean absolute value, maximum, population variance) over mask pixels."""
    resp = np.asarray(resp, dtype=np.float64)
    v = resp[_check_mask(mask, resp.shape)]
    return float(np.mean(np.abs(v))), float(np.max(v)), float(np.var(v))


def cell_features(img, mask, bank: GaborBank | None = None) -> np.ndarray:
    bank = bank or GaborBank()
    img = _check_image(img)
    mask = _check_mask(mask, img.shape)
    eq = equalize_histogram(img)

    stats = np.empty((len(bank), 3))
    for i, p in enumerate(bank.params):
        k = gabor_kernel(p, kernel_support(p.sigma, img.shape))
        stats[i] = response_stats(convolve_masked(eq, k), mask)
    grouped = stats.reshape(bank.n_groups, bank.group_size, 3).mean(axis=1)

    inside = eq[mask]
    intensity = np.array([inside.max(), inside.var(), inside.mean()])
    return np.concatenate([grouped.ravel(), intensity])


def load_image(path) -> np.ndarray:
    """Read a raster as intensities in [0, 1]; RGB inputs contribute the green channel."""
    from PIL import Image

    with Image.open(Path(path)) as im:
        if im.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
            arr = np.asarray(im.convert("RGB"))[:, :, 1]
        elif im.mode in ("I;16", "I;16B", "I;16L"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "L":
            arr = np.asarray(im)
        else:
            raise ValueError(f"{path}: unsupported image mode {im.mode}")
    return arr.astype(np.float64) / 255.0


def load_mask(path) -> np.ndarray:
    from PIL import Image

    with Image.open(Path(path)) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr.any(axis=2)
    return arr != 0
