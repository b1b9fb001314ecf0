"""Discrete Fourier transforms and normalized magnitude spectra.

The transform convention is the plain unnormalized DFT with negative
exponent: ``X[k] = sum_n x[n] * exp(-2*pi*i*k*n/N)``. Power-of-two lengths
use an iterative radix-2 decimation-in-time pass; every other length goes
through Bluestein's chirp-z algorithm, so the output is the exact DFT at
the native length. ``dft_naive`` / ``dft2_naive`` are the O(N^2) direct
evaluations kept as independent test oracles.

Spectra destined for distribution comparison are normalized weight vectors
over ordered bin centers; DC is excluded so offsets/brightness never
dominate the transport distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dataio import GrayImage
from .errors import ParamError

BEAT_SPECTRUM_BINS = 128
RADIAL_SPECTRUM_BINS = 64
CANONICAL_IMAGE_SIZE = 256


@dataclass
class Spectrum:
    """Non-negative weights summing to 1 over strictly increasing centers."""

    weights: np.ndarray
    centers: np.ndarray
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.weights.shape != self.centers.shape or self.weights.ndim != 1:
            raise ParamError("weights and centers must be 1D arrays of equal length")
        if self.weights.size == 0:
            raise ParamError("a spectrum needs at least one bin")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ParamError("weights must be finite and non-negative")
        if np.any(np.diff(self.centers) <= 0):
            raise ParamError("centers must be strictly increasing")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ParamError(f"weights must sum to 1, got {self.weights.sum()!r}")


def normalize(weights, centers) -> Spectrum:
    """Scale non-negative weights into a probability distribution."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ParamError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ParamError("cannot normalize zero total mass")
    return Spectrum(w / total, np.asarray(centers, dtype=np.float64))


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    rev.setflags(write=False)
    return rev


def _fft_pow2(a: np.ndarray) -> np.ndarray:
    """Iterative radix-2 DIT along the last axis (length must be a power of 2)."""
    n = a.shape[-1]
    out = np.array(a[..., _bit_reverse_indices(n)], dtype=np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        v = out.reshape(out.shape[:-1] + (n // size, size))
        t = v[..., half:] * tw
        v[..., half:] = v[..., :half] - t
        v[..., :half] += t
        size *= 2
    return out


def _bluestein(a: np.ndarray) -> np.ndarray:
    """Chirp-z evaluation of the DFT for arbitrary length along the last axis."""
    n = a.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    # Quadratic phase exponents reduced mod 2n keep sin/cos arguments small.
    k = np.arange(n, dtype=np.int64)
    phase = (k * k) % (2 * n)
    w = np.exp(-1j * np.pi * phase / n)

    fa = np.zeros(a.shape[:-1] + (m,), dtype=np.complex128)
    fa[..., :n] = a * w
    fb = np.zeros(m, dtype=np.complex128)
    fb[:n] = np.conj(w)
    if n > 1:
        fb[-(n - 1):] = np.conj(w[1:][::-1])
    conv = _ifft_pow2(_fft_pow2(fa) * _fft_pow2(fb))
    return conv[..., :n] * w


def _ifft_pow2(a: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(a))) / a.shape[-1]


def fft_batch(a: np.ndarray) -> np.ndarray:
    """DFT along the last axis of a stacked array (any length >= 1)."""
    a = np.asarray(a)
    n = a.shape[-1]
    if n == 0:
        raise ParamError("empty input")
    if n & (n - 1) == 0:
        return _fft_pow2(a)
    return _bluestein(a)


def fft(x) -> np.ndarray:
    """Exact DFT of a 1D real or complex series."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size == 0:
        raise ParamError("fft expects a non-empty 1D series")
    return fft_batch(x)


def ifft(x) -> np.ndarray:
    """Inverse transform (kept for round-trip testing)."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size == 0:
        raise ParamError("ifft expects a non-empty 1D series")
    return np.conj(fft_batch(np.conj(x))) / x.size


def fft2(img) -> np.ndarray:
    """2D DFT by row-column decomposition at the input's native size."""
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise ParamError("fft2 expects a non-empty 2D grid")
    rows = fft_batch(pixels.astype(np.complex128))
    return fft_batch(rows.T).T


def dft_naive(x) -> np.ndarray:
    """Direct O(N^2) DFT, the independent oracle for fft()."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    if n == 0:
        raise ParamError("empty input")
    kn = np.outer(np.arange(n, dtype=np.int64), np.arange(n, dtype=np.int64)) % n
    return np.exp(-2j * np.pi * kn / n) @ x


def dft2_naive(img) -> np.ndarray:
    """Direct double-sum 2D DFT, the independent oracle for fft2().

    Builds the full 4D phase tensor exp(-2*pi*i*(u*x/H + v*y/W)) and
    contracts it against the image, so it does not share the row-column
    factorization with fft2.
    """
    pixels = np.asarray(img.pixels if isinstance(img, GrayImage) else img, dtype=np.complex128)
    h, w = pixels.shape
    u = np.arange(h).reshape(h, 1, 1, 1)
    x = np.arange(h).reshape(1, h, 1, 1)
    v = np.arange(w).reshape(1, 1, w, 1)
    y = np.arange(w).reshape(1, 1, 1, w)
    phase = np.exp(-2j * np.pi * (u * x / h + v * y / w))
    return np.einsum("uxvy,xy->uv", phase, pixels)


# ---------------------------------------------------------------------------
# Image resampling
# ---------------------------------------------------------------------------

def resample_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with corner alignment (endpoints preserved)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape
    if h < 2 or w < 2:
        raise ParamError("bilinear resampling needs at least 2x2 input")
    if pixels.shape == (out_h, out_w):
        return pixels
    ys = np.linspace(0.0, h - 1.0, out_h)
    xs = np.linspace(0.0, w - 1.0, out_w)
    y0 = np.minimum(ys.astype(np.intp), h - 2)
    x0 = np.minimum(xs.astype(np.intp), w - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    p00 = pixels[np.ix_(y0, x0)]
    p01 = pixels[np.ix_(y0, x0 + 1)]
    p10 = pixels[np.ix_(y0 + 1, x0)]
    p11 = pixels[np.ix_(y0 + 1, x0 + 1)]
    return (p00 * (1 - fy) * (1 - fx) + p01 * (1 - fy) * fx
            + p10 * fy * (1 - fx) + p11 * fy * fx)


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

def beat_avg_spectrum(beats, nbins: int = BEAT_SPECTRUM_BINS) -> Spectrum:
    """Record-level ECG spectrum: per-beat normalized magnitudes, averaged.

    Each 256-sample beat window is transformed, bins 1..nbins are kept (DC
    excluded), normalized to unit mass, then averaged element-wise across
    beats and renormalized. Centers are k/256 in normalized frequency.
    """
    windows = beats.beats if hasattr(beats, "beats") else np.asarray(beats, dtype=np.float64)
    windows = np.atleast_2d(windows)
    if windows.shape[0] == 0:
        raise ParamError("beat_avg_spectrum needs at least one beat")
    n = windows.shape[1]
    if nbins < 1 or nbins > n // 2:
        raise ParamError(f"nbins must be in [1, {n // 2}]")
    mags = np.abs(fft_batch(windows.astype(np.complex128)))[:, 1 : nbins + 1]
    sums = mags.sum(axis=1)
    if np.any(sums <= 0):
        raise ParamError("a beat window has no energy outside DC")
    mean = (mags / sums[:, None]).mean(axis=0)
    centers = np.arange(1, nbins + 1) / n
    return normalize(mean, centers)


def radial_spectrum(img, nbins: int = RADIAL_SPECTRUM_BINS) -> Spectrum:
    """Rotation-invariant radial profile of the 2D magnitude spectrum.

    The image is resampled to the canonical 256x256 grid, transformed, the
    DC bin zeroed, and magnitudes accumulated into nbins annuli of the
    center-shifted frequency plane. A constant image (no AC energy) yields
    the flagged degenerate one-hot spectrum instead of an error.
    """
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    size = CANONICAL_IMAGE_SIZE
    pixels = resample_bilinear(pixels, size, size)
    mag = np.abs(fft2(pixels))
    mag[0, 0] = 0.0
    half = size // 2
    shifted = np.roll(np.roll(mag, half, axis=0), half, axis=1)
    coords = np.arange(size) - half
    r = np.hypot(coords[:, None], coords[None, :])
    r_max = half * np.sqrt(2.0)
    bins = np.minimum((nbins * r / r_max).astype(np.intp), nbins - 1)
    sums = np.bincount(bins.ravel(), weights=shifted.ravel(), minlength=nbins)
    centers = (np.arange(nbins) + 0.5) * r_max / nbins
    total = sums.sum()
    if not total > 0:
        one_hot = np.zeros(nbins)
        one_hot[0] = 1.0
        return Spectrum(one_hot, centers, degenerate=True)
    return normalize(sums, centers)
