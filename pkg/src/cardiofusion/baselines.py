"""Comparison feature extractors: Haar wavelet energies and HOG descriptors.

Both feed the exact same classifier interface as the spectral pipeline so
method comparisons share the split, the seed, and the network.
"""

from __future__ import annotations

import numpy as np

from .dataio import GrayImage
from .errors import ParamError
from .spectral import CANONICAL_IMAGE_SIZE, resample_bilinear

WT_LEVELS = 5
HOG_CELL = 32
HOG_BINS = 9
HOG_BLOCK = 2
HOG_EPS = 1e-6
_SQRT2 = np.sqrt(2.0)


def haar_dwt(x, levels: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Orthonormal Haar analysis: (details per level, final approximation).

    approx[i] = (x[2i] + x[2i+1]) / sqrt(2)
    detail[i] = (x[2i] - x[2i+1]) / sqrt(2)
    applied recursively to the approximation.
    """
    a = np.asarray(x, dtype=np.float64)
    n = a.size
    if n == 0 or n & (n - 1) != 0:
        raise ParamError(f"length must be a power of two, got {n}")
    if levels < 1 or (1 << levels) > n:
        raise ParamError(f"levels must be in [1, {n.bit_length() - 1}]")
    details: list[np.ndarray] = []
    for _ in range(levels):
        pairs = a.reshape(-1, 2)
        details.append((pairs[:, 0] - pairs[:, 1]) / _SQRT2)
        a = (pairs[:, 0] + pairs[:, 1]) / _SQRT2
    return details, a


def haar_reconstruct(details: list[np.ndarray], approx: np.ndarray) -> np.ndarray:
    """Inverse of haar_dwt (kept for the perfect-reconstruction test)."""
    a = np.asarray(approx, dtype=np.float64)
    for d in reversed(details):
        out = np.empty(2 * a.size)
        out[0::2] = (a + d) / _SQRT2
        out[1::2] = (a - d) / _SQRT2
        a = out
    return a


def wt_features(beats, levels: int = WT_LEVELS) -> np.ndarray:
    """Per-level energy distribution of the beat windows.

    Per beat: [sum detail_1^2, ..., sum detail_L^2, sum approx^2],
    normalized to unit mass, then averaged across beats and renormalized.
    Length is levels + 1.
    """
    windows = beats.beats if hasattr(beats, "beats") else np.asarray(beats, dtype=np.float64)
    windows = np.atleast_2d(windows)
    if windows.shape[0] == 0:
        raise ParamError("wt_features needs at least one beat")
    feats = []
    for w in windows:
        details, approx = haar_dwt(w, levels)
        energies = np.array([float(np.sum(d * d)) for d in details] + [float(np.sum(approx**2))])
        total = energies.sum()
        if total <= 0:
            raise ParamError("a beat window has zero energy")
        feats.append(energies / total)
    mean = np.mean(feats, axis=0)
    return mean / mean.sum()


def hog_features(img, cell: int = HOG_CELL, bins: int = HOG_BINS) -> np.ndarray:
    """Histogram-of-oriented-gradients descriptor on the canonical grid.

    Central-difference gradients with replicated borders, unsigned
    orientations in [0, 180) with magnitude votes split linearly between
    the two nearest bin centers (centers at i*180/bins), cell histograms on
    a (256/cell)^2 grid, then 2x2 block L2 normalization (blocks overlap by
    one cell, eps=1e-6). Each cell's normalized copies are averaged over
    the blocks containing it, so the descriptor has one slot per
    (cell, orientation): cells_y * cells_x * bins values.
    """
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    size = CANONICAL_IMAGE_SIZE
    pixels = resample_bilinear(pixels, size, size)
    if size % cell != 0:
        raise ParamError(f"cell size {cell} must divide {size}")
    ncells = size // cell

    gx = pixels[:, np.minimum(np.arange(size) + 1, size - 1)] \
        - pixels[:, np.maximum(np.arange(size) - 1, 0)]
    gy = pixels[np.minimum(np.arange(size) + 1, size - 1), :] \
        - pixels[np.maximum(np.arange(size) - 1, 0), :]
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)

    pos = ang * bins / np.pi          # fractional bin position, centers at integers
    low = np.floor(pos).astype(np.intp)
    frac = pos - low
    low %= bins
    high = (low + 1) % bins

    cell_of = np.arange(size) // cell
    flat_cell = (cell_of[:, None] * ncells + cell_of[None, :]).ravel()
    hist = np.bincount(flat_cell * bins + low.ravel(),
                       weights=(mag * (1.0 - frac)).ravel(),
                       minlength=ncells * ncells * bins)
    hist += np.bincount(flat_cell * bins + high.ravel(),
                        weights=(mag * frac).ravel(),
                        minlength=ncells * ncells * bins)
    hist = hist.reshape(ncells, ncells, bins)

    acc = np.zeros_like(hist)
    count = np.zeros((ncells, ncells, 1))
    for by in range(ncells - HOG_BLOCK + 1):
        for bx in range(ncells - HOG_BLOCK + 1):
            block = hist[by : by + HOG_BLOCK, bx : bx + HOG_BLOCK, :]
            norm = np.sqrt(np.sum(block * block) + HOG_EPS**2)
            acc[by : by + HOG_BLOCK, bx : bx + HOG_BLOCK, :] += block / norm
            count[by : by + HOG_BLOCK, bx : bx + HOG_BLOCK, :] += 1.0
    return (acc / count).ravel()
