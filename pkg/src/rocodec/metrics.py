"""Reconstruction quality metrics.

PSNR uses MAX = 255 regardless of the floating-point pipeline, matching
standard 8-bit codec reporting.  ``psnr_aligned`` fits one global gain
and offset to the reconstruction before scoring; this is the
normalization used when quoting straightforward-decoder quality, whose
raw output carries an arbitrary per-band gain.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidParameterError

__all__ = ["psnr", "affine_align", "psnr_aligned", "relative_l2"]

PSNR_MAX_8BIT = 255.0


def _pair(ref, img) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
    b = np.asarray(getattr(img, "samples", img), dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(ref, img, max_value: float = PSNR_MAX_8BIT) -> float:
    """10 log10(MAX^2 / MSE); +inf for identical inputs."""
    a, b = _pair(ref, img)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


def affine_align(ref, img) -> np.ndarray:
    """Best least-squares gain/offset map of img onto ref."""
    a, b = _pair(ref, img)
    x = b.ravel()
    y = a.ravel()
    var = float(np.var(x))
    if var == 0.0:
        return np.full_like(a, y.mean())
    gain = float(np.cov(x, y, bias=True)[0, 1]) / var
    offset = float(y.mean() - gain * x.mean())
    return gain * b + offset


def psnr_aligned(ref, img, max_value: float = PSNR_MAX_8BIT) -> float:
    a, _ = _pair(ref, img)
    return psnr(a, affine_align(ref, img), max_value=max_value)


def relative_l2(ref, img) -> float:
    """||img - ref||_2 / ||ref||_2."""
    a, b = _pair(ref, img)
    denom = float(np.linalg.norm(a))
    if denom == 0.0:
        raise InvalidParameterError("reference has zero norm")
    return float(np.linalg.norm(b - a)) / denom
