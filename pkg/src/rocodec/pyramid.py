"""Difference-of-Gaussians filter bank on a dyadic sampling grid.

Scales double from the finest layer K-1 down to layer 0; layer k is
sampled with stride 2^(K-k-1) and offset floor(2^(K-k-2)).  Layer 0
carries a low-pass Gaussian scaling function instead of a DoG so the
centre of the spectrum is covered and the transform stays invertible.

Gaussian taps are sampled from the continuous unit-integral Gaussian and
renormalized to unit sum.  With w_c == w_s this makes the DC response of
every band-pass kernel exactly zero and the DC response of the scaling
function exactly w_c, independent of support truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "DoGParams",
    "FilterKernel",
    "GridSpec",
    "gaussian_kernel",
    "dog_kernel",
    "sample_position",
    "sample_offset_stride",
    "layer_side",
    "max_layer_count",
    "grid_spec",
]


@dataclass(frozen=True)
class DoGParams:
    """Weights and scale ratios of the center-surround receptive fields.

    ``sigma_c_finest`` anchors the center Gaussian of the finest layer in
    pixels; coarser layers double it per layer.  ``sigma_ratio`` is
    sigma_center / sigma_surround, identical for all layers.
    """

    w_c: float = 1.0
    w_s: float = 1.0
    sigma_ratio: float = 1.0 / 3.0
    sigma_c_finest: float = 0.5

    def __post_init__(self):
        for name in ("w_c", "w_s", "sigma_ratio", "sigma_c_finest"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.w_c > 0):
            raise InvalidParameterError(f"w_c must be > 0, got {self.w_c}")
        if not (self.w_s >= 0):
            raise InvalidParameterError(f"w_s must be >= 0, got {self.w_s}")
        if not (0 < self.sigma_ratio < 1):
            raise InvalidParameterError(
                f"sigma_ratio must lie in (0, 1), got {self.sigma_ratio}"
            )
        if not (self.sigma_c_finest > 0):
            raise InvalidParameterError(
                f"sigma_c_finest must be > 0, got {self.sigma_c_finest}"
            )

    def sigma_center(self, k: int, layer_count: int) -> float:
        """Center std-dev of layer k; doubles per layer towards k = 0."""
        _check_layer(k, layer_count)
        return self.sigma_c_finest * 2.0 ** (layer_count - 1 - k)

    def sigma_surround(self, k: int, layer_count: int) -> float:
        _check_layer(k, layer_count)
        return self.sigma_center(k, layer_count) / self.sigma_ratio

    def kernel_half_width(self, k: int, layer_count: int) -> int:
        """Half width M_k = round(3 * sigma_surround_k), rounded half up."""
        # round-half-up, not banker's rounding: M = 4.5 must give 5
        m = math.floor(3.0 * self.sigma_surround(k, layer_count) + 0.5)
        return max(1, m)


@dataclass(frozen=True)
class FilterKernel:
    """A square tap array of side 2*half_width + 1.

    ``scale`` is the layer index for kernels produced by dog_kernel and
    None for bare Gaussians.
    """

    scale: int | None
    half_width: int
    taps: np.ndarray

    def __post_init__(self):
        side = 2 * self.half_width + 1
        if self.taps.shape != (side, side):
            raise InvalidParameterError(
                f"taps shape {self.taps.shape} does not match half_width "
                f"{self.half_width}"
            )
        if not np.all(np.isfinite(self.taps)):
            raise InvalidParameterError("taps must be finite")


def _check_layer(k: int, layer_count: int) -> None:
    if not (0 <= k < layer_count):
        raise InvalidParameterError(
            f"layer index {k} out of range [0, {layer_count})"
        )


def gaussian_taps_1d(sigma: float, half_width: int) -> np.ndarray:
    """Unit-sum 1-D Gaussian samples on integer offsets [-M, M]."""
    if not (sigma > 0):
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    if half_width < 1:
        raise InvalidParameterError(f"half_width must be >= 1, got {half_width}")
    d = np.arange(-half_width, half_width + 1, dtype=np.float64)
    g = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_kernel(sigma: float, half_width: int) -> FilterKernel:
    """Sampled 2-D Gaussian, renormalized to unit sum.

    The sampled bivariate Gaussian separates into a product of 1-D
    samples, so the unit-sum 2-D array is built as the outer product of
    unit-sum 1-D taps; this is the exact factored form of sampling
    exp(-(x^2+y^2)/(2 sigma^2)) / (2 pi sigma^2) and renormalizing.
    """
    g = gaussian_taps_1d(sigma, half_width)
    return FilterKernel(scale=None, half_width=half_width, taps=np.outer(g, g))


def dog_kernel(k: int, params: DoGParams, layer_count: int) -> FilterKernel:
    """Analysis kernel of layer k.

    Layers k >= 1 are band-pass differences w_c*G_center - w_s*G_surround;
    layer 0 is the low-pass scaling function w_c*G_center alone.  Both
    components share the support half-width M_k derived from the surround.
    """
    _check_layer(k, layer_count)
    m = params.kernel_half_width(k, layer_count)
    s_c = params.sigma_center(k, layer_count)
    gc = gaussian_taps_1d(s_c, m)
    if k == 0:
        taps = params.w_c * np.outer(gc, gc)
    else:
        gs = gaussian_taps_1d(params.sigma_surround(k, layer_count), m)
        taps = params.w_c * np.outer(gc, gc) - params.w_s * np.outer(gs, gs)
    return FilterKernel(scale=k, half_width=m, taps=taps)


def sample_offset_stride(k: int, layer_count: int) -> tuple[int, int]:
    """(offset, stride) of layer k's sampling comb."""
    _check_layer(k, layer_count)
    e = layer_count - k - 1
    stride = 1 << e
    offset = (1 << (e - 1)) if e >= 1 else 0  # floor(2^(e-1)); 0 at e = 0
    return offset, stride


def sample_position(k: int, i: int, layer_count: int) -> int:
    """Pixel coordinate u_k(i) = floor(2^(K-k-2)) + 2^(K-k-1) * i."""
    if i < 0:
        raise InvalidParameterError(f"grid index must be >= 0, got {i}")
    offset, stride = sample_offset_stride(k, layer_count)
    return offset + stride * i


def layer_side(image_side: int, k: int, layer_count: int) -> int:
    """Count of grid indices i with u_k(i) inside [0, image_side)."""
    offset, stride = sample_offset_stride(k, layer_count)
    if offset >= image_side:
        return 0
    return (image_side - offset + stride - 1) // stride


def max_layer_count(image_side: int) -> int:
    """Largest K such that 2^(K-1) <= image_side."""
    if image_side < 1:
        raise InvalidParameterError(f"image side must be >= 1, got {image_side}")
    k = 1
    while (1 << k) <= image_side:
        k += 1
    return k


@dataclass(frozen=True)
class GridSpec:
    """Static geometry of the dyadic analysis grid."""

    image_side: int
    layer_count: int
    layer_sides: tuple[int, ...]
    half_widths: tuple[int, ...]
    total_cells: int

    def layer_offset(self, k: int) -> int:
        """Index of the first cell of layer k in the flattened cell order."""
        _check_layer(k, self.layer_count)
        return sum(n * n for n in self.layer_sides[:k])


def grid_spec(image_side: int, layer_count: int | None, params: DoGParams) -> GridSpec:
    """Build the grid geometry for an image_side^2 image.

    ``layer_count`` of None selects the maximal admissible K (the largest
    with 2^(K-1) <= image_side), which sweeps the full spectrum.
    """
    if image_side < 1:
        raise InvalidParameterError(f"image side must be >= 1, got {image_side}")
    k_max = max_layer_count(image_side)
    if layer_count is None:
        layer_count = k_max
    if layer_count < 1:
        raise InvalidParameterError(f"layer count must be >= 1, got {layer_count}")
    if (1 << (layer_count - 1)) > image_side:
        raise InvalidParameterError(
            f"layer count {layer_count} too large for image side {image_side}; "
            f"maximal admissible K is {k_max}"
        )
    sides = tuple(layer_side(image_side, k, layer_count) for k in range(layer_count))
    widths = tuple(params.kernel_half_width(k, layer_count) for k in range(layer_count))
    total = sum(n * n for n in sides)
    return GridSpec(
        image_side=image_side,
        layer_count=layer_count,
        layer_sides=sides,
        half_widths=widths,
        total_cells=total,
    )
