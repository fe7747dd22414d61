"""Sparse analysis operator: rows are shifted, undersampled DoG filters.

The operator maps a row-major flattened image f (length N^2) to the
coefficient vector c; cell (k, i, j) measures the correlation of the
image with the layer-k kernel centred at (u_k(i), u_k(j)).

Each Gaussian component is separable, so every layer is assembled as a
Kronecker product of two 1-D sampled-convolution matrices; the result is
the undersampled Toeplitz-block sparse structure of the transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, ResourceError
from .pyramid import (
    DoGParams,
    GridSpec,
    gaussian_taps_1d,
    sample_offset_stride,
)

__all__ = [
    "BOUNDARY_ZERO",
    "BOUNDARY_PERIODIC",
    "BOUNDARY_CODES",
    "BOUNDARY_NAMES",
    "Image",
    "AnalysisOperator",
    "cell_index",
    "build_analysis_operator",
    "forward",
    "adjoint",
]

# Convolution behaviour outside the image domain.  Zero padding is the
# codec default; the periodic variant exists because the analytic frame
# bounds assume circular convolution.  The code stream records the
# convention so encoder and decoder always agree.
BOUNDARY_ZERO = "zero"
BOUNDARY_PERIODIC = "periodic"
BOUNDARY_CODES = {BOUNDARY_ZERO: 0, BOUNDARY_PERIODIC: 1}
BOUNDARY_NAMES = {v: k for k, v in BOUNDARY_CODES.items()}

# Refuse to assemble operators whose nonzeros would exceed this many
# bytes unless the caller raises the cap explicitly.
DEFAULT_OPERATOR_BYTE_CAP = 4 << 30


@dataclass(frozen=True)
class Image:
    """Square grayscale image; samples are float64, row-major."""

    samples: np.ndarray

    def __post_init__(self):
        a = self.samples
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidParameterError(f"image must be square 2-D, got shape {a.shape}")
        if a.dtype != np.float64:
            raise InvalidParameterError("image samples must be float64")
        if not np.all(np.isfinite(a)):
            raise InvalidParameterError("image samples must be finite")

    @property
    def side(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Image":
        return cls(np.ascontiguousarray(a, dtype=np.float64))

    def as_vector(self) -> np.ndarray:
        return self.samples.ravel()


@dataclass
class AnalysisOperator:
    """The sparse matrix whose rows are the analysis filters.

    Immutable after construction; reproducible bit-exactly from
    (grid, params, boundary).
    """

    grid: GridSpec
    params: DoGParams
    boundary: str
    matrix: sp.csr_matrix
    scaling_function: bool = True
    _row_sq_norms: np.ndarray | None = field(default=None, repr=False)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def row_squared_norms(self) -> np.ndarray:
        """Squared l2 norm of every row (used by matched-filter weighting)."""
        if self._row_sq_norms is None:
            sq = self.matrix.multiply(self.matrix).sum(axis=1)
            self._row_sq_norms = np.asarray(sq).ravel()
        return self._row_sq_norms


def cell_index(k: int, i: int, j: int, grid: GridSpec) -> int:
    """Flat cell index with cumulative per-layer offsets.

    Layers have different side lengths, so each layer is offset by the
    total cell count of the layers before it; the map is a bijection
    from grid cells onto [0, total_cells).
    """
    if not (0 <= k < grid.layer_count):
        raise InvalidParameterError(f"layer {k} out of range [0, {grid.layer_count})")
    n_k = grid.layer_sides[k]
    if not (0 <= i < n_k and 0 <= j < n_k):
        raise InvalidParameterError(
            f"cell ({i}, {j}) outside layer {k} of side {n_k}"
        )
    return grid.layer_offset(k) + i * n_k + j


def _axis_operator(
    image_side: int,
    k: int,
    layer_count: int,
    taps_1d: np.ndarray,
    boundary: str,
) -> sp.csr_matrix:
    """1-D analysis matrix of one Gaussian component along one axis.

    Row i holds taps_1d reversed around pixel u_k(i): entry (i, x) is
    taps_1d[M + (u_k(i) - x)].  Zero boundary drops out-of-image columns;
    periodic wraps them modulo the image side (accumulating when the
    support exceeds the image).
    """
    offset, stride = sample_offset_stride(k, layer_count)
    n_rows = 0 if offset >= image_side else (image_side - offset + stride - 1) // stride
    m = (len(taps_1d) - 1) // 2
    u = offset + stride * np.arange(n_rows)
    d = np.arange(-m, m + 1)
    cols = u[:, None] - d[None, :]          # pixel x = u - d
    vals = np.broadcast_to(taps_1d[d + m][None, :], cols.shape)
    rows = np.broadcast_to(np.arange(n_rows)[:, None], cols.shape)
    dense = np.zeros((n_rows, image_side))
    if boundary == BOUNDARY_ZERO:
        keep = (cols >= 0) & (cols < image_side)
        np.add.at(dense, (rows[keep], cols[keep]), vals[keep])
    elif boundary == BOUNDARY_PERIODIC:
        np.add.at(dense, (rows.ravel(), (cols % image_side).ravel()), vals.ravel())
    else:
        raise InvalidParameterError(f"unknown boundary convention {boundary!r}")
    return sp.csr_matrix(dense)


def estimate_operator_bytes(grid: GridSpec) -> int:
    """Upper bound on assembled CSR size (values + indices)."""
    nnz = 0
    for k in range(grid.layer_count):
        side = 2 * grid.half_widths[k] + 1
        per_row = min(side, grid.image_side) ** 2
        components = 1 if k == 0 else 2
        nnz += grid.layer_sides[k] ** 2 * per_row * components
    return nnz * 12  # 8-byte value + 4-byte column index


def build_analysis_operator(
    grid: GridSpec,
    params: DoGParams,
    boundary: str = BOUNDARY_ZERO,
    max_bytes: int = DEFAULT_OPERATOR_BYTE_CAP,
    scaling_function: bool = True,
) -> AnalysisOperator:
    """Assemble the full sparse operator for the given grid.

    ``scaling_function=False`` builds the diagnostic variant in which
    layer 0 keeps its band-pass DoG; the result is not invertible on
    constant images and exists to demonstrate why the scaling function
    is required.
    """
    if boundary not in BOUNDARY_CODES:
        raise InvalidParameterError(f"unknown boundary convention {boundary!r}")
    estimate = estimate_operator_bytes(grid)
    if estimate > max_bytes:
        raise ResourceError(
            f"operator estimate {estimate} bytes exceeds cap of {max_bytes} bytes; "
            f"raise max_bytes to proceed"
        )
    n = grid.image_side
    layers = []
    for k in range(grid.layer_count):
        m = grid.half_widths[k]
        gc = gaussian_taps_1d(params.sigma_center(k, grid.layer_count), m)
        ax_c = _axis_operator(n, k, grid.layer_count, gc, boundary)
        if k == 0 and scaling_function:
            layer = params.w_c * sp.kron(ax_c, ax_c, format="csr")
        else:
            gs = gaussian_taps_1d(params.sigma_surround(k, grid.layer_count), m)
            ax_s = _axis_operator(n, k, grid.layer_count, gs, boundary)
            layer = params.w_c * sp.kron(ax_c, ax_c, format="csr") - params.w_s * sp.kron(
                ax_s, ax_s, format="csr"
            )
        layers.append(layer)
    matrix = sp.vstack(layers, format="csr")
    matrix.sort_indices()
    return AnalysisOperator(
        grid=grid,
        params=params,
        boundary=boundary,
        matrix=matrix,
        scaling_function=scaling_function,
    )


def forward(op: AnalysisOperator, image: Image) -> np.ndarray:
    """Coefficient vector c = Phi f."""
    if image.side != op.grid.image_side:
        raise InvalidParameterError(
            f"image side {image.side} does not match operator side "
            f"{op.grid.image_side}"
        )
    return op.matrix @ image.as_vector()


def adjoint(op: AnalysisOperator, coefficients: np.ndarray) -> Image:
    """Backprojection Phi* c; all taps are real so this is the transpose."""
    c = np.asarray(coefficients, dtype=np.float64).ravel()
    if c.shape[0] != op.rows:
        raise InvalidParameterError(
            f"coefficient vector length {c.shape[0]} does not match "
            f"{op.rows} cells"
        )
    n = op.grid.image_side
    return Image.from_array((op.matrix.T @ c).reshape(n, n))
