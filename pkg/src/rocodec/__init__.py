"""Rank-order-coding retina codec with exact dual-frame decoding.

Pipeline: a dyadic DoG filter bank analyzes the image into cell
activations (analysis), the activations are sorted into a rank order
code (roc), and decoding is either the straightforward filter sum or the
exact reconstruction through the cached inverse frame operator (dual),
computed out of core by recursive blockwise Schur inversion (ooc_blocks).
"""

from .analysis import (
    BOUNDARY_PERIODIC,
    BOUNDARY_ZERO,
    AnalysisOperator,
    Image,
    adjoint,
    build_analysis_operator,
    cell_index,
    forward,
)
from .dual import (
    DualOperatorCache,
    build_dual,
    build_frame_operator,
    cache_key,
    dual_decode,
    frame_operator_residual,
    load_dual,
)
from .errors import (
    CacheCorruptionError,
    CacheMissingError,
    CodecError,
    FormatError,
    FrameConditionError,
    InvalidParameterError,
    NumericalError,
    ResourceError,
    StorageError,
)
from .frame_bounds import (
    FrameReport,
    alpha_bound,
    beta_bound,
    verify_frame_condition,
)
from .metrics import affine_align, psnr, psnr_aligned, relative_l2
from .ooc_blocks import BlockMatrixStore, invert_recursive
from .pgm import read_pgm, write_pgm
from .pyramid import (
    DoGParams,
    FilterKernel,
    GridSpec,
    dog_kernel,
    gaussian_kernel,
    grid_spec,
    max_layer_count,
    sample_position,
)
from .roc import (
    CodeHeader,
    RankOrderCode,
    deserialize,
    encode,
    header_for_operator,
    serialize,
    straightforward_decode,
    truncate,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisOperator",
    "BOUNDARY_PERIODIC",
    "BOUNDARY_ZERO",
    "BlockMatrixStore",
    "CacheCorruptionError",
    "CacheMissingError",
    "CodeHeader",
    "CodecError",
    "DoGParams",
    "DualOperatorCache",
    "FilterKernel",
    "FormatError",
    "FrameConditionError",
    "FrameReport",
    "GridSpec",
    "Image",
    "InvalidParameterError",
    "NumericalError",
    "RankOrderCode",
    "ResourceError",
    "StorageError",
    "adjoint",
    "affine_align",
    "alpha_bound",
    "beta_bound",
    "build_analysis_operator",
    "build_dual",
    "build_frame_operator",
    "cache_key",
    "cell_index",
    "deserialize",
    "dog_kernel",
    "dual_decode",
    "encode",
    "forward",
    "frame_operator_residual",
    "gaussian_kernel",
    "grid_spec",
    "header_for_operator",
    "invert_recursive",
    "load_dual",
    "max_layer_count",
    "psnr",
    "psnr_aligned",
    "read_pgm",
    "relative_l2",
    "sample_position",
    "serialize",
    "straightforward_decode",
    "truncate",
    "verify_frame_condition",
    "write_pgm",
]
