"""Rank order code: sorting, truncation, wire format, straightforward decode.

A code is the sorted list of (cell index, coefficient) couples, ordered
by decreasing coefficient magnitude with ties broken by ascending index
so that streams are reproducible byte for byte.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .analysis import BOUNDARY_CODES, BOUNDARY_NAMES, AnalysisOperator, Image, adjoint
from .errors import FormatError, InvalidParameterError
from .pyramid import DoGParams, grid_spec

__all__ = [
    "CodeHeader",
    "RankOrderCode",
    "header_for_operator",
    "encode",
    "truncate",
    "serialize",
    "deserialize",
    "straightforward_decode",
]

MAGIC = b"ROC1"
# N: u32, K: u16, boundary: u8, w_c, w_s, sigma_ratio, sigma_c_finest: f64,
# total_cells: u64, N_s: u64 -- little endian, no padding.
_HEADER = struct.Struct("<IHBddddQQ")
_ENTRY = struct.Struct("<Qd")


@dataclass(frozen=True)
class CodeHeader:
    """Everything a decoder needs to rebuild the analysis operator."""

    image_side: int
    layer_count: int
    boundary: str
    params: DoGParams
    total_cells: int


def header_for_operator(op: AnalysisOperator) -> CodeHeader:
    return CodeHeader(
        image_side=op.grid.image_side,
        layer_count=op.grid.layer_count,
        boundary=op.boundary,
        params=op.params,
        total_cells=op.grid.total_cells,
    )


@dataclass(frozen=True)
class RankOrderCode:
    """Sorted (index, coefficient) couples plus the stream header."""

    header: CodeHeader
    indices: np.ndarray   # uint64, distinct, < total_cells
    values: np.ndarray    # float64, weakly decreasing in magnitude

    def __post_init__(self):
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise InvalidParameterError("indices and values must be equal-length 1-D")
        n = len(self.indices)
        if n > self.header.total_cells:
            raise InvalidParameterError("more entries than grid cells")
        if n:
            if int(self.indices.max()) >= self.header.total_cells:
                raise InvalidParameterError("cell index out of range")
            if len(np.unique(self.indices)) != n:
                raise InvalidParameterError("duplicate cell index")
            if not np.all(np.isfinite(self.values)):
                raise InvalidParameterError("coefficients must be finite")
            mags = np.abs(self.values)
            if np.any(mags[1:] > mags[:-1]):
                raise InvalidParameterError("entries not sorted by decreasing magnitude")

    @property
    def n_retained(self) -> int:
        return len(self.indices)


def encode(coefficients: np.ndarray, header: CodeHeader) -> RankOrderCode:
    """Sort all coefficients by decreasing magnitude, ties by ascending index."""
    c = np.asarray(coefficients, dtype=np.float64).ravel()
    if c.shape[0] != header.total_cells:
        raise InvalidParameterError(
            f"coefficient vector length {c.shape[0]} does not match "
            f"total_cells {header.total_cells}"
        )
    if not np.all(np.isfinite(c)):
        raise InvalidParameterError("coefficients must be finite")
    # lexsort: the last key is primary; negated magnitudes sort descending,
    # equal magnitudes fall back to ascending cell index
    order = np.lexsort((np.arange(c.shape[0], dtype=np.uint64), -np.abs(c)))
    return RankOrderCode(
        header=header,
        indices=order.astype(np.uint64),
        values=c[order],
    )


def truncate(code: RankOrderCode, fraction: float) -> RankOrderCode:
    """Keep the first ceil(fraction * total_cells) entries."""
    if not (0.0 < fraction <= 1.0):
        raise InvalidParameterError(f"fraction must lie in (0, 1], got {fraction}")
    keep = min(math.ceil(fraction * code.header.total_cells), code.n_retained)
    return RankOrderCode(
        header=code.header,
        indices=code.indices[:keep].copy(),
        values=code.values[:keep].copy(),
    )


def serialize(code: RankOrderCode) -> bytes:
    h = code.header
    out = bytearray(MAGIC)
    out += _HEADER.pack(
        h.image_side,
        h.layer_count,
        BOUNDARY_CODES[h.boundary],
        h.params.w_c,
        h.params.w_s,
        h.params.sigma_ratio,
        h.params.sigma_c_finest,
        h.total_cells,
        code.n_retained,
    )
    body = np.empty(code.n_retained, dtype=np.dtype([("p", "<u8"), ("c", "<f8")]))
    body["p"] = code.indices
    body["c"] = code.values
    out += body.tobytes()
    return bytes(out)


def deserialize(data: bytes) -> RankOrderCode:
    """Parse and fully validate a code stream.

    Structural fields (magic, sizes, boundary tag, cell-count consistency
    with the rebuilt grid, index range/distinctness, magnitude ordering)
    are all checked; coefficient and parameter payload bytes carry no
    checksum in the wire format, so a flipped mantissa bit inside a
    plausible range is not detectable.
    """
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("bad magic, expected ROC1", offset=0)
    if len(data) < 4 + _HEADER.size:
        raise FormatError("truncated header", offset=len(data))
    (n, k, boundary_code, w_c, w_s, sigma_ratio, sigma_c_finest,
     total_cells, n_s) = _HEADER.unpack_from(data, 4)
    if n < 1:
        raise FormatError(f"image side {n} out of range", offset=4)
    if k < 1 or (1 << (k - 1)) > n:
        raise FormatError(f"layer count {k} inadmissible for side {n}", offset=8)
    if boundary_code not in BOUNDARY_NAMES:
        raise FormatError(f"unknown boundary tag {boundary_code}", offset=10)
    try:
        params = DoGParams(
            w_c=w_c, w_s=w_s, sigma_ratio=sigma_ratio, sigma_c_finest=sigma_c_finest
        )
    except InvalidParameterError as exc:
        raise FormatError(f"header parameters invalid: {exc}", offset=11) from exc
    grid = grid_spec(n, k, params)
    if total_cells != grid.total_cells:
        raise FormatError(
            f"header total_cells {total_cells} does not match grid "
            f"({grid.total_cells})",
            offset=43,
        )
    if n_s > total_cells:
        raise FormatError(f"N_s {n_s} exceeds total_cells {total_cells}", offset=51)
    body_offset = 4 + _HEADER.size
    expected = body_offset + n_s * _ENTRY.size
    if len(data) != expected:
        raise FormatError(
            f"stream length {len(data)} does not match header (expected {expected})",
            offset=min(len(data), expected),
        )
    body = np.frombuffer(data, dtype=np.dtype([("p", "<u8"), ("c", "<f8")]),
                         count=n_s, offset=body_offset)
    indices = body["p"].copy()
    values = body["c"].copy()
    if n_s:
        bad = np.nonzero(indices >= total_cells)[0]
        if bad.size:
            raise FormatError(
                f"cell index {indices[bad[0]]} out of range",
                offset=body_offset + int(bad[0]) * _ENTRY.size,
            )
        if len(np.unique(indices)) != n_s:
            raise FormatError("duplicate cell index", offset=body_offset)
        if not np.all(np.isfinite(values)):
            raise FormatError("non-finite coefficient", offset=body_offset)
        mags = np.abs(values)
        rising = np.nonzero(mags[1:] > mags[:-1])[0]
        if rising.size:
            raise FormatError(
                "coefficient magnitudes not decreasing",
                offset=body_offset + (int(rising[0]) + 1) * _ENTRY.size,
            )
    header = CodeHeader(
        image_side=n,
        layer_count=k,
        boundary=BOUNDARY_NAMES[boundary_code],
        params=params,
        total_cells=total_cells,
    )
    return RankOrderCode(header=header, indices=indices, values=values)


def _check_header_match(op: AnalysisOperator, code: RankOrderCode) -> None:
    want = header_for_operator(op)
    if code.header != want:
        raise InvalidParameterError(
            f"code header {code.header} does not match operator {want}"
        )


def masked_coefficients(op: AnalysisOperator, code: RankOrderCode) -> np.ndarray:
    """Full-length coefficient vector with only the retained entries set."""
    _check_header_match(op, code)
    c = np.zeros(op.rows)
    c[code.indices.astype(np.intp)] = code.values
    return c


def straightforward_decode(
    op: AnalysisOperator, code: RankOrderCode, weighting: str = "none"
) -> Image:
    """Weighted sum of the retained filters: the backprojection Phi* c.

    ``weighting="matched"`` divides every retained coefficient by the
    squared norm of its filter before backprojecting.  That is the
    normalized reconstruction historically used with this retina model;
    it compensates the per-layer gain of the plain transpose and is what
    the progressive-quality figures of the original codec report.  The
    default is the unweighted transpose.
    """
    c = masked_coefficients(op, code)
    if weighting == "matched":
        c = c / op.row_squared_norms()
    elif weighting != "none":
        raise InvalidParameterError(f"unknown weighting {weighting!r}")
    return adjoint(op, c)
