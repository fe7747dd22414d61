"""Exact decoding through the inverse frame operator.

The frame operator Phi* Phi (N^2 x N^2, dense) is assembled block by
block from the sparse analysis matrix, inverted once with the recursive
out-of-core algorithm, and cached on disk keyed by the exact transform
parameters.  Decoding applies the sparse backprojection first and then
streams the stored inverse through a blockwise matrix-vector product, so
the rectangular dual-filter matrix is never materialized.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ooc_blocks
from .analysis import AnalysisOperator, Image, adjoint
from .errors import (
    CacheCorruptionError,
    CacheMissingError,
    InvalidParameterError,
    NumericalError,
    ResourceError,
)
from .ooc_blocks import BlockMatrixStore
from .roc import RankOrderCode, masked_coefficients

__all__ = [
    "DualOperatorCache",
    "cache_key",
    "default_cache_root",
    "build_frame_operator",
    "frame_operator_residual",
    "build_dual",
    "load_dual",
    "dual_decode",
    "RESIDUAL_THRESHOLD",
]

CACHE_FORMAT_VERSION = 1
RESIDUAL_THRESHOLD = 1e-8
METADATA_NAME = "metadata.json"
STORE_DIR_NAME = "inverse_frame_operator"
CACHE_ENV_VAR = "ROCODEC_CACHE"


def default_cache_root() -> Path:
    import os

    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "rocodec"


def cache_key(op: AnalysisOperator) -> str:
    """Hash of every quantity the inverse depends on, bit-exact on floats."""
    p = op.params
    canonical = "|".join(
        [
            f"v{CACHE_FORMAT_VERSION}",
            f"N{op.grid.image_side}",
            f"K{op.grid.layer_count}",
            f"b{op.boundary}",
            f"s{int(op.scaling_function)}",
            f"wc{p.w_c.hex()}",
            f"ws{p.w_s.hex()}",
            f"r{p.sigma_ratio.hex()}",
            f"f{p.sigma_c_finest.hex()}",
        ]
    )
    return hashlib.sha256(canonical.encode()).hexdigest()[:24]


@dataclass
class DualOperatorCache:
    """Handle onto a verified on-disk inverse frame operator."""

    key: str
    path: Path
    inverse: BlockMatrixStore
    residual: float
    checksum: str

    def verify(self) -> None:
        actual = _digest_store(self.inverse)
        if actual != self.checksum:
            raise CacheCorruptionError(
                f"cache {self.path} failed its checksum "
                f"(stored {self.checksum}, recomputed {actual})"
            )


def build_frame_operator(op: AnalysisOperator, block_size: int,
                         path) -> BlockMatrixStore:
    """Assemble Phi* Phi into a symmetric block store.

    Works one block-column strip of the sparse matrix at a time, so peak
    memory is one strip of Gram rows, never the dense product.  Only the
    lower block triangle is written; mirror blocks are served as
    transposes by the store.
    """
    n_sq = op.cols
    _preflight_disk(path, n_sq, block_size, symmetric=True)
    store = BlockMatrixStore.create(path, n_sq, n_sq, block_size, symmetric=True)
    csc = op.matrix.tocsc()
    b = block_size
    store.autoflush = False
    try:
        for br in range(store.block_rows):
            lo = br * b
            hi = min(lo + b, n_sq)
            # Gram rows [lo, hi) against all columns up to the diagonal block
            strip = (csc[:, lo:hi].T @ csc[:, :hi]).toarray()
            for bc in range(br + 1):
                clo = bc * b
                chi = min(clo + b, hi)
                store.write_block(br, bc, strip[:, clo:chi])
    finally:
        store.autoflush = True
        store.flush()
    return store


def _preflight_disk(path, n_sq: int, block_size: int, symmetric: bool) -> None:
    parent = Path(path).parent
    parent.mkdir(parents=True, exist_ok=True)
    needed = n_sq * n_sq * 8
    if symmetric:
        needed = needed // 2 + n_sq * block_size * 8
    free = shutil.disk_usage(parent).free
    if needed > free:
        raise ResourceError(
            f"building the frame operator needs about {needed} bytes under "
            f"{parent}, but only {free} are free"
        )


def frame_operator_residual(gram: BlockMatrixStore,
                            inverse: BlockMatrixStore) -> float:
    """|| G S - I ||_F / sqrt(n), streamed without storing the product."""
    n = gram.rows
    total = 0.0
    b = gram.block_size
    for br in range(gram.block_rows):
        for bc in range(inverse.block_cols):
            shape = (gram.block_shape(br, 0)[0], inverse.block_shape(0, bc)[1])
            acc = np.zeros(shape)
            for k in range(gram.block_cols):
                acc += gram.read_block(br, k) @ inverse.read_block(k, bc)
            if br == bc:
                np.fill_diagonal(acc, acc.diagonal() - 1.0)
            total += float(np.sum(acc * acc))
    return float(np.sqrt(total) / np.sqrt(n))


def _digest_store(store: BlockMatrixStore) -> str:
    digest = hashlib.sha256()
    digest.update(
        f"{store.rows},{store.cols},{store.block_size},{store.symmetric}".encode()
    )
    for (br, bc), loc in store.block_items():
        digest.update(f"{br},{bc}".encode())
        digest.update((store.path / loc["file"]).read_bytes())
    return "sha256:" + digest.hexdigest()


def build_dual(op: AnalysisOperator, block_size: int = 64,
               cache_root=None, threads: int | None = None,
               force: bool = False) -> DualOperatorCache:
    """Invert the frame operator, or reuse the cached inverse.

    A cache entry is only published after the residual check
    ||(Phi* Phi) S - I||_F / sqrt(N^2) <= 1e-8 succeeds; a failing
    residual raises and leaves no entry behind.
    """
    if block_size < 1:
        raise InvalidParameterError(f"block size must be >= 1, got {block_size}")
    root = Path(cache_root) if cache_root is not None else default_cache_root()
    key = cache_key(op)
    entry_path = root / key
    if not force:
        try:
            return load_dual(op, cache_root=root)
        except CacheMissingError:
            pass
    root.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix=f".{key}.build.", dir=root))
    try:
        gram = build_frame_operator(op, block_size, work / "frame_operator")
        inverse = ooc_blocks.invert_recursive(
            gram, work / STORE_DIR_NAME, scratch_dir=work / "scratch",
            threads=threads,
        )
        residual = frame_operator_residual(gram, inverse)
        if not (residual <= RESIDUAL_THRESHOLD):
            raise NumericalError(
                f"inverse frame operator residual {residual!r} exceeds "
                f"{RESIDUAL_THRESHOLD}; cache entry not written"
            )
        gram.delete()
        shutil.rmtree(work / "scratch", ignore_errors=True)
        checksum = _digest_store(inverse)
        metadata = {
            "version": CACHE_FORMAT_VERSION,
            "key": key,
            "image_side": op.grid.image_side,
            "layer_count": op.grid.layer_count,
            "boundary": op.boundary,
            "scaling_function": op.scaling_function,
            "w_c": op.params.w_c.hex(),
            "w_s": op.params.w_s.hex(),
            "sigma_ratio": op.params.sigma_ratio.hex(),
            "sigma_c_finest": op.params.sigma_c_finest.hex(),
            "block_size": block_size,
            "residual": residual,
            "checksum": checksum,
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        (work / METADATA_NAME).write_text(json.dumps(metadata, indent=2))
        if entry_path.exists():
            shutil.rmtree(entry_path)
        work.replace(entry_path)
    except Exception:
        shutil.rmtree(work, ignore_errors=True)
        raise
    inverse = BlockMatrixStore.open(entry_path / STORE_DIR_NAME)
    return DualOperatorCache(
        key=key, path=entry_path, inverse=inverse,
        residual=metadata["residual"], checksum=metadata["checksum"],
    )


def load_dual(op: AnalysisOperator, cache_root=None,
              verify: bool = True) -> DualOperatorCache:
    """Open an existing cache entry for this operator's exact key."""
    root = Path(cache_root) if cache_root is not None else default_cache_root()
    key = cache_key(op)
    entry_path = root / key
    meta_path = entry_path / METADATA_NAME
    if not meta_path.exists():
        raise CacheMissingError(
            f"no dual-operator cache for key {key} under {root}; build it "
            f"with `rocodec build-dual --size {op.grid.image_side} "
            f"--layers {op.grid.layer_count}`"
        )
    try:
        metadata = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise CacheCorruptionError(f"unreadable cache metadata: {exc}") from exc
    inverse = BlockMatrixStore.open(entry_path / STORE_DIR_NAME)
    cache = DualOperatorCache(
        key=key, path=entry_path, inverse=inverse,
        residual=float(metadata["residual"]), checksum=str(metadata["checksum"]),
    )
    if metadata.get("key") != key:
        raise CacheCorruptionError(
            f"cache at {entry_path} belongs to key {metadata.get('key')}"
        )
    if verify:
        cache.verify()
    return cache


def dual_decode(op: AnalysisOperator, cache: DualOperatorCache,
                code: RankOrderCode, threads: int | None = None) -> Image:
    """f* = (Phi* Phi)^-1 Phi* c on the retained coefficients.

    The sparse backprojection runs first; the stored inverse is then
    streamed from disk block-row by block-row.  With every cell retained
    the result equals the encoded image to numerical precision.
    """
    if cache.key != cache_key(op):
        raise InvalidParameterError(
            f"cache key {cache.key} does not match operator key {cache_key(op)}"
        )
    backprojection = adjoint(op, masked_coefficients(op, code))
    solved = ooc_blocks.matvec(cache.inverse, backprojection.as_vector(),
                               threads=threads)
    n = op.grid.image_side
    return Image.from_array(solved.reshape(n, n))
