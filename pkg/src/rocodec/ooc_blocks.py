"""Disk-backed dense block matrices with parallel kernels and recursive
Schur-complement inversion.

A store is a directory holding one raw little-endian float64 file per
block plus a JSON manifest.  Blocks are B x B except for the ragged last
row/column; blocks never written read back as zeros.  A store flagged
symmetric keeps only its lower block triangle on disk and serves upper
blocks as transposes of their mirrors.

All kernels stage at most a handful of blocks in memory at a time: a
gemm worker holds its accumulator, one block of each operand, and one
scratch product, i.e. 4 B^2 elements.  The module-level accountant
tracks exactly the block buffers the kernels materialize so tests can
assert the out-of-core property instead of trusting it.

Determinism: every output block is produced by a single worker that
accumulates its k-products in ascending order, so results are identical
for any worker count.
"""

from __future__ import annotations

import json
import math
import os
import re
import shutil
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import InvalidParameterError, NumericalError, StorageError

__all__ = [
    "BlockMatrixStore",
    "BlockView",
    "MemoryAccountant",
    "accountant",
    "default_threads",
    "gemm",
    "add",
    "sub",
    "copy_into",
    "matvec",
    "invert_recursive",
]

MANIFEST_NAME = "manifest.json"
DTYPE_TAG = "<f8"


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


class MemoryAccountant:
    """Thread-safe byte counter for resident block buffers."""

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def acquire(self, nbytes: int) -> None:
        with self._lock:
            self.current += nbytes
            if self.current > self.peak:
                self.peak = self.current

    def release(self, nbytes: int) -> None:
        with self._lock:
            self.current -= nbytes

    def reset(self) -> None:
        with self._lock:
            self.current = 0
            self.peak = 0


accountant = MemoryAccountant()


class BlockMatrixStore:
    """Dense matrix partitioned into fixed-size blocks stored on disk."""

    def __init__(self, path: Path, rows: int, cols: int, block_size: int,
                 symmetric: bool, blocks: dict[tuple[int, int], dict]):
        self.path = Path(path)
        self.rows = rows
        self.cols = cols
        self.block_size = block_size
        self.symmetric = symmetric
        self._blocks = blocks
        self._lock = threading.Lock()
        # persist the manifest on every write; kernels defer it to one
        # flush per pass so manifest churn stays off the hot path
        self.autoflush = True

    @property
    def root(self) -> "BlockMatrixStore":
        return self

    # -- creation / persistence -------------------------------------------

    @classmethod
    def create(cls, path, rows: int, cols: int, block_size: int,
               symmetric: bool = False) -> "BlockMatrixStore":
        if block_size < 1:
            raise InvalidParameterError(f"block size must be >= 1, got {block_size}")
        if rows < 1 or cols < 1:
            raise InvalidParameterError(f"bad matrix shape ({rows}, {cols})")
        if symmetric and rows != cols:
            raise InvalidParameterError("symmetric store must be square")
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        store = cls(path, rows, cols, block_size, symmetric, {})
        store._save_manifest()
        return store

    @classmethod
    def open(cls, path) -> "BlockMatrixStore":
        path = Path(path)
        manifest_path = path / MANIFEST_NAME
        try:
            manifest = json.loads(manifest_path.read_text())
        except FileNotFoundError as exc:
            raise StorageError(f"no manifest at {manifest_path}") from exc
        except json.JSONDecodeError as exc:
            raise StorageError(f"corrupt manifest at {manifest_path}: {exc}") from exc
        try:
            if manifest["dtype"] != DTYPE_TAG:
                raise StorageError(f"unsupported element type {manifest['dtype']}")
            blocks = {}
            for key, loc in manifest["blocks"].items():
                r, c = key.split(",")
                blocks[(int(r), int(c))] = loc
            store = cls(path, int(manifest["rows"]), int(manifest["cols"]),
                        int(manifest["block_size"]), bool(manifest["symmetric"]),
                        blocks)
        except (KeyError, ValueError) as exc:
            raise StorageError(f"corrupt manifest at {manifest_path}: {exc}") from exc
        return store

    def _save_manifest(self) -> None:
        manifest = {
            "rows": self.rows,
            "cols": self.cols,
            "block_size": self.block_size,
            "dtype": DTYPE_TAG,
            "symmetric": self.symmetric,
            "blocks": {f"{r},{c}": loc for (r, c), loc in sorted(self._blocks.items())},
        }
        tmp = self.path / (MANIFEST_NAME + ".tmp")
        tmp.write_text(json.dumps(manifest))
        tmp.replace(self.path / MANIFEST_NAME)

    def flush(self) -> None:
        with self._lock:
            self._save_manifest()

    def block_items(self):
        """Sorted ((block_row, block_col), locator) pairs of stored blocks."""
        with self._lock:
            return sorted(self._blocks.items())

    def delete(self) -> None:
        shutil.rmtree(self.path, ignore_errors=True)

    # -- geometry ----------------------------------------------------------

    @property
    def block_rows(self) -> int:
        return math.ceil(self.rows / self.block_size)

    @property
    def block_cols(self) -> int:
        return math.ceil(self.cols / self.block_size)

    def block_shape(self, br: int, bc: int) -> tuple[int, int]:
        if not (0 <= br < self.block_rows and 0 <= bc < self.block_cols):
            raise InvalidParameterError(
                f"block ({br}, {bc}) outside grid "
                f"{self.block_rows} x {self.block_cols}"
            )
        b = self.block_size
        return (min(b, self.rows - br * b), min(b, self.cols - bc * b))

    # -- block I/O ----------------------------------------------------------

    def read_block(self, br: int, bc: int) -> np.ndarray:
        shape = self.block_shape(br, bc)
        with self._lock:
            loc = self._blocks.get((br, bc))
            mirror = self._blocks.get((bc, br)) if self.symmetric and loc is None else None
        if loc is None and mirror is None:
            return np.zeros(shape)
        if loc is not None:
            return self._load(loc, shape)
        return np.ascontiguousarray(self._load(mirror, (shape[1], shape[0])).T)

    def _load(self, loc: dict, shape: tuple[int, int]) -> np.ndarray:
        fpath = self.path / loc["file"]
        count = shape[0] * shape[1]
        nbytes = count * 8
        if loc["nbytes"] != nbytes:
            raise StorageError(
                f"block file {fpath} holds {loc['nbytes']} bytes, expected {nbytes}"
            )
        try:
            with open(fpath, "rb") as fh:
                fh.seek(loc.get("offset", 0))
                data = np.fromfile(fh, dtype=np.dtype(DTYPE_TAG), count=count)
        except OSError as exc:
            raise StorageError(f"cannot read block file {fpath}: {exc}") from exc
        if data.size != count:
            raise StorageError(f"short read from block file {fpath}")
        return data.reshape(shape)

    def write_block(self, br: int, bc: int, block: np.ndarray) -> None:
        shape = self.block_shape(br, bc)
        if self.symmetric and bc > br:
            # keep the lower triangle only
            self.write_block(bc, br, np.ascontiguousarray(np.asarray(block).T))
            return
        block = np.ascontiguousarray(block, dtype=np.float64)
        if block.shape != shape:
            raise InvalidParameterError(
                f"block ({br}, {bc}) must have shape {shape}, got {block.shape}"
            )
        name = f"blk_{br}_{bc}.bin"
        try:
            block.tofile(self.path / name)
        except OSError as exc:
            raise StorageError(f"cannot write block file {name}: {exc}") from exc
        with self._lock:
            self._blocks[(br, bc)] = {"file": name, "offset": 0,
                                      "nbytes": block.nbytes}
            if self.autoflush:
                self._save_manifest()

    def to_array(self) -> np.ndarray:
        """Materialize the full matrix; intended for small stores in tests."""
        out = np.empty((self.rows, self.cols))
        b = self.block_size
        for br in range(self.block_rows):
            for bc in range(self.block_cols):
                h, w = self.block_shape(br, bc)
                out[br * b:br * b + h, bc * b:bc * b + w] = self.read_block(br, bc)
        return out

    @classmethod
    def from_array(cls, path, array: np.ndarray, block_size: int,
                   symmetric: bool = False) -> "BlockMatrixStore":
        array = np.asarray(array, dtype=np.float64)
        store = cls.create(path, array.shape[0], array.shape[1], block_size,
                           symmetric=symmetric)
        b = block_size
        store.autoflush = False
        try:
            for br in range(store.block_rows):
                for bc in range(store.block_cols):
                    if symmetric and bc > br:
                        continue
                    h, w = store.block_shape(br, bc)
                    store.write_block(br, bc,
                                      array[br * b:br * b + h, bc * b:bc * b + w])
        finally:
            store.autoflush = True
            store.flush()
        return store


class BlockView:
    """Block-aligned rectangular window into a parent store.

    Splits during the recursive inversion always fall on block
    boundaries, so a view only remaps block indices; it shares the
    parent's files and manifest.
    """

    def __init__(self, parent, br0: int, bc0: int, block_rows: int, block_cols: int):
        if br0 + block_rows > parent.block_rows or bc0 + block_cols > parent.block_cols:
            raise InvalidParameterError("view exceeds parent block grid")
        self.parent = parent
        self.br0 = br0
        self.bc0 = bc0
        self.block_rows = block_rows
        self.block_cols = block_cols
        self.block_size = parent.block_size
        b = parent.block_size
        self.rows = min(parent.rows - br0 * b, block_rows * b)
        self.cols = min(parent.cols - bc0 * b, block_cols * b)

    @property
    def root(self):
        return self.parent.root

    def block_shape(self, br: int, bc: int) -> tuple[int, int]:
        if not (0 <= br < self.block_rows and 0 <= bc < self.block_cols):
            raise InvalidParameterError(
                f"block ({br}, {bc}) outside view grid "
                f"{self.block_rows} x {self.block_cols}"
            )
        return self.parent.block_shape(self.br0 + br, self.bc0 + bc)

    def read_block(self, br: int, bc: int) -> np.ndarray:
        self.block_shape(br, bc)
        return self.parent.read_block(self.br0 + br, self.bc0 + bc)

    def write_block(self, br: int, bc: int, block: np.ndarray) -> None:
        self.block_shape(br, bc)
        self.parent.write_block(self.br0 + br, self.bc0 + bc, block)

    def to_array(self) -> np.ndarray:
        out = np.empty((self.rows, self.cols))
        b = self.block_size
        for br in range(self.block_rows):
            for bc in range(self.block_cols):
                h, w = self.block_shape(br, bc)
                out[br * b:br * b + h, bc * b:bc * b + w] = self.read_block(br, bc)
        return out


# -- tracked block buffers ---------------------------------------------------


def _tracked_read(store, br: int, bc: int) -> np.ndarray:
    block = store.read_block(br, bc)
    accountant.acquire(block.nbytes)
    return block


def _tracked_zeros(shape) -> np.ndarray:
    block = np.zeros(shape)
    accountant.acquire(block.nbytes)
    return block


def _tracked_empty(shape) -> np.ndarray:
    block = np.empty(shape)
    accountant.acquire(block.nbytes)
    return block


def _drop(block: np.ndarray) -> None:
    accountant.release(block.nbytes)


# -- elementwise and multiplicative kernels ----------------------------------


def _check_same_grid(*mats) -> None:
    if len({m.block_size for m in mats}) != 1:
        raise InvalidParameterError("stores must share one block size")


def _check_writable_output(out) -> None:
    if out.root.symmetric:
        raise InvalidParameterError(
            "kernels cannot write into a symmetric store; use a plain store"
        )


@contextmanager
def _deferred_flush(out):
    root = out.root
    previous = root.autoflush
    root.autoflush = False
    try:
        yield
    finally:
        root.autoflush = previous
        root.flush()


def _run_block_jobs(jobs, worker, threads: int | None) -> None:
    n = threads or default_threads()
    if n <= 1:
        for job in jobs:
            worker(job)
        return
    with ThreadPoolExecutor(max_workers=n) as pool:
        for result in pool.map(worker, jobs):
            pass  # propagate exceptions


def gemm(a, b, c, alpha: float = 1.0, beta: float = 0.0,
         threads: int | None = None):
    """c := alpha * a @ b + beta * c, blockwise and in parallel.

    Output blocks are independent; each is accumulated over k in a fixed
    ascending order by a single worker.
    """
    _check_same_grid(a, b, c)
    _check_writable_output(c)
    if a.cols != b.rows or c.rows != a.rows or c.cols != b.cols:
        raise InvalidParameterError(
            f"gemm shapes ({a.rows}x{a.cols}) @ ({b.rows}x{b.cols}) "
            f"-> ({c.rows}x{c.cols}) are not conformable"
        )
    kb = a.block_cols

    def worker(job):
        br, bc = job
        shape = c.block_shape(br, bc)
        if beta == 0.0:
            acc = _tracked_zeros(shape)
        else:
            acc = _tracked_read(c, br, bc)
            acc *= beta
        scratch = _tracked_empty(shape)
        try:
            for k in range(kb):
                ablk = _tracked_read(a, br, k)
                bblk = _tracked_read(b, k, bc)
                try:
                    np.matmul(ablk, bblk, out=scratch)
                finally:
                    _drop(ablk)
                    _drop(bblk)
                if alpha != 1.0:
                    scratch *= alpha
                acc += scratch
            c.write_block(br, bc, acc)
        finally:
            _drop(scratch)
            _drop(acc)

    jobs = [(br, bc) for br in range(c.block_rows) for bc in range(c.block_cols)]
    with _deferred_flush(c):
        _run_block_jobs(jobs, worker, threads)
    return c


def _elementwise(a, b, out, sign: float, threads: int | None):
    _check_same_grid(a, b, out)
    _check_writable_output(out)
    if not (a.rows == b.rows == out.rows and a.cols == b.cols == out.cols):
        raise InvalidParameterError("elementwise operands must share one shape")

    def worker(job):
        br, bc = job
        ablk = _tracked_read(a, br, bc)
        bblk = _tracked_read(b, br, bc)
        try:
            if sign >= 0:
                ablk += bblk
            else:
                ablk -= bblk
            out.write_block(br, bc, ablk)
        finally:
            _drop(bblk)
            _drop(ablk)

    jobs = [(br, bc) for br in range(out.block_rows) for bc in range(out.block_cols)]
    with _deferred_flush(out):
        _run_block_jobs(jobs, worker, threads)
    return out


def add(a, b, out, threads: int | None = None):
    """out := a + b elementwise."""
    return _elementwise(a, b, out, 1.0, threads)


def sub(a, b, out, threads: int | None = None):
    """out := a - b elementwise."""
    return _elementwise(a, b, out, -1.0, threads)


def copy_into(src, dst, threads: int | None = None):
    """dst := src, block by block."""
    _check_same_grid(src, dst)
    _check_writable_output(dst)
    if src.rows != dst.rows or src.cols != dst.cols:
        raise InvalidParameterError("copy operands must share one shape")

    def worker(job):
        br, bc = job
        blk = _tracked_read(src, br, bc)
        try:
            dst.write_block(br, bc, blk)
        finally:
            _drop(blk)

    jobs = [(br, bc) for br in range(dst.block_rows) for bc in range(dst.block_cols)]
    with _deferred_flush(dst):
        _run_block_jobs(jobs, worker, threads)
    return dst


def matvec(a, x: np.ndarray, threads: int | None = None) -> np.ndarray:
    """Dense y = A @ x streamed block-row by block-row."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != a.cols:
        raise InvalidParameterError(
            f"vector length {x.shape[0]} does not match {a.cols} columns"
        )
    y = np.zeros(a.rows)
    b = a.block_size

    def worker(br):
        lo = br * b
        hi = min(lo + b, a.rows)
        seg = np.zeros(hi - lo)
        for bc in range(a.block_cols):
            blk = _tracked_read(a, br, bc)
            try:
                seg += blk @ x[bc * b:min(bc * b + blk.shape[1], a.cols)]
            finally:
                _drop(blk)
        y[lo:hi] = seg

    _run_block_jobs(list(range(a.block_rows)), worker, threads)
    return y


# -- recursive Schur-complement inversion -------------------------------------


def _leaf_spd_inverse(m, out, row_offset_blocks: int) -> None:
    """Invert a single-block SPD matrix with a dense Cholesky factorization."""
    block = _tracked_read(m, 0, 0)
    try:
        try:
            factor = sla.cho_factor(block, lower=True, check_finite=False)
            inv = sla.cho_solve(factor, np.eye(block.shape[0]), check_finite=False)
        except np.linalg.LinAlgError as exc:
            pivot = _failing_pivot(exc, row_offset_blocks * m.block_size)
            raise NumericalError(
                f"leaf block is not positive definite: {exc} "
                f"(global pivot {pivot})"
            ) from exc
        out.write_block(0, 0, inv)
    finally:
        _drop(block)


def _failing_pivot(exc: Exception, base: int) -> str:
    # LAPACK reports the failing leading minor as a 1-based order
    match = re.search(r"\d+", str(exc))
    if match:
        return str(base + int(match.group()))
    return f">= {base}"


def _temp_store(scratch: Path, rows: int, cols: int, block_size: int) -> BlockMatrixStore:
    path = Path(tempfile.mkdtemp(prefix="blk_", dir=scratch))
    return BlockMatrixStore.create(path, rows, cols, block_size)


def _invert_into(m, out, scratch: Path, threads: int | None,
                 row_offset_blocks: int) -> None:
    nb = m.block_rows
    if nb == 1:
        _leaf_spd_inverse(m, out, row_offset_blocks)
        return
    hb = (nb + 1) // 2  # split at the ceil-half block boundary
    tb = nb - hb
    bsz = m.block_size
    a = BlockView(m, 0, 0, hb, hb)
    b = BlockView(m, 0, hb, hb, tb)
    c = BlockView(m, hb, 0, tb, hb)
    d = BlockView(m, hb, hb, tb, tb)

    a_inv = _temp_store(scratch, a.rows, a.cols, bsz)
    _invert_into(a, a_inv, scratch, threads, row_offset_blocks)

    t1 = _temp_store(scratch, a.rows, b.cols, bsz)       # A^-1 B
    gemm(a_inv, b, t1, threads=threads)
    t2 = _temp_store(scratch, c.rows, a.cols, bsz)       # C A^-1
    gemm(c, a_inv, t2, threads=threads)

    q = _temp_store(scratch, d.rows, d.cols, bsz)        # D - C A^-1 B
    copy_into(d, q, threads=threads)
    gemm(c, t1, q, alpha=-1.0, beta=1.0, threads=threads)

    q_inv = _temp_store(scratch, q.rows, q.cols, bsz)
    _invert_into(q, q_inv, scratch, threads, row_offset_blocks + hb)
    q.delete()

    out11 = BlockView(out, 0, 0, hb, hb)
    out12 = BlockView(out, 0, hb, hb, tb)
    out21 = BlockView(out, hb, 0, tb, hb)
    out22 = BlockView(out, hb, hb, tb, tb)

    gemm(q_inv, t2, out21, alpha=-1.0, threads=threads)   # -Q^-1 C A^-1
    t2.delete()
    gemm(t1, q_inv, out12, alpha=-1.0, threads=threads)   # -A^-1 B Q^-1
    copy_into(q_inv, out22, threads=threads)
    q_inv.delete()
    # A^-1 + A^-1 B Q^-1 C A^-1  ==  A^-1 - T1 @ out21
    copy_into(a_inv, out11, threads=threads)
    a_inv.delete()
    gemm(t1, out21, out11, alpha=-1.0, beta=1.0, threads=threads)
    t1.delete()


def invert_recursive(m, path, scratch_dir=None, threads: int | None = None) -> BlockMatrixStore:
    """Invert a symmetric positive definite store via 2x2 block partitions.

    The matrix is split at the half-way block boundary into [A B; C D];
    A is inverted recursively, the Schur complement Q = D - C A^-1 B is
    formed and inverted recursively, and the four quadrants of the
    inverse are assembled from the blockwise inversion formula.  Each
    recursion level therefore reduces the problem to two inversions of
    quarter size plus out-of-core multiplications.  The recursion bottoms
    out at a single block, inverted in memory by a Cholesky
    factorization, which also certifies that the leaf is SPD.
    """
    if m.rows != m.cols:
        raise InvalidParameterError(f"matrix must be square, got {m.rows}x{m.cols}")
    out = BlockMatrixStore.create(path, m.rows, m.cols, m.block_size)
    own_scratch = scratch_dir is None
    scratch = Path(tempfile.mkdtemp(prefix="ooc_scratch_")) if own_scratch else Path(scratch_dir)
    scratch.mkdir(parents=True, exist_ok=True)
    try:
        _invert_into(m, out, scratch, threads, 0)
    finally:
        if own_scratch:
            shutil.rmtree(scratch, ignore_errors=True)
    out.flush()
    return out
