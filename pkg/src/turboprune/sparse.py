"""Block-structured sparse matrix format and its coordinate-format baseline.

Clustered masks compress well by recording each rectangular cluster once
(location plus size) instead of one coordinate pair per nonzero; multiplies
can then walk whole blocks and skip everything else. Extraction is greedy:
repeatedly take the largest all-ones rectangle with both sides >= min_side,
deterministic ties broken topmost, then leftmost, then wider.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from ._accel import kernels
from .errors import FormatError

TVBS_MAGIC = b"TVBS"
TVBS_VERSION = 1

INDEX_BYTES = 4  # cost model: 32-bit indices, 64-bit payload reals
REAL_BYTES = 8


@dataclass
class Block:
    r0: int
    c0: int
    h: int
    w: int
    payload: np.ndarray  # (h, w), row-major when serialized

    def __post_init__(self):
        self.payload = np.asarray(self.payload, dtype=float)
        if self.payload.shape != (self.h, self.w):
            raise FormatError(
                f"block payload shape {self.payload.shape} does not match {(self.h, self.w)}"
            )


@dataclass
class BlockSparseMatrix:
    dims: tuple[int, int]
    blocks: list[Block] = field(default_factory=list)
    res_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    res_cols: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    res_vals: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=float))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_residual(self) -> int:
        return int(self.res_rows.size)

    @property
    def payload_reals(self) -> int:
        return sum(b.h * b.w for b in self.blocks) + self.n_residual


@dataclass
class CooMatrix:
    dims: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.rows.size)


@dataclass(frozen=True)
class StorageCost:
    index_ints: int
    payload_reals: int

    @property
    def bytes_estimate(self) -> int:
        return INDEX_BYTES * self.index_ints + REAL_BYTES * self.payload_reals


def extract_blocks(mask: np.ndarray, min_side: int = 3):
    """Greedy cover of a binary mask by maximal rectangles.

    Returns (blocks, residual): blocks as (r0, c0, h, w) tuples in extraction
    order, residual as (rows, cols) arrays of leftover ones in row-major
    order. Rectangles below min_side on either side are never taken.
    """
    if min_side < 1:
        raise ValueError(f"min_side must be >= 1, got {min_side}")
    work = np.ascontiguousarray(np.asarray(mask) != 0, dtype=np.uint8)
    blocks = []
    while True:
        area, r0, c0, h, w = kernels.best_rectangle(work, min_side)
        if area == 0:
            break
        blocks.append((int(r0), int(c0), int(h), int(w)))
        work[r0 : r0 + h, c0 : c0 + w] = 0
    rows, cols = np.nonzero(work)
    return blocks, (rows.astype(np.int64), cols.astype(np.int64))


def encode(dense: np.ndarray, mask: np.ndarray, min_side: int = 3) -> BlockSparseMatrix:
    """Losslessly pack dense*mask: block payloads are copied verbatim, leftover
    nonzero positions go to the coordinate residual."""
    dense = np.asarray(dense, dtype=float)
    mask = np.asarray(mask)
    if dense.shape != mask.shape:
        raise FormatError(f"dense shape {dense.shape} does not match mask {mask.shape}")
    coords, (rows, cols) = extract_blocks(mask, min_side)
    blocks = [
        Block(r0, c0, h, w, dense[r0 : r0 + h, c0 : c0 + w].copy())
        for r0, c0, h, w in coords
    ]
    return BlockSparseMatrix(
        dims=dense.shape,
        blocks=blocks,
        res_rows=rows,
        res_cols=cols,
        res_vals=dense[rows, cols].copy(),
    )


def decode(bsm: BlockSparseMatrix) -> np.ndarray:
    out = np.zeros(bsm.dims)
    k, m = bsm.dims
    for b in bsm.blocks:
        if b.r0 < 0 or b.c0 < 0 or b.r0 + b.h > k or b.c0 + b.w > m:
            raise FormatError(f"block {(b.r0, b.c0, b.h, b.w)} out of bounds for {bsm.dims}")
        out[b.r0 : b.r0 + b.h, b.c0 : b.c0 + b.w] = b.payload
    if bsm.n_residual:
        if np.any(bsm.res_rows >= k) or np.any(bsm.res_cols >= m):
            raise FormatError("residual coordinate out of bounds")
        out[bsm.res_rows, bsm.res_cols] = bsm.res_vals
    return out


def coo_from_dense(dense: np.ndarray, mask: np.ndarray | None = None) -> CooMatrix:
    dense = np.asarray(dense, dtype=float)
    masked = dense * (np.asarray(mask) != 0) if mask is not None else dense
    rows, cols = np.nonzero(masked)
    return CooMatrix(
        dims=dense.shape,
        rows=rows.astype(np.int64),
        cols=cols.astype(np.int64),
        vals=masked[rows, cols].copy(),
    )


def storage_cost(obj) -> StorageCost:
    """Index-integer and payload-real counts under the declared cost model:
    COO spends two 32-bit indices per nonzero; the block format spends four
    per block plus two per residual entry."""
    if isinstance(obj, BlockSparseMatrix):
        return StorageCost(
            index_ints=4 * obj.n_blocks + 2 * obj.n_residual,
            payload_reals=obj.payload_reals,
        )
    if isinstance(obj, CooMatrix):
        return StorageCost(index_ints=2 * obj.nnz, payload_reals=obj.nnz)
    raise TypeError(f"no storage model for {type(obj).__name__}")


def _pack_for_kernel(bsm: BlockSparseMatrix):
    p = bsm.n_blocks
    meta = np.zeros((p, 4), dtype=np.int64)
    sizes = [b.h * b.w for b in bsm.blocks]
    offsets = np.zeros(p + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    payload = np.empty(int(offsets[-1]))
    for i, b in enumerate(bsm.blocks):
        meta[i] = (b.r0, b.c0, b.h, b.w)
        payload[offsets[i] : offsets[i + 1]] = b.payload.ravel()
    return meta, payload, offsets


def spmm(bsm: BlockSparseMatrix, x: np.ndarray) -> np.ndarray:
    """Multiply by a dense matrix touching only stored blocks and residuals."""
    x = np.ascontiguousarray(x, dtype=float)
    vector = x.ndim == 1
    if vector:
        x = x[:, None]
    k, m = bsm.dims
    if x.shape[0] != m:
        raise ValueError(f"inner dims mismatch: matrix is {bsm.dims}, x has {x.shape[0]} rows")
    meta, payload, offsets = _pack_for_kernel(bsm)
    y = kernels.block_spmm(k, meta, payload, offsets, bsm.res_rows, bsm.res_cols, bsm.res_vals, x)
    return y[:, 0] if vector else y


def coo_spmm(coo: CooMatrix, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape[0] != coo.dims[1]:
        raise ValueError(f"inner dims mismatch: matrix is {coo.dims}, x has {x.shape[0]} rows")
    return kernels.coo_spmm(coo.rows, coo.cols, coo.vals, x, coo.dims[0])


def transpose(bsm: BlockSparseMatrix) -> BlockSparseMatrix:
    return BlockSparseMatrix(
        dims=(bsm.dims[1], bsm.dims[0]),
        blocks=[Block(b.c0, b.r0, b.w, b.h, b.payload.T.copy()) for b in bsm.blocks],
        res_rows=bsm.res_cols.copy(),
        res_cols=bsm.res_rows.copy(),
        res_vals=bsm.res_vals.copy(),
    )


@dataclass(frozen=True)
class BenchRow:
    fmt: str
    wall_ns_median: int
    madds: int
    index_ints: int
    decode_steps: int


def bench(
    bsm: BlockSparseMatrix,
    coo: CooMatrix,
    dense: np.ndarray,
    x: np.ndarray,
    repeats: int = 5,
) -> list[BenchRow]:
    """Median wall time plus exact multiply-add and index counts for the
    dense, coordinate-traversal, and block-skipping multiplies."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    x = np.ascontiguousarray(x, dtype=float)
    n = x.shape[1]
    k, m = bsm.dims

    def timed(fn):
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            fn()
            samples.append(time.perf_counter_ns() - t0)
        return int(np.median(samples))

    meta, payload, offsets = _pack_for_kernel(bsm)
    rows = [
        BenchRow(
            fmt="dense",
            wall_ns_median=timed(lambda: dense @ x),
            madds=k * m * n,
            index_ints=0,
            decode_steps=0,
        ),
        BenchRow(
            fmt="coo",
            wall_ns_median=timed(lambda: kernels.coo_spmm(coo.rows, coo.cols, coo.vals, x, k)),
            madds=coo.nnz * n,
            index_ints=storage_cost(coo).index_ints,
            decode_steps=coo.nnz,
        ),
        BenchRow(
            fmt="block",
            wall_ns_median=timed(
                lambda: kernels.block_spmm(
                    k, meta, payload, offsets, bsm.res_rows, bsm.res_cols, bsm.res_vals, x
                )
            ),
            madds=bsm.payload_reals * n,
            index_ints=storage_cost(bsm).index_ints,
            decode_steps=bsm.n_blocks + bsm.n_residual,
        ),
    ]
    return rows


def save_tvbs(path, bsm: BlockSparseMatrix) -> None:
    """Container: magic TVBS, version u32, K u32, M u32, P u32, P block
    headers (r0, c0, h, w as u32), concatenated row-major block payloads as
    little-endian float64, residual count u32, then (r u32, c u32, value f64)
    triples."""
    with open(path, "wb") as fh:
        fh.write(TVBS_MAGIC)
        fh.write(struct.pack("<IIII", TVBS_VERSION, bsm.dims[0], bsm.dims[1], bsm.n_blocks))
        for b in bsm.blocks:
            fh.write(struct.pack("<IIII", b.r0, b.c0, b.h, b.w))
        for b in bsm.blocks:
            fh.write(np.ascontiguousarray(b.payload, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", bsm.n_residual))
        for r, c, v in zip(bsm.res_rows, bsm.res_cols, bsm.res_vals):
            fh.write(struct.pack("<IId", int(r), int(c), float(v)))


def _read_exact(fh, count, path):
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"{path}: truncated file")
    return buf


def load_tvbs(path) -> BlockSparseMatrix:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path) != TVBS_MAGIC:
            raise FormatError(f"{path}: bad magic, expected TVBS")
        version, k, m, p = struct.unpack("<IIII", _read_exact(fh, 16, path))
        if version != TVBS_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        headers = [struct.unpack("<IIII", _read_exact(fh, 16, path)) for _ in range(p)]
        blocks = []
        for r0, c0, h, w in headers:
            if h < 1 or w < 1 or r0 + h > k or c0 + w > m:
                raise FormatError(f"{path}: block {(r0, c0, h, w)} out of bounds for {(k, m)}")
            payload = np.frombuffer(_read_exact(fh, 8 * h * w, path), dtype="<f8").reshape(h, w)
            blocks.append(Block(r0, c0, h, w, payload.copy()))
        (n_res,) = struct.unpack("<I", _read_exact(fh, 4, path))
        rows = np.empty(n_res, dtype=np.int64)
        cols = np.empty(n_res, dtype=np.int64)
        vals = np.empty(n_res)
        for i in range(n_res):
            r, c, v = struct.unpack("<IId", _read_exact(fh, 16, path))
            if r >= k or c >= m:
                raise FormatError(f"{path}: residual ({r}, {c}) out of bounds for {(k, m)}")
            rows[i], cols[i], vals[i] = r, c, v
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return BlockSparseMatrix(dims=(k, m), blocks=blocks, res_rows=rows, res_cols=cols, res_vals=vals)
