"""Bit-packed +-1 linear algebra.

Encoding: +1 <-> bit 1, -1 <-> bit 0, 64 elements per little-endian word with
element ``j`` of a row at bit ``j % 64`` of word ``j // 64``. For two rows of
length ``n``::

    dot(a, b) = 2 * popcount(XNOR(a, b) & valid) - n

Every kernel masks the final word of each row, so garbage in the tail bits
never changes a result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, im2col
from .errors import DimensionError

WORD_BITS = 64
_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)

# keep chunk temporaries around this many words
_CHUNK_WORDS = 1 << 21


def _words_for(cols: int) -> int:
    return max(1, -(-cols // WORD_BITS))


def tail_mask_for(cols: int) -> np.uint64:
    r = cols % WORD_BITS
    return _ALL_ONES if r == 0 else np.uint64((1 << r) - 1)


def _row_mask(cols: int) -> np.ndarray:
    mask = np.full(_words_for(cols), _ALL_ONES, dtype=np.uint64)
    mask[-1] = tail_mask_for(cols)
    if cols == 0:
        mask[:] = 0
    return mask


@dataclass(frozen=True, eq=False)
class PackedBitMatrix:
    """Row-major +-1 matrix packed into uint64 words."""

    rows: int
    cols: int
    storage: np.ndarray  # (rows, words_per_row) uint64

    @property
    def words_per_row(self) -> int:
        return self.storage.shape[1]

    @property
    def tail_mask(self) -> np.uint64:
        return tail_mask_for(self.cols)

    def row(self, i: int) -> np.ndarray:
        return self.storage[i]

    def bits(self) -> np.ndarray:
        """(rows, cols) array of 0/1."""
        as_bytes = self.storage.astype("<u8").view(np.uint8).reshape(self.rows, -1)
        return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, : self.cols]

    def unpack(self, dtype=np.float32) -> np.ndarray:
        """Back to a +-1 matrix."""
        return self.bits().astype(dtype) * 2 - 1

    def tail_clean(self) -> bool:
        return bool(np.all((self.storage[:, -1] & ~self.tail_mask) == 0)) if self.rows else True


def pack_signs(v) -> PackedBitMatrix:
    """Pack a real matrix by sign: bit 1 where v > 0, bit 0 where v <= 0."""
    if isinstance(v, Tensor):
        v = v.data
    v = np.asarray(v)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2:
        raise DimensionError(f"pack_signs expects a matrix, got shape {v.shape}")
    rows, cols = v.shape
    wpr = _words_for(cols)
    padded = np.zeros((rows, wpr * WORD_BITS), dtype=bool)
    padded[:, :cols] = v > 0
    packed = np.packbits(padded, axis=1, bitorder="little")
    storage = packed.view("<u8").astype(np.uint64, copy=False).reshape(rows, wpr)
    return PackedBitMatrix(rows, cols, np.ascontiguousarray(storage))


def xnor_popcount_dot(a, b, n: int) -> int:
    """Sum of a_i * b_i over the first ``n`` packed +-1 entries."""
    a = np.asarray(a, dtype=np.uint64).reshape(-1)
    b = np.asarray(b, dtype=np.uint64).reshape(-1)
    if a.shape != b.shape or a.size != _words_for(n):
        raise DimensionError(f"packed lengths disagree: {a.size} and {b.size} words for n={n}")
    same = ~(a ^ b) & _row_mask(n)
    return int(2 * int(np.bitwise_count(same).sum()) - n)


def binary_gemm(A: PackedBitMatrix, B: PackedBitMatrix) -> np.ndarray:
    """out[i, j] = +-1 dot of A row i with B row j (B holds the transposed operand)."""
    if A.cols != B.cols:
        raise DimensionError(f"inner dimensions differ: {A.cols} vs {B.cols}")
    n = A.cols
    out = np.empty((A.rows, B.rows), dtype=np.int64)
    if A.rows == 0 or B.rows == 0:
        return out
    mask = _row_mask(n)
    bw = B.storage
    step = max(1, _CHUNK_WORDS // max(1, B.rows * A.words_per_row))
    for start in range(0, A.rows, step):
        a = A.storage[start : start + step]
        same = ~(a[:, None, :] ^ bw[None, :, :]) & mask
        out[start : start + step] = 2 * np.bitwise_count(same).sum(axis=2, dtype=np.int64) - n
    return out


def float_gemm_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference: sign(a) @ sign(b).T in floating point."""
    sa = np.where(a > 0, 1.0, -1.0)
    sb = np.where(b > 0, 1.0, -1.0)
    return sa @ sb.T


def binary_conv2d(x, w, stride=1, padding=0, packed_weight: PackedBitMatrix | None = None) -> np.ndarray:
    """Convolution of sign(x) with sign(w) via patch rows + packed GEMM.

    The border is filled with -1. Returns real-valued counts shaped
    (N, O, OH, OW), before any scaling or normalisation.
    """
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    w = w.data if isinstance(w, Tensor) else np.asarray(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("binary_conv2d expects NCHW input and OIHW weight")
    o, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {c}")
    xs = np.where(x > 0, 1.0, -1.0).astype(np.float32)
    cols, oh, ow = im2col(xs, kh, kw, stride, padding, pad_value=-1.0)
    pw = packed_weight if packed_weight is not None else pack_signs(w.reshape(o, -1))
    counts = binary_gemm(pack_signs(cols), pw)
    dtype = x.dtype if x.dtype.kind == "f" else np.float32
    # contiguous so downstream reductions sum in the same order as the float path
    return np.ascontiguousarray(counts.reshape(x.shape[0], oh, ow, o).transpose(0, 3, 1, 2), dtype=dtype)


def float_conv_oracle(x: np.ndarray, w: np.ndarray, stride=1, padding=0) -> np.ndarray:
    """Direct nested-loop +-1 convolution with -1 border (independent of im2col)."""
    xs = np.where(x > 0, 1.0, -1.0)
    ws = np.where(w > 0, 1.0, -1.0)
    if padding:
        xs = np.pad(xs, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-1.0)
    n, c, h, wd = xs.shape
    o, _, kh, kw = ws.shape
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(kh):
        for j in range(kw):
            patch = xs[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
            out += np.einsum("nchw,oc->nohw", patch, ws[:, :, i, j])
    return out
