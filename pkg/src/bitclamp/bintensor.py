"""Bit-packed +-1 tensors and exact XNOR/POPCOUNT linear algebra.

A BitTensor stores one bit per element (bit 1 encodes +1, bit 0 encodes -1),
row-major with the innermost dimension packed LSB-first into 64-bit words.
All padding bits beyond the valid length are kept at zero by every
constructor and operation, so two tensors of equal logical length XOR to
zero in their padding lanes and popcounts need no per-call masking.

Dot products over +-1 values reduce to bit arithmetic:

    dot(a, b) = n - 2 * popcount(a XOR b)

since each mismatching lane contributes -1 and each matching lane +1.
Convolution padding is handled by excluding padded positions from the
popcount via per-window validity masks (a literal 0 is unrepresentable in
one bit); this matches a zero-padded float convolution exactly, because an
excluded lane and a multiply-by-zero both contribute nothing.

Serialized form (little-endian, byte-exact):

    magic  b"BT64"
    u16    format version (1)
    u8     bit order (0 = LSB-first within each word)
    u8     reserved (0)
    u32    word size in bits (64)
    u32    ndim
    u64*ndim  logical dims
    u64*total words, row-major

Integer accumulators are int64 throughout, exact for any supported length.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

WORD_BITS = 64
_ROW_BLOCK = 4096  # bounds the (rows x cols) popcount temporaries


def _n_words(n: int) -> int:
    return -(-n // WORD_BITS)


def _tail_mask(n: int) -> np.ndarray:
    """Words with the first n bits set, remaining (padding) bits clear."""
    nw = _n_words(n)
    mask = np.full(nw, np.uint64(0xFFFFFFFFFFFFFFFF))
    rem = n % WORD_BITS
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


@dataclass
class BitTensor:
    """Packed +-1 tensor; treat instances as immutable."""

    shape: tuple[int, ...]
    words: np.ndarray  # uint64, shape (*shape[:-1], n_words(shape[-1]))
    tail_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        if not self.shape or any(d <= 0 for d in self.shape):
            raise ValueError(f"invalid shape {self.shape}")
        expected = self.shape[:-1] + (_n_words(self.shape[-1]),)
        if self.words.dtype != np.uint64 or self.words.shape != expected:
            raise ValueError(f"words must be uint64 of shape {expected}, got "
                             f"{self.words.dtype} {self.words.shape}")
        if self.tail_mask is None:
            self.tail_mask = _tail_mask(self.shape[-1])

    @property
    def n(self) -> int:
        """Valid bits along the packed (innermost) dimension."""
        return self.shape[-1]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def row_words(self) -> np.ndarray:
        """Words viewed as (rows, n_words) over all leading dims."""
        return self.words.reshape(-1, self.words.shape[-1])


def _pack_bool_rows(bits: np.ndarray) -> np.ndarray:
    """(rows, n) bool/0-1 array -> (rows, n_words) uint64, LSB-first."""
    packed = np.packbits(bits, axis=1, bitorder="little")
    nw = _n_words(bits.shape[1])
    if packed.shape[1] == nw * 8:
        return packed.view(np.uint64)
    padded = np.zeros((bits.shape[0], nw * 8), dtype=np.uint8)
    padded[:, : packed.shape[1]] = packed
    return padded.view(np.uint64)


def pack(signs) -> BitTensor:
    """Pack a tensor of exact +-1 values (any numeric dtype).

    Raises ValueError if any element is not exactly +1 or -1.
    """
    vals = np.asarray(signs)
    if vals.size == 0:
        raise ValueError("cannot pack an empty tensor")
    if not np.all(np.abs(vals) == 1):
        raise ValueError("pack requires every element to be exactly +1 or -1")
    flat = (vals > 0).reshape(-1, vals.shape[-1])
    words = _pack_bool_rows(flat).reshape(
        vals.shape[:-1] + (_n_words(vals.shape[-1]),))
    return BitTensor(shape=vals.shape, words=words)


def unpack(bt: BitTensor) -> np.ndarray:
    """Inverse of :func:`pack`; returns int8 values in {+1, -1}."""
    rows = bt.row_words()
    as_bytes = rows.view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")[:, : bt.n]
    return (bits.astype(np.int8) * 2 - 1).reshape(bt.shape)


def invert(bt: BitTensor) -> BitTensor:
    """Flip every valid bit (+1 <-> -1); padding stays zero."""
    words = np.bitwise_xor(bt.words, bt.tail_mask)
    return BitTensor(shape=bt.shape, words=words)


def transpose(bt: BitTensor) -> BitTensor:
    """Repack a 2-D BitTensor with its axes swapped."""
    if len(bt.shape) != 2:
        raise ValueError(f"transpose expects a 2-D BitTensor, got shape {bt.shape}")
    return pack(unpack(bt).T)


def xnor_dot(a: BitTensor, b: BitTensor) -> int:
    """Exact +-1 dot product of two 1-D BitTensors of equal length."""
    if len(a.shape) != 1 or len(b.shape) != 1:
        raise ValueError("xnor_dot expects 1-D BitTensors")
    if a.n != b.n:
        raise ValueError(f"length mismatch: {a.n} vs {b.n}")
    mismatches = int(np.bitwise_count(np.bitwise_xor(a.words, b.words)).sum())
    return a.n - 2 * mismatches


def _xnor_counts(a_words: np.ndarray, b_words: np.ndarray, n: int) -> np.ndarray:
    """int64 dot counts between every row of a_words and every row of b_words.

    Both sides must be packed with zero padding lanes; padding then never
    mismatches and needs no mask. Accumulates per word to keep temporaries
    at (rows x cols), not (rows x cols x words).
    """
    m = a_words.shape[0]
    out = np.empty((m, b_words.shape[0]), dtype=np.int64)
    for i0 in range(0, m, _ROW_BLOCK):
        blk = a_words[i0 : i0 + _ROW_BLOCK]
        mism = np.zeros((blk.shape[0], b_words.shape[0]), dtype=np.int64)
        for w in range(a_words.shape[1]):
            mism += np.bitwise_count(np.bitwise_xor(blk[:, w, None], b_words[None, :, w]))
        out[i0 : i0 + _ROW_BLOCK] = n - 2 * mism
    return out


def _invalid_lane_correction(lane_invalid: np.ndarray,
                             w_rows: np.ndarray) -> np.ndarray:
    """What to add so lanes marked invalid contribute zero to the dot.

    Invalid lanes are packed as bit 0 (-1), so a full-width count charges
    them -w each; adding sum(w over invalid lanes) cancels that exactly.
    The sums are small integers, exact in float64.
    """
    corr = lane_invalid.astype(np.float64) @ w_rows.T.astype(np.float64)
    return np.rint(corr).astype(np.int64)


def binary_gemm_counts(a: BitTensor, b: BitTensor) -> np.ndarray:
    """Pre-scale integer GEMM counts: C[i, j] = dot(row A_i, col B_j)."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ValueError("binary_gemm expects 2-D BitTensors")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimension mismatch: {a.shape} x {b.shape}")
    bt = transpose(b)  # columns of B become packed rows
    return _xnor_counts(a.row_words(), bt.row_words(), a.shape[1])


def binary_gemm(a: BitTensor, b: BitTensor, alpha: float) -> np.ndarray:
    """alpha-scaled +-1 matrix product; the integer accumulation is exact."""
    return alpha * binary_gemm_counts(a, b)


@dataclass(frozen=True)
class ConvGeometry:
    """Shapes and strides of one 2-D cross-correlation."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    padding: int
    input_h: int
    input_w: int

    def __post_init__(self):
        dims = (self.in_channels, self.out_channels, self.kernel_h,
                self.kernel_w, self.stride, self.input_h, self.input_w)
        if any(d <= 0 for d in dims) or self.padding < 0:
            raise ValueError(f"invalid geometry {self}")
        if self.out_h <= 0 or self.out_w <= 0:
            raise ValueError(f"geometry yields empty output: {self}")

    @property
    def out_h(self) -> int:
        return (self.input_h + 2 * self.padding - self.kernel_h) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.input_w + 2 * self.padding - self.kernel_w) // self.stride + 1

    @property
    def patch_len(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w


def _extract_patches(padded: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """(N, OH, OW, C, KH, KW) windows of a padded (N, C, H, W) array."""
    win = np.lib.stride_tricks.sliding_window_view(
        padded, (geom.kernel_h, geom.kernel_w), axis=(2, 3))
    win = win[:, :, :: geom.stride, :: geom.stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def conv_patch_matrix(x: np.ndarray, geom: ConvGeometry,
                      pad_value: float = 0.0) -> np.ndarray:
    """im2col: (N*OH*OW, C*KH*KW) patch rows, zero at padded positions."""
    n = x.shape[0]
    p = geom.padding
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=pad_value)
    patches = _extract_patches(x, geom)
    return np.ascontiguousarray(patches).reshape(n * geom.out_h * geom.out_w,
                                                 geom.patch_len)


def conv_valid_lane_mask(geom: ConvGeometry) -> np.ndarray:
    """(OH*OW, K) bool: which patch lanes sit inside the unpadded image.

    Depends only on the geometry, so callers can compute it once and
    reuse it for every batch.
    """
    ones = np.ones((1, geom.in_channels, geom.input_h, geom.input_w), np.float32)
    return conv_patch_matrix(ones, geom) > 0


def conv_counts_from_patches(patches_pm1: np.ndarray, w_rows: np.ndarray,
                             padded: bool,
                             mask_words: np.ndarray | None = None) -> np.ndarray:
    """Integer conv accumulators from +-1/0 patch rows and +-1 weight rows.

    patches use 0 to mark padded lanes; those lanes are excluded from the
    popcount, which is exactly how a float conv treats a zero times
    anything. w_rows is (OC, K) of +-1. ``mask_words`` may supply the
    packed validity lanes (one row per patch row) to skip recomputing
    them from the data.
    """
    bit_words = _pack_bool_rows(patches_pm1 > 0)
    w_words = _pack_bool_rows(np.asarray(w_rows) > 0)
    if not padded:
        return _xnor_counts(bit_words, w_words, patches_pm1.shape[1])
    if mask_words is None:
        mask_words = _pack_bool_rows(patches_pm1 != 0)
    return _masked_xnor_counts(bit_words, mask_words, w_words)


def binary_conv2d_counts(weights: BitTensor, x: BitTensor,
                         geom: ConvGeometry) -> np.ndarray:
    """Pre-scale integer accumulators of the binary cross-correlation."""
    if weights.shape != (geom.out_channels, geom.in_channels,
                         geom.kernel_h, geom.kernel_w):
        raise ValueError(f"weight shape {weights.shape} does not match {geom}")
    if len(x.shape) != 4 or x.shape[1:] != (geom.in_channels, geom.input_h,
                                            geom.input_w):
        raise ValueError(f"input shape {x.shape} does not match {geom}")
    w_rows = unpack(weights).reshape(geom.out_channels, geom.patch_len)
    patches = conv_patch_matrix(unpack(x).astype(np.float32), geom)
    counts = conv_counts_from_patches(patches, w_rows, padded=geom.padding > 0)
    n = x.shape[0]
    return counts.reshape(n, geom.out_h, geom.out_w,
                          geom.out_channels).transpose(0, 3, 1, 2)


def binary_conv2d(weights: BitTensor, x: BitTensor, alpha: float,
                  geom: ConvGeometry) -> np.ndarray:
    """alpha-scaled binary convolution, exact integers before the scale."""
    return alpha * binary_conv2d_counts(weights, x, geom)


# ---------------------------------------------------------------------------
# Naive float references: correctness oracles for the bit kernels and the
# baseline the benchmark times against. Deliberately unblocked and simple.

def naive_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-at-a-time multiply-accumulate float GEMM (no BLAS GEMM call)."""
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ValueError(f"inner dimension mismatch: {a.shape} x {b.shape}")
    out = np.empty((m, n), dtype=np.result_type(a.dtype, b.dtype))
    for i in range(m):
        out[i] = (a[i, :, None] * b).sum(axis=0)
    return out


def naive_conv2d(x: np.ndarray, weights: np.ndarray, stride: int = 1,
                 padding: int = 0) -> np.ndarray:
    """Textbook zero-padded cross-correlation, one inner product per output."""
    n, c, h, w_in = x.shape
    oc, c2, kh, kw = weights.shape
    if c != c2:
        raise ValueError(f"channel mismatch: input {c}, weights {c2}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w_in + 2 * padding - kw) // stride + 1
    w_mat = weights.reshape(oc, -1).astype(np.float64)
    out = np.empty((n, oc, oh, ow), dtype=np.float64)
    for img in range(n):
        for i in range(oh):
            for j in range(ow):
                patch = x[img, :, i * stride : i * stride + kh,
                          j * stride : j * stride + kw]
                out[img, :, i, j] = w_mat @ patch.reshape(-1).astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# Serialization

_MAGIC = b"BT64"
_HEADER = struct.Struct("<4sHBBII")


def to_bytes(bt: BitTensor) -> bytes:
    header = _HEADER.pack(_MAGIC, 1, 0, 0, WORD_BITS, len(bt.shape))
    dims = struct.pack(f"<{len(bt.shape)}Q", *bt.shape)
    words = np.ascontiguousarray(bt.words, dtype="<u8").tobytes()
    return header + dims + words


def from_bytes(buf: bytes) -> BitTensor:
    if len(buf) < _HEADER.size:
        raise ValueError(f"truncated header: {len(buf)} bytes at offset 0")
    magic, version, bit_order, _, word_bits, ndim = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r} at offset 0")
    if version != 1 or bit_order != 0 or word_bits != WORD_BITS:
        raise ValueError(f"unsupported format: version={version} "
                         f"bit_order={bit_order} word_bits={word_bits}")
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise ValueError(f"truncated dims at offset {off}")
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    lead = int(np.prod(shape[:-1], dtype=np.int64)) if ndim > 1 else 1
    n_words_total = lead * _n_words(shape[-1])
    if len(buf) != off + 8 * n_words_total:
        raise ValueError(f"word payload length mismatch at offset {off}: "
                         f"expected {8 * n_words_total}, got {len(buf) - off}")
    words = np.frombuffer(buf, dtype="<u8", offset=off).astype(np.uint64)
    words = words.reshape(tuple(shape[:-1]) + (_n_words(shape[-1]),))
    bt = BitTensor(shape=tuple(int(d) for d in shape), words=words)
    if np.any(np.bitwise_and(bt.row_words(), ~bt.tail_mask)):
        raise ValueError("padding bits are not zero (corrupt payload)")
    return bt
