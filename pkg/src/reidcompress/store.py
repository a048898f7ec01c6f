"""Int8 codec, compression-ratio accounting and the EMB1 binary store.

EMB1 layout (little-endian)::

    offset  size  field
    0       4     magic        b"EMB1"
    4       1     version      1
    5       1     dtype        0 = float32, 1 = int8
    6       1     has_labels   0 or 1
    7       1     reserved     0
    8       4     dim          uint32, >= 1
    12      8     count        uint64
    20      4     scale        float32, only when dtype = int8
    ...           payload      count * dim values, row-major
    ...           labels       count * uint32, only when has_labels = 1
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StoreFormatError

MAGIC = b"EMB1"
VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1
QMAX = 127

_HEAD = struct.Struct("<4sBBBBIQ")
_SCALE = struct.Struct("<f")


def round_half_away(x):
    """Round to nearest integer, ties away from zero (platform independent)."""
    x = np.asarray(x, dtype=np.float64)
    whole = np.trunc(x)
    frac = x - whole
    return whole + np.sign(x) * (np.abs(frac) >= 0.5)


@dataclass
class QuantizedStore:
    codes: np.ndarray  # int8, (rows, dim)
    scale: float
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int8)
        if self.codes.ndim != 2:
            raise ValueError("codes must be a 2-D array")
        self.scale = float(np.float32(self.scale))
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"scale must be finite and positive, got {self.scale}")
        if self.codes.size and np.abs(self.codes.astype(np.int16)).max() > QMAX:
            raise ValueError("codes must lie in [-127, 127]")
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def dim(self):
        return self.codes.shape[1]


def encode_codes(m, scale):
    """Codes for ``m`` on the grid of ``scale``, saturating at +-127."""
    scale = float(np.float32(scale))
    q = round_half_away(np.asarray(m, dtype=np.float64) / scale)
    return np.clip(q, -QMAX, QMAX).astype(np.int8)


def quantize_uniform(m, labels=None, scale=None):
    """Symmetric per-tensor int8 quantization.

    ``scale`` defaults to ``max|m| / 127`` (1.0 for an all-zero matrix). A
    scale passed in explicitly, e.g. one calibrated during training, is used
    as is and out-of-range values saturate.
    """
    m = np.asarray(m, dtype=np.float32)
    if m.size == 0:
        raise ValueError("cannot quantize an empty matrix")
    if m.ndim == 1:
        m = m[None, :]
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    if scale is None:
        peak = float(np.abs(m).max())
        scale = peak / QMAX if peak > 0 else 1.0
    scale = float(np.float32(scale))
    if labels is None:
        labels = np.zeros(0, dtype=np.int64)
    return QuantizedStore(encode_codes(m, scale), scale, labels)


def dequantize(q):
    return (q.codes.astype(np.float64) * q.scale).astype(np.float32)


@dataclass(frozen=True)
class SizeReport:
    original_bits: int
    compressed_bits: int

    @property
    def ratio(self):
        return self.original_bits / self.compressed_bits


def size_report(original_dim, original_bits, compressed_dim, compressed_bits):
    """Bits per embedding before and after compression, and their ratio."""
    for name, v in [("original_dim", original_dim), ("original_bits", original_bits),
                    ("compressed_dim", compressed_dim), ("compressed_bits", compressed_bits)]:
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")
    return SizeReport(int(original_dim) * int(original_bits),
                      int(compressed_dim) * int(compressed_bits))


def write_store(path, data, labels=None, dim=None):
    """Write a float matrix or a QuantizedStore; returns bytes written.

    ``dim`` is only needed for an empty float matrix given without a column
    count (e.g. ``np.zeros((0, 8))`` already carries one).
    """
    if isinstance(data, QuantizedStore):
        dtype = DTYPE_I8
        payload = np.ascontiguousarray(data.codes, dtype="<i1")
        if labels is None and data.labels.size:
            labels = data.labels
    else:
        dtype = DTYPE_F32
        payload = np.ascontiguousarray(np.asarray(data, dtype="<f4"))
    if payload.ndim != 2:
        raise ValueError("store payload must be 2-D")
    count, cols = payload.shape
    dim = cols if dim is None else dim
    if dim < 1 or (count and cols != dim):
        raise ValueError(f"invalid store dim {dim} for payload {payload.shape}")
    has_labels = labels is not None
    if has_labels:
        labels = np.asarray(labels)
        if labels.shape != (count,):
            raise ValueError(f"expected {count} labels, got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > 0xFFFFFFFF):
            raise ValueError("labels must fit in uint32")
    blob = bytearray(_HEAD.pack(MAGIC, VERSION, dtype, int(has_labels), 0, dim, count))
    if dtype == DTYPE_I8:
        blob += _SCALE.pack(data.scale)
    blob += payload.tobytes()
    if has_labels:
        blob += labels.astype("<u4").tobytes()
    path = Path(path)
    try:
        path.write_bytes(bytes(blob))
    except OSError as exc:
        raise OSError(f"cannot write store {path}: {exc}") from exc
    return len(blob)


def read_store(path):
    """Inverse of write_store.

    Returns ``(data, labels)`` where ``data`` is a float32 matrix or a
    QuantizedStore and ``labels`` is an int64 array or None.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise StoreFormatError("header", len(raw), "file shorter than header")
    magic, version, dtype, has_labels, _, dim, count = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise StoreFormatError("magic", 0, f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise StoreFormatError("version", 4, f"unsupported version {version}")
    if dtype not in (DTYPE_F32, DTYPE_I8):
        raise StoreFormatError("dtype", 5, f"unknown dtype code {dtype}")
    if has_labels not in (0, 1):
        raise StoreFormatError("label flag", 6, f"unexpected value {has_labels}")
    if dim < 1:
        raise StoreFormatError("dim", 8, "dim must be at least 1")
    pos = _HEAD.size
    scale = None
    if dtype == DTYPE_I8:
        if len(raw) < pos + _SCALE.size:
            raise StoreFormatError("scale", pos, "truncated")
        (scale,) = _SCALE.unpack_from(raw, pos)
        if not np.isfinite(scale) or scale <= 0:
            raise StoreFormatError("scale", pos, f"invalid scale {scale}")
        pos += _SCALE.size
    itemsize = 1 if dtype == DTYPE_I8 else 4
    nbytes = count * dim * itemsize
    if len(raw) < pos + nbytes:
        raise StoreFormatError("payload", pos,
                               f"need {nbytes} bytes, {len(raw) - pos} available")
    arr = np.frombuffer(raw, dtype="<i1" if dtype == DTYPE_I8 else "<f4",
                        count=count * dim, offset=pos).reshape(count, dim)
    pos += nbytes
    labels = None
    if has_labels:
        if len(raw) < pos + 4 * count:
            raise StoreFormatError("labels", pos, "truncated")
        labels = np.frombuffer(raw, dtype="<u4", count=count, offset=pos).astype(np.int64)
        pos += 4 * count
    if pos != len(raw):
        raise StoreFormatError("trailer", pos, f"{len(raw) - pos} unexpected bytes")
    if dtype == DTYPE_I8:
        if count and np.abs(arr.astype(np.int16)).max() > QMAX:
            raise StoreFormatError("payload", _HEAD.size + _SCALE.size, "code -128 not allowed")
        data = QuantizedStore(arr.copy(), scale,
                              labels if labels is not None else np.zeros(0, dtype=np.int64))
    else:
        data = arr.astype(np.float32)
    return data, labels
