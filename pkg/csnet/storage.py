"""
Binary containers for named tensors (checkpoints) and datasets (caches).

Both formats are little-endian with a 4-byte magic and a format version:

    named tensors  CSNT | u16 version | u32 meta length | meta JSON
                   | u32 count | count × (u16 name length | name | u8 dtype
                   | u8 ndim | ndim × u32 extents | raw values)

    dataset        CSDS | u16 version | u32 name length | name | u8 dtype
                   | u8 ndim | ndim × u32 sample extents | u32 class count
                   | per class: i64 global id | u8 split | u16 source length
                   | source | u32 sample count | raw values

Round trips are bit-exact.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .episodes import SPLITS, ClassRecord, Dataset
from .errors import FormatError
from .logger import logger

TENSOR_MAGIC = b"CSNT"
DATASET_MAGIC = b"CSDS"
FORMAT_VERSION = 1

DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
DTYPE_CODES = {dt: code for code, dt in DTYPES.items()}


class _Reader:
    def __init__(self, data, what):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, size):
        if self.pos + size > len(self.data):
            raise FormatError(
                f"{self.what}: truncated at byte {self.pos} "
                f"(needed {size}, {len(self.data) - self.pos} left)"
            )
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, length_fmt):
        (length,) = self.unpack(length_fmt)
        return bytes(self.take(length)).decode("utf-8")

    def array(self, dtype, shape):
        count = int(np.prod(shape))
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _header(reader, magic):
    found = bytes(reader.take(4))
    if found != magic:
        raise FormatError(f"{reader.what}: bad magic {found!r}, expected {magic!r}")
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{reader.what}: format version {version} not supported "
            f"(expected {FORMAT_VERSION})"
        )


def _dtype_code(arr):
    key = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    for candidate, code in DTYPE_CODES.items():
        if candidate == key:
            return code, candidate
    raise FormatError(f"dtype {arr.dtype} cannot be stored")


def _pack_shape(shape):
    return struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def _read_shape(reader):
    (ndim,) = reader.unpack("<B")
    return reader.unpack(f"<{ndim}I") if ndim else ()


# --------------------------------------------------------------------------
# named tensors


def tensors_to_bytes(tensors, meta=None):
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [
        TENSOR_MAGIC,
        struct.pack("<HI", FORMAT_VERSION, len(meta_blob)),
        meta_blob,
        struct.pack("<I", len(tensors)),
    ]
    for name, value in tensors.items():
        arr = np.asarray(value)
        code, dtype = _dtype_code(arr)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", code) + _pack_shape(arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(parts)


def tensors_from_bytes(data, what="tensor container"):
    reader = _Reader(data, what)
    _header(reader, TENSOR_MAGIC)
    (meta_len,) = reader.unpack("<I")
    meta = json.loads(bytes(reader.take(meta_len)).decode("utf-8"))
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = reader.text("<H")
        (code,) = reader.unpack("<B")
        if code not in DTYPES:
            raise FormatError(f"{what}: unknown dtype code {code} for {name!r}")
        tensors[name] = reader.array(DTYPES[code], _read_shape(reader))
    return tensors, meta


def write_tensors(path, tensors, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(tensors_to_bytes(tensors, meta))
    return path


def read_tensors(path):
    path = Path(path)
    return tensors_from_bytes(path.read_bytes(), str(path))


# --------------------------------------------------------------------------
# datasets


def dataset_to_bytes(ds):
    dtype = np.dtype("<f8")
    if ds.classes:
        _, dtype = _dtype_code(np.asarray(ds.classes[0].samples))
    name = ds.name.encode("utf-8")
    parts = [
        DATASET_MAGIC,
        struct.pack("<HI", FORMAT_VERSION, len(name)),
        name,
        struct.pack("<B", DTYPE_CODES[dtype]) + _pack_shape(ds.sample_shape),
        struct.pack("<I", len(ds.classes)),
    ]
    for record in ds.classes:
        samples = np.ascontiguousarray(record.samples, dtype=dtype)
        source = record.source.encode("utf-8")
        parts.append(struct.pack("<qBH", record.global_id, SPLITS.index(record.split), len(source)))
        parts.append(source)
        parts.append(struct.pack("<I", len(samples)))
        parts.append(samples.tobytes())
    return b"".join(parts)


def dataset_from_bytes(data, what="dataset container"):
    reader = _Reader(data, what)
    _header(reader, DATASET_MAGIC)
    (name_len,) = reader.unpack("<I")
    name = bytes(reader.take(name_len)).decode("utf-8")
    (code,) = reader.unpack("<B")
    if code not in DTYPES:
        raise FormatError(f"{what}: unknown dtype code {code}")
    dtype = DTYPES[code]
    sample_shape = _read_shape(reader)
    (count,) = reader.unpack("<I")
    classes = []
    for _ in range(count):
        global_id, split, source_len = reader.unpack("<qBH")
        if split >= len(SPLITS):
            raise FormatError(f"{what}: class {global_id} has unknown split code {split}")
        source = bytes(reader.take(source_len)).decode("utf-8")
        (n,) = reader.unpack("<I")
        samples = reader.array(dtype, (n,) + tuple(sample_shape))
        classes.append(ClassRecord(global_id, samples, SPLITS[split], source))
    return Dataset(classes, sample_shape, name)


def save_dataset(ds, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dataset_to_bytes(ds))
    logger.info(f"dataset cache written: {path} ({len(ds)} classes)")
    return path


def load_dataset(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset cache not found: {path}")
    ds = dataset_from_bytes(path.read_bytes(), str(path))
    logger.info(f"dataset cache loaded: {path} ({len(ds)} classes)")
    return ds
