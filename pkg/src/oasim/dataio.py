"""Single-file dataset container with per-record compression, and splits.

Layout (little-endian)::

    b"OADX" | u16 version (=1) | u32 header_len | header (UTF-8 JSON) | records

The header is ``{"datasets": [...], "metadata": {str: str}}``. Each dataset
entry holds ``name, dtype, shape, compression, record_offsets,
record_nbytes, record_crc32``; offsets are absolute file positions and the
CRC32 covers the stored (possibly compressed) bytes. A record is one slice
``x[i]`` of a dataset of shape ``(N, ...)`` in row-major order, stored raw or
as a raw DEFLATE stream. Output contains no timestamps, so identical input
gives identical bytes.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"OADX"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")

DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1"), "i64": np.dtype("<i8")}
COMPRESSIONS = ("none", "deflate")
_LEVEL = 6


class ContainerError(ValueError):
    """Malformed container or inconsistent dataset description."""


class CorruptRecordError(IOError):
    """Stored bytes of a record fail their checksum."""


def dtype_code(dtype) -> str:
    dt = np.dtype(dtype)
    dt = dt.newbyteorder("<") if dt.byteorder == ">" else dt
    for code, ref in DTYPES.items():
        if dt == ref:
            return code
    raise ContainerError(f"unsupported dtype {dtype}; use one of float32, uint8, int64")


def _deflate(raw: bytes) -> bytes:
    c = zlib.compressobj(_LEVEL, zlib.DEFLATED, -15)
    return c.compress(raw) + c.flush()


def _inflate(data: bytes) -> bytes:
    return zlib.decompress(data, -15)


class _DatasetSpool:
    def __init__(self, name, dtype, record_shape, compression):
        if compression not in COMPRESSIONS:
            raise ContainerError(f"unknown compression {compression!r}")
        self.name = name
        self.code = dtype_code(dtype)
        self.dtype = DTYPES[self.code]
        self.record_shape = tuple(int(s) for s in record_shape)
        self.compression = compression
        self.file = tempfile.TemporaryFile()
        self.size = 0
        self.offsets, self.nbytes, self.crcs = [], [], []

    def append(self, rec) -> None:
        rec = np.asarray(rec)
        if rec.shape != self.record_shape:
            raise ContainerError(f"{self.name}: record shape {rec.shape} != {self.record_shape}")
        if rec.dtype.kind != self.dtype.kind or rec.dtype.itemsize != self.dtype.itemsize:
            raise ContainerError(f"{self.name}: record dtype {rec.dtype} != {self.dtype}")
        raw = np.ascontiguousarray(rec, dtype=self.dtype).tobytes()
        blob = _deflate(raw) if self.compression == "deflate" else raw
        self.offsets.append(self.size)
        self.nbytes.append(len(blob))
        self.crcs.append(zlib.crc32(blob))
        self.file.write(blob)
        self.size += len(blob)


class ContainerWriter:
    """Collects datasets record by record, then writes header + records.

    Each dataset is compressed into its own spool file as records arrive,
    so several datasets can be filled in lockstep without holding them in
    memory. Datasets are laid out contiguously in the order they were added.
    """

    def __init__(self, path, metadata: Mapping[str, str] | None = None):
        self.path = os.fspath(path)
        self.metadata = dict(metadata or {})
        for k, v in self.metadata.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ContainerError(f"metadata must map str to str, got {k!r}: {v!r}")
        self._spools: list[_DatasetSpool] = []

    def create(self, name: str, dtype, record_shape, compression: str = "deflate") -> _DatasetSpool:
        """Register a dataset; call ``.append(record)`` on the result."""
        if any(s.name == name for s in self._spools):
            raise ContainerError(f"duplicate dataset name {name!r}")
        spool = _DatasetSpool(name, dtype, record_shape, compression)
        self._spools.append(spool)
        return spool

    def add(self, name: str, records: Iterable[np.ndarray], dtype, record_shape,
            compression: str = "deflate") -> None:
        spool = self.create(name, dtype, record_shape, compression)
        for rec in records:
            spool.append(rec)

    def add_array(self, name: str, array: np.ndarray, compression: str = "deflate") -> None:
        array = np.asarray(array)
        if array.ndim < 1:
            raise ContainerError(f"{name}: datasets need a leading record axis")
        self.add(name, iter(array), array.dtype, array.shape[1:], compression)

    def _header(self, data_start: int) -> bytes:
        datasets = []
        base = data_start
        for s in self._spools:
            datasets.append({
                "name": s.name,
                "dtype": s.code,
                "shape": [len(s.offsets), *s.record_shape],
                "compression": s.compression,
                "record_offsets": [base + o for o in s.offsets],
                "record_nbytes": s.nbytes,
                "record_crc32": s.crcs,
            })
            base += s.size
        doc = {"datasets": datasets, "metadata": self.metadata}
        return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")

    def close(self) -> None:
        # header length depends on the offsets it contains; iterate to the fixed point
        length = len(self._header(0))
        while True:
            header = self._header(_PREFIX.size + length)
            if len(header) == length:
                break
            length = len(header)
        try:
            with open(self.path, "wb") as fh:
                fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
                fh.write(header)
                for s in self._spools:
                    s.file.seek(0)
                    while chunk := s.file.read(1 << 22):
                        fh.write(chunk)
                fh.flush()
                os.fsync(fh.fileno())
        finally:
            self._discard()

    def _discard(self) -> None:
        for s in self._spools:
            s.file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._discard()


def write_container(path, datasets: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None,
                    compression: str | Mapping[str, str] = "deflate") -> None:
    """Write named arrays (each of shape ``(N, ...)``) to ``path``."""
    with ContainerWriter(path, metadata) as w:
        for name, arr in datasets.items():
            comp = compression if isinstance(compression, str) else compression.get(name, "deflate")
            w.add_array(name, arr, comp)


@dataclass
class DatasetInfo:
    name: str
    dtype: np.dtype
    shape: tuple
    compression: str
    offsets: list = field(repr=False)
    nbytes: list = field(repr=False)
    crc32: list = field(repr=False)

    def __len__(self):
        return self.shape[0]


class ContainerReader:
    """Random-access reader.

    ``bytes_read`` and ``records_decoded`` count I/O done after the header
    was parsed, so callers can verify that a lookup touched one record only.
    """

    def __init__(self, path):
        self.path = os.fspath(path)
        self._fh = open(self.path, "rb")
        prefix = self._fh.read(_PREFIX.size)
        if len(prefix) != _PREFIX.size:
            raise ContainerError(f"{self.path}: truncated prefix")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise ContainerError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise ContainerError(f"{self.path}: unsupported version {version}")
        raw = self._fh.read(header_len)
        if len(raw) != header_len:
            raise ContainerError(f"{self.path}: truncated header")
        doc = json.loads(raw.decode("utf-8"))
        self.metadata: dict[str, str] = doc.get("metadata", {})
        self.datasets: dict[str, DatasetInfo] = {}
        for e in doc["datasets"]:
            self.datasets[e["name"]] = DatasetInfo(
                e["name"], DTYPES[e["dtype"]], tuple(e["shape"]), e["compression"],
                e["record_offsets"], e["record_nbytes"], e["record_crc32"])
        self.bytes_read = 0
        self.records_decoded = 0

    def __contains__(self, name):
        return name in self.datasets

    def names(self) -> list[str]:
        return list(self.datasets)

    def info(self, name: str) -> DatasetInfo:
        try:
            return self.datasets[name]
        except KeyError:
            raise KeyError(f"{self.path}: no dataset {name!r}; have {self.names()}") from None

    def read_record(self, name: str, index: int) -> np.ndarray:
        info = self.info(name)
        n = info.shape[0]
        if not 0 <= index < n:
            raise IndexError(f"{name}: index {index} out of range 0..{n - 1}")
        self._fh.seek(info.offsets[index])
        blob = self._fh.read(info.nbytes[index])
        self.bytes_read += len(blob)
        if len(blob) != info.nbytes[index] or zlib.crc32(blob) != info.crc32[index]:
            raise CorruptRecordError(f"{self.path}: {name}[{index}] failed its checksum")
        raw = _inflate(blob) if info.compression == "deflate" else blob
        self.records_decoded += 1
        return np.frombuffer(raw, dtype=info.dtype).reshape(info.shape[1:]).copy()

    def read_dataset(self, name: str) -> np.ndarray:
        info = self.info(name)
        out = np.empty(info.shape, dtype=info.dtype)
        for i in range(info.shape[0]):
            out[i] = self.read_record(name, i)
        return out

    def iter_records(self, name: str):
        for i in range(self.info(name).shape[0]):
            yield self.read_record(name, i)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_record(path, dataset: str, index: int) -> np.ndarray:
    with ContainerReader(path) as r:
        return r.read_record(dataset, index)


def read_container(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with ContainerReader(path) as r:
        return {name: r.read_dataset(name) for name in r.names()}, dict(r.metadata)


# --------------------------------------------------------------------------
# splits

MSFD_IDS = {"train": [2, 5, 6, 7, 9], "val": [10], "test": [11, 14, 15]}
SWFD_IDS = {"train": [1, 2, 3, 4, 5, 6, 7, 8], "val": [9], "test": [10, 11, 12, 13, 14]}
# (train, val) shares in percent; test takes the rest
_FRACTIONS = {"scd": (70, 5), "mini": (75, 5)}
SPLIT_KINDS = ("msfd", "swfd", "scd", "mini")


@dataclass(frozen=True)
class SplitSpec:
    kind: str
    train: tuple
    val: tuple
    test: tuple

    def to_dict(self) -> dict:
        return {"kind": self.kind, "train": list(self.train), "val": list(self.val), "test": list(self.test)}


def make_split(kind: str, population) -> SplitSpec:
    """Standard train/val/test partition.

    ``msfd``/``swfd`` take the volunteer IDs (or their count) and return ID
    sets; ``scd``/``mini`` take a sample count and return index ranges.
    """
    kind = kind.lower()
    if kind in ("msfd", "swfd"):
        ids = MSFD_IDS if kind == "msfd" else SWFD_IDS
        expected = sorted(ids["train"] + ids["val"] + ids["test"])
        if isinstance(population, (int, np.integer)):
            ok = population == len(expected)
        else:
            ok = sorted(int(p) for p in population) == expected
        if not ok:
            raise ValueError(f"{kind} population must be the volunteers {expected}, got {population}")
        return SplitSpec(kind, tuple(ids["train"]), tuple(ids["val"]), tuple(ids["test"]))
    if kind in _FRACTIONS:
        if not isinstance(population, (int, np.integer)) or population < 0:
            raise ValueError(f"{kind} population must be a sample count, got {population}")
        n = int(population)
        tr, va = _FRACTIONS[kind]
        n_train = n * tr // 100
        n_val = n * va // 100
        return SplitSpec(kind, tuple(range(n_train)), tuple(range(n_train, n_train + n_val)),
                         tuple(range(n_train + n_val, n)))
    raise ValueError(f"unknown split kind {kind!r}; expected one of {SPLIT_KINDS}")
