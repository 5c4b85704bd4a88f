"""DEMCKPT checkpoint container: streaming reader and writer.

File layout (all integers little-endian):

    bytes 0-7    magic ``DEMCKPT\\0``
    bytes 8-11   format version, u32 = 1
    bytes 12-19  header length in bytes, u64
    header       UTF-8 JSON: {"tensors": [...], "data_crc32": N, "kind": K}
    data         raw little-endian tensor payloads, row-major, concatenated
                 in index order with no padding

Each index entry is {"name", "dtype" ("f32"|"f64"), "shape", "offset",
"length"}; entries are sorted by name (byte-wise) and their payloads are
contiguous from offset 0. The writer right-justifies the checksum value in
a fixed 10-character field so the header can be emitted before the data
and patched afterwards; the CRC32 covers every header byte before the
checksum value plus the entire data section, so any corrupted byte in the
index or payload is detected (the few header bytes after the checksum are
pinned by structural validation).

Tensor names are sorted as Python strings; UTF-8 preserves code-point
order, so this equals a byte-wise sort of the encoded names.
"""

import io
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, FormatError, IntegrityError, IoError

MAGIC = b"DEMCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")

KIND_MODEL = "model"
KIND_DELTA = "delta"
_KINDS = (KIND_MODEL, KIND_DELTA)

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_OF_NUMPY = {np.dtype("<f4"): "f32", np.dtype("<f8"): "f64"}

_CRC_KEY = b'"data_crc32":'
_CRC_FIELD_WIDTH = 10  # max u32 is 4294967295, ten digits
_COPY_CHUNK = 8 * 1024 * 1024


@dataclass(frozen=True)
class TensorMeta:
    """Index entry for one stored tensor."""

    name: str
    dtype: str
    shape: tuple[int, ...]
    offset: int
    length: int

    @property
    def element_count(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n


def _element_count(shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


def _byte_view(arr):
    """Raw little-endian bytes of a C-contiguous array; safe for size 0."""
    if arr.size == 0:
        return memoryview(b"")
    return memoryview(arr).cast("B")


def _check_spec(name, dtype, shape):
    if not isinstance(name, str):
        raise FormatError(f"tensor name must be a string, got {type(name).__name__}")
    if dtype not in DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r} for tensor {name!r}")
    for d in shape:
        if not isinstance(d, int) or isinstance(d, bool) or d < 0:
            raise FormatError(f"invalid shape {shape!r} for tensor {name!r}")


def build_metas(specs) -> list[TensorMeta]:
    """Sorted, contiguous index from (name, dtype, shape) triples."""
    seen = set()
    for name, dtype, shape in specs:
        _check_spec(name, dtype, shape)
        if name in seen:
            raise FormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
    metas = []
    offset = 0
    for name, dtype, shape in sorted(specs, key=lambda s: s[0]):
        length = _element_count(shape) * DTYPES[dtype].itemsize
        metas.append(TensorMeta(name, dtype, tuple(shape), offset, length))
        offset += length
    return metas


class Checkpoint:
    """In-memory checkpoint: named float tensors plus a kind tag."""

    def __init__(self, kind: str = KIND_MODEL, tensors=None):
        if kind not in _KINDS:
            raise FormatError(f"kind must be one of {_KINDS}, got {kind!r}")
        self.kind = kind
        self._tensors: dict[str, np.ndarray] = {}
        if tensors:
            for name, arr in (tensors.items() if hasattr(tensors, "items")
                              else tensors):
                self.add(name, arr)

    def add(self, name: str, array) -> None:
        arr = np.asarray(array)
        if arr.dtype not in _DTYPE_OF_NUMPY:
            raise FormatError(
                f"tensor {name!r} has dtype {arr.dtype}; only float32 and "
                "float64 are storable")
        _check_spec(name, _DTYPE_OF_NUMPY[arr.dtype], arr.shape)
        if name in self._tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        self._tensors[name] = arr

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def spec(self, name: str) -> tuple[str, tuple[int, ...]]:
        arr = self._tensors[name]
        return _DTYPE_OF_NUMPY[arr.dtype], arr.shape

    def get(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.kind == other.kind
                and self.names() == other.names()
                and all(self.spec(n) == other.spec(n) for n in self.names())
                and all(np.array_equal(self.get(n), other.get(n))
                        for n in self.names()))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        """Eagerly read a whole DEMCKPT file into memory."""
        with open_checkpoint(path) as reader:
            ckpt = cls(reader.kind)
            for name in reader.names():
                ckpt.add(name, reader.get(name))
        return ckpt


def _serialize_header(metas, kind) -> tuple[bytes, int]:
    """Header bytes with a zero-filled checksum slot, plus the slot offset."""
    entries = [{"name": m.name, "dtype": m.dtype, "shape": list(m.shape),
                "offset": m.offset, "length": m.length} for m in metas]
    head = ('{"tensors":'
            + json.dumps(entries, separators=(",", ":"), ensure_ascii=False)
            + ',"data_crc32":')
    tail = ',"kind":"' + kind + '"}'
    head_b = head.encode("utf-8")
    header = head_b + b"0".rjust(_CRC_FIELD_WIDTH) + tail.encode("utf-8")
    return header, len(head_b)


class CheckpointWriter:
    """Streams tensors into a DEMCKPT file in canonical name order.

    All tensor specs are declared up front; payloads are then supplied one
    tensor at a time via :meth:`add` (or :meth:`add_raw`) in index order.
    The file is written to a temporary sibling and atomically renamed on
    close, so readers never observe a partial file.
    """

    def __init__(self, path, kind: str, specs):
        if kind not in _KINDS:
            raise FormatError(f"kind must be one of {_KINDS}, got {kind!r}")
        self.path = Path(path)
        self.kind = kind
        self.metas = build_metas(list(specs))
        self._next = 0
        self._closed = False
        header, crc_slot = _serialize_header(self.metas, kind)
        self._crc_pos = _PREFIX.size + crc_slot
        try:
            fd, tmp = tempfile.mkstemp(prefix=self.path.name + ".",
                                       suffix=".tmp", dir=self.path.parent)
        except OSError as exc:
            raise IoError(f"cannot create {self.path}: {exc}") from exc
        self._tmp = tmp
        self._file = os.fdopen(fd, "wb")
        try:
            self._file.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
            self._file.write(header)
        except OSError as exc:
            self.abort()
            raise IoError(f"write failed for {self.path}: {exc}") from exc
        # Checksum covers the header up to the checksum value, then the data.
        self._crc = zlib.crc32(header[:crc_slot])

    def _expect(self, name):
        if self._closed:
            raise FormatError("writer is closed")
        if self._next >= len(self.metas):
            raise FormatError(f"unexpected extra tensor {name!r}")
        meta = self.metas[self._next]
        if name != meta.name:
            raise FormatError(
                f"tensors must be written in index order: expected "
                f"{meta.name!r}, got {name!r}")
        return meta

    def add(self, name: str, array) -> None:
        """Write the payload for the next declared tensor."""
        meta = self._expect(name)
        # np.ascontiguousarray would promote 0-d scalars to shape (1,).
        arr = np.asarray(array, dtype=DTYPES[meta.dtype])
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.shape != meta.shape:
            raise FormatError(
                f"tensor {name!r}: declared shape {meta.shape}, got {arr.shape}")
        self._write_payload(_byte_view(arr), meta)

    def add_raw(self, name: str, chunks) -> None:
        """Write the next tensor from an iterable of raw little-endian bytes."""
        meta = self._expect(name)
        written = 0
        try:
            for chunk in chunks:
                # Streaming bound: callers hand over bounded chunks, never
                # more than one whole tensor at once.
                assert len(chunk) <= max(_COPY_CHUNK, meta.length)
                written += len(chunk)
                if written > meta.length:
                    raise FormatError(
                        f"tensor {name!r}: payload exceeds declared length")
                self._crc = zlib.crc32(chunk, self._crc)
                self._file.write(chunk)
        except OSError as exc:
            self.abort()
            raise IoError(f"write failed for {self.path}: {exc}") from exc
        if written != meta.length:
            raise FormatError(
                f"tensor {name!r}: wrote {written} bytes, declared {meta.length}")
        self._next += 1

    def _write_payload(self, view, meta) -> None:
        if len(view) != meta.length:
            raise FormatError(
                f"tensor {meta.name!r}: payload is {len(view)} bytes, "
                f"declared {meta.length}")
        try:
            for start in range(0, len(view), _COPY_CHUNK):
                chunk = view[start:start + _COPY_CHUNK]
                self._crc = zlib.crc32(chunk, self._crc)
                self._file.write(chunk)
        except OSError as exc:
            self.abort()
            raise IoError(f"write failed for {self.path}: {exc}") from exc
        self._next += 1

    def close(self) -> None:
        """Patch the checksum, flush, and atomically move into place."""
        if self._closed:
            return
        if self._next != len(self.metas):
            missing = self.metas[self._next].name
            self.abort()
            raise FormatError(f"missing payload for tensor {missing!r}")
        self._closed = True
        try:
            self._file.seek(self._crc_pos)
            self._file.write(str(self._crc).rjust(_CRC_FIELD_WIDTH).encode("ascii"))
            self._file.flush()
            os.fsync(self._file.fileno())
            self._file.close()
            os.replace(self._tmp, self.path)
        except OSError as exc:
            self.abort()
            raise IoError(f"write failed for {self.path}: {exc}") from exc

    def abort(self) -> None:
        """Drop the temporary file without touching the destination."""
        self._closed = True
        try:
            self._file.close()
        finally:
            if os.path.exists(self._tmp):
                os.unlink(self._tmp)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self.abort()


def write_checkpoint(source, path) -> None:
    """Write any checkpoint-like source (in-memory or reader) to a file.

    Streams one tensor at a time; for file-backed sources the copy runs in
    bounded chunks, so peak memory never exceeds one tensor.
    """
    specs = [(n, *source.spec(n)) for n in source.names()]
    with CheckpointWriter(path, source.kind, specs) as writer:
        raw = getattr(source, "iter_tensor_bytes", None)
        for name in source.names():
            if raw is not None:
                writer.add_raw(name, raw(name))
            else:
                writer.add(name, source.get(name))


class CheckpointReader:
    """Lazy handle over a DEMCKPT file.

    Tensors are read individually with positioned reads, so a handle is
    safe to share across threads and only touched tensors are resident.
    """

    def __init__(self, path, verify: bool = True):
        self.path = Path(path)
        try:
            self._file = open(self.path, "rb")
        except OSError as exc:
            raise IoError(f"cannot open {self.path}: {exc}") from exc
        try:
            self._parse(verify)
        except Exception:
            self._file.close()
            raise

    def _parse(self, verify) -> None:
        try:
            size = os.fstat(self._file.fileno()).st_size
            prefix = self._file.read(_PREFIX.size)
        except OSError as exc:
            raise IoError(f"cannot read {self.path}: {exc}") from exc
        if len(prefix) < _PREFIX.size:
            raise FormatError("file too short for DEMCKPT prefix")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        if _PREFIX.size + header_len > size:
            raise FormatError("declared header length exceeds file size")
        header = self._file.read(header_len)
        if len(header) != header_len:
            raise FormatError("truncated header")
        try:
            doc = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"header is not valid UTF-8 JSON: {exc}") from exc
        self._validate_header(doc)
        self._data_start = _PREFIX.size + header_len
        total = self._metas[-1].offset + self._metas[-1].length if self._metas else 0
        if self._data_start + total != size:
            raise FormatError(
                f"data section is {size - self._data_start} bytes, "
                f"index declares {total}")
        self._data_length = total
        crc_slot = header.find(_CRC_KEY)
        if crc_slot < 0:
            raise FormatError("header is missing the data_crc32 field")
        self._crc_prefix = header[:crc_slot + len(_CRC_KEY)]
        if verify:
            self.verify()

    def _validate_header(self, doc) -> None:
        if not isinstance(doc, dict) or set(doc) != {"tensors", "data_crc32", "kind"}:
            raise FormatError("header must have exactly the fields "
                              "tensors, data_crc32, kind")
        if doc["kind"] not in _KINDS:
            raise FormatError(f"invalid kind {doc['kind']!r}")
        crc = doc["data_crc32"]
        if not isinstance(crc, int) or isinstance(crc, bool) or not 0 <= crc < 2**32:
            raise FormatError(f"invalid data_crc32 {crc!r}")
        if not isinstance(doc["tensors"], list):
            raise FormatError("tensors index must be a list")
        metas = []
        offset = 0
        prev_name = None
        for entry in doc["tensors"]:
            if (not isinstance(entry, dict)
                    or set(entry) != {"name", "dtype", "shape", "offset", "length"}):
                raise FormatError(f"malformed index entry: {entry!r}")
            name, dtype, shape = entry["name"], entry["dtype"], entry["shape"]
            if not isinstance(shape, list):
                raise FormatError(f"tensor {name!r}: shape must be a list")
            _check_spec(name, dtype, shape)
            if prev_name is not None and not prev_name < name:
                raise FormatError(
                    f"index not sorted by name: {prev_name!r} before {name!r}")
            prev_name = name
            for field in ("offset", "length"):
                v = entry[field]
                if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                    raise FormatError(f"tensor {name!r}: invalid {field} {v!r}")
            expected = _element_count(shape) * DTYPES[dtype].itemsize
            if entry["length"] != expected:
                raise FormatError(
                    f"tensor {name!r}: length {entry['length']} does not match "
                    f"shape/dtype ({expected})")
            if entry["offset"] != offset:
                raise FormatError(
                    f"tensor {name!r}: offset {entry['offset']} leaves a gap "
                    f"or overlap (expected {offset})")
            offset += entry["length"]
            metas.append(TensorMeta(name, dtype, tuple(shape),
                                    entry["offset"], entry["length"]))
        self.kind = doc["kind"]
        self._declared_crc = crc
        self._metas = metas
        self._by_name = {m.name: m for m in metas}

    def verify(self) -> None:
        """Stream the checksummed region and compare against the header."""
        crc = zlib.crc32(self._crc_prefix)
        pos = self._data_start
        remaining = self._data_length
        while remaining > 0:
            chunk = self._pread(pos, min(_COPY_CHUNK, remaining))
            crc = zlib.crc32(chunk, crc)
            pos += len(chunk)
            remaining -= len(chunk)
        if crc != self._declared_crc:
            raise IntegrityError(
                f"checksum mismatch: header declares {self._declared_crc}, "
                f"content gives {crc}")

    def _pread(self, pos: int, n: int) -> bytes:
        try:
            data = os.pread(self._file.fileno(), n, pos)
        except OSError as exc:
            raise IoError(f"cannot read {self.path}: {exc}") from exc
        if len(data) != n:
            raise FormatError("unexpected end of file")
        return data

    def names(self) -> list[str]:
        return [m.name for m in self._metas]

    def meta(self, name: str) -> TensorMeta:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"no tensor named {name!r} in {self.path}") from None

    def spec(self, name: str) -> tuple[str, tuple[int, ...]]:
        m = self.meta(name)
        return m.dtype, m.shape

    def get(self, name: str) -> np.ndarray:
        """Read one tensor; the returned array is read-only."""
        m = self.meta(name)
        buf = self._pread(self._data_start + m.offset, m.length)
        return np.frombuffer(buf, dtype=DTYPES[m.dtype]).reshape(m.shape)

    def iter_tensor_bytes(self, name: str, chunk_size: int = _COPY_CHUNK):
        """Yield one tensor's payload as bounded raw chunks."""
        m = self.meta(name)
        pos = self._data_start + m.offset
        remaining = m.length
        while remaining > 0:
            n = min(chunk_size, remaining)
            yield self._pread(pos, n)
            pos += n
            remaining -= n

    def __contains__(self, name) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._metas)

    def close(self) -> None:
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def open_checkpoint(path, verify: bool = True) -> CheckpointReader:
    """Open a DEMCKPT file for lazy per-tensor reads.

    With verify=True (the default) the checksummed region is streamed once
    and a mismatch raises IntegrityError.
    """
    return CheckpointReader(path, verify=verify)


def write_checkpoint_bytes(source) -> bytes:
    """Serialize a checkpoint-like source to bytes (small inputs only)."""
    buf = io.BytesIO()
    specs = [(n, *source.spec(n)) for n in source.names()]
    metas = build_metas(specs)
    header, crc_slot = _serialize_header(metas, source.kind)
    crc = zlib.crc32(header[:crc_slot])
    payloads = []
    for m in metas:
        arr = np.asarray(source.get(m.name), dtype=DTYPES[m.dtype])
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        view = _byte_view(arr)
        crc = zlib.crc32(view, crc)
        payloads.append(view)
    header = (header[:crc_slot]
              + str(crc).rjust(_CRC_FIELD_WIDTH).encode("ascii")
              + header[crc_slot + _CRC_FIELD_WIDTH:])
    buf.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
    buf.write(header)
    for view in payloads:
        buf.write(view)
    return buf.getvalue()


def ensure_open(source, stack):
    """Resolve a checkpoint argument: paths are opened onto the ExitStack,
    already-open handles and in-memory checkpoints pass through."""
    if isinstance(source, (str, os.PathLike)):
        return stack.enter_context(open_checkpoint(source))
    return source


def check_compatibility(a, b) -> None:
    """Raise CompatibilityError unless a and b share identical tensor specs.

    Compatibility means equal (name, dtype, shape) triples as sets; shapes
    must match exactly, not merely by element count.
    """
    names_a, names_b = set(a.names()), set(b.names())
    problems = []
    mismatched = []
    for name in sorted(names_a - names_b):
        problems.append(f"missing from second: {name!r}")
        mismatched.append(name)
    for name in sorted(names_b - names_a):
        problems.append(f"missing from first: {name!r}")
        mismatched.append(name)
    for name in sorted(names_a & names_b):
        if a.spec(name) != b.spec(name):
            problems.append(
                f"{name!r}: {a.spec(name)} vs {b.spec(name)}")
            mismatched.append(name)
    if problems:
        raise CompatibilityError(
            "incompatible checkpoints: " + "; ".join(problems), mismatched)
