"""
Binary tag files and atomic output writes.

Layout (all little-endian)::

    offset  size  field
    0       4     magic b"QTAG"
    4       4     u32 version (1)
    8       8     u64 record_count
    16      8     u64 duration_ps
    24      16*N  records: u64 timestamp_ps, u32 channel, u32 flags (0)

Records are sorted by timestamp.
"""

import os
import struct
import tempfile

import numpy as np

from .errors import BadMagicError, NonMonotoneError, TagFileError, TruncatedFileError, UnsupportedVersionError
from .streams import TagStream

MAGIC = b"QTAG"
VERSION = 1
HEADER = struct.Struct("<4sIQQ")
RECORD = np.dtype([("timestamp_ps", "<u8"), ("channel", "<u4"), ("flags", "<u4")])


def atomic_write(path, data) -> None:
    """Write bytes or text to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tags(stream: TagStream) -> bytes:
    records = np.zeros(len(stream), dtype=RECORD)
    records["timestamp_ps"] = stream.timestamps
    records["channel"] = stream.channels
    return HEADER.pack(MAGIC, VERSION, len(stream), stream.duration_ps) + records.tobytes()


def decode_tags(data: bytes) -> TagStream:
    if len(data) < HEADER.size:
        raise TruncatedFileError(f"file is {len(data)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, count, duration = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported tag file version {version}")
    body = len(data) - HEADER.size
    if body != count * RECORD.itemsize:
        raise TruncatedFileError(
            f"header declares {count} records but the file holds {body / RECORD.itemsize:g}"
        )
    records = np.frombuffer(data, dtype=RECORD, offset=HEADER.size, count=count)
    t = records["timestamp_ps"]
    if count > 1 and np.any(t[1:] < t[:-1]):
        raise NonMonotoneError("timestamps are not sorted")
    if count and (int(t[-1]) > duration or int(t[-1]) >= 2**63):
        raise TagFileError(f"timestamp {int(t[-1])} lies beyond duration_ps={duration}")
    return TagStream(t.astype(np.int64), records["channel"].copy(), duration)


def write_tags(path, stream: TagStream) -> None:
    atomic_write(path, encode_tags(stream))


def read_tags(path) -> TagStream:
    with open(path, "rb") as fh:
        return decode_tags(fh.read())
