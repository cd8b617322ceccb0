"""IHDS, the package's binary dataset container.

Layout (all integers little-endian):

    offset  size  field
    0       4     magic "IHDS"
    4       2     version (u16, currently 1)
    6       2     flags   (u16; bit0 = labels present, bit1 = images normalized)
    8       4     count   (u32, number of images)
    12      2     channels (u16)
    14      2     height   (u16)
    16      2     width    (u16)
    18      2     classes  (u16, 0 when labels absent)
    20      -     image payload: count * channels*height*width float32 LE
    -       -     label payload: count * classes float32 LE (only if bit0 set)

Writers refuse non-finite payloads; readers reject bad magic, version, or
inconsistent sizes (FormatError) and files shorter than their declared
payload (TruncatedFileError). Identical datasets serialize to identical
bytes, so files can be compared directly.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .core import Dataset, Image, LabelVector, one_hot
from .errors import FormatError, TruncatedFileError, ValidationError

MAGIC = b"IHDS"
VERSION = 1
_HEADER = struct.Struct("<4sHHIHHHH")

FLAG_LABELS = 1 << 0
FLAG_NORMALIZED = 1 << 1


def dataset_to_bytes(ds: Dataset) -> bytes:
    """Serialize a dataset; raises ValidationError before writing anything
    inconsistent."""
    c, h, w = ds.dims
    for dim, name in ((c, "channels"), (h, "height"), (w, "width")):
        if not 1 <= dim <= 0xFFFF:
            raise ValidationError(f"{name}={dim} does not fit the header")
    if ds.n > 0xFFFFFFFF:
        raise ValidationError("too many images for a u32 count")

    flags = 0
    classes = 0
    if ds.labels is not None:
        flags |= FLAG_LABELS
        classes = int(ds.classes or 0)
        if not 0 <= classes <= 0xFFFF:
            raise ValidationError(f"classes={classes} does not fit the header")
    if ds.images and all(im.normalized for im in ds.images):
        flags |= FLAG_NORMALIZED

    pixels = ds.matrix()
    if not np.all(np.isfinite(pixels)):
        raise ValidationError("refusing to write non-finite pixels")
    parts = [
        _HEADER.pack(MAGIC, VERSION, flags, ds.n, c, h, w, classes),
        np.ascontiguousarray(pixels, dtype="<f4").tobytes(),
    ]
    if ds.labels is not None:
        labels = ds.label_matrix()
        if not np.all(np.isfinite(labels)):
            raise ValidationError("refusing to write non-finite labels")
        parts.append(np.ascontiguousarray(labels, dtype="<f4").tobytes())
    return b"".join(parts)


def dataset_from_bytes(raw: bytes, name: str = "") -> Dataset:
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"file is {len(raw)} bytes, header needs {_HEADER.size}")
    magic, version, flags, count, c, h, w, classes = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if min(c, h, w) < 1:
        raise FormatError(f"non-positive dims ({c}, {h}, {w})")
    has_labels = bool(flags & FLAG_LABELS)
    normalized = bool(flags & FLAG_NORMALIZED)
    if has_labels and classes < 1 and count > 0:
        raise FormatError("label flag set but classes is 0")

    d = c * h * w
    need = _HEADER.size + 4 * count * d + (4 * count * classes if has_labels else 0)
    if len(raw) < need:
        raise TruncatedFileError(f"file is {len(raw)} bytes, payload needs {need}")
    if len(raw) > need:
        raise FormatError(f"{len(raw) - need} trailing bytes after payload")

    off = _HEADER.size
    pixels = np.frombuffer(raw, dtype="<f4", count=count * d, offset=off).reshape(count, d)
    off += 4 * count * d
    images = tuple(Image(row, (c, h, w), normalized=normalized) for row in pixels)
    labels = None
    if has_labels:
        lab = np.frombuffer(raw, dtype="<f4", count=count * classes, offset=off)
        labels = tuple(LabelVector(row) for row in lab.reshape(count, classes))
    return Dataset(
        images,
        labels,
        dims=(c, h, w),
        classes=classes if has_labels else None,
        name=name,
    )


def save_dataset(ds: Dataset, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(dataset_to_bytes(ds))
    return path


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    return dataset_from_bytes(path.read_bytes(), name=path.stem)


def import_raw(
    raw_path: str | Path,
    dims: tuple[int, int, int],
    labels_path: str | Path | None = None,
    classes: int | None = None,
    name: str = "",
) -> Dataset:
    """Build a Dataset from raw u8 RGB tensors plus an optional label CSV.

    The raw file is count * channels*height*width bytes, channel-major per
    image, row-major within a channel; pixels are scaled to [0, 1]. Each CSV
    row is either a single class index (requires ``classes``) or a full
    weight vector with one float per class.
    """
    dims = tuple(int(v) for v in dims)
    d = dims[0] * dims[1] * dims[2]
    raw = Path(raw_path).read_bytes()
    if d == 0 or len(raw) % d != 0:
        raise FormatError(f"raw size {len(raw)} is not a multiple of d={d}")
    count = len(raw) // d
    data = np.frombuffer(raw, dtype=np.uint8).reshape(count, d)
    images = tuple(Image(row.astype(np.float32) / 255.0, dims) for row in data)

    labels = None
    if labels_path is not None:
        rows = []
        with open(labels_path, newline="") as fh:
            for rec in csv.reader(fh):
                rec = [v for v in rec if v.strip() != ""]
                if not rec:
                    continue
                if len(rec) == 1:
                    if classes is None:
                        raise ValidationError(
                            "class-index labels need an explicit class count"
                        )
                    rows.append(one_hot(int(rec[0]), classes))
                else:
                    rows.append(LabelVector([float(v) for v in rec]))
        if len(rows) != count:
            raise ValidationError(f"{len(rows)} labels for {count} images")
        labels = tuple(rows)
    return Dataset(images, labels, dims=dims, name=name)
