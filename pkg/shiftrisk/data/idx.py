"""Read and write IDX (MNIST-format) image/label file pairs."""
from __future__ import annotations

import gzip
import logging
from pathlib import Path
import struct

import numpy as np

from ..augment import clamp_unit
from ..cansample import NearestNeighbourOracle
from .dataset import Dataset

_LOGGER = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
PIXEL_SCALE = 255.0


class BadMagicError(ValueError):
    """Raised when an IDX file does not start with the expected magic number."""


class CountMismatchError(ValueError):
    """Raised when the image and label files hold different item counts."""


class TruncatedFileError(ValueError):
    """Raised when an IDX file ends before its header says it should."""


def _read_bytes(path: str | Path) -> bytes:
    """Return the contents of a plain or gzip-compressed file."""
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as handle:
            return handle.read()
    return path.read_bytes()


def parse_idx(data: bytes, magic: int, source: str = "<bytes>") -> tuple[tuple[int, ...], bytes]:
    """Return (dimensions, unsigned byte payload) of an IDX blob."""
    if len(data) < 4:
        raise TruncatedFileError(f"{source}: {len(data)} bytes, no magic number")
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise BadMagicError(f"{source}: magic 0x{found:08x}, expected 0x{magic:08x}")

    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedFileError(f"{source}: header needs {header} bytes, got {len(data)}")
    dims = struct.unpack_from(f">{ndim}I", data, 4)

    expected = int(np.prod(dims, dtype=np.int64))
    payload = data[header:]
    if len(payload) < expected:
        raise TruncatedFileError(f"{source}: payload has {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        _LOGGER.warning("%s: ignoring %d trailing bytes", source, len(payload) - expected)
    return dims, payload[:expected]


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    num_classes: int | None = None,
) -> Dataset:
    """Load an IDX image/label pair into a Dataset with pixels in [1e-6, 1]."""
    (count, rows, cols), pixels = parse_idx(_read_bytes(images_path), IMAGE_MAGIC, str(images_path))
    (label_count,), labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC, str(labels_path))
    if count != label_count:
        raise CountMismatchError(f"{count} images but {label_count} labels")

    x = clamp_unit(
        np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / PIXEL_SCALE
    )
    y = np.frombuffer(labels, dtype=np.uint8).astype(np.int64)
    if num_classes is None:
        num_classes = max(2, int(y.max(initial=0)) + 1)
    _LOGGER.info("Loaded %d images of %dx%d from %s", count, rows, cols, images_path)
    return Dataset(
        x,
        y,
        num_classes,
        NearestNeighbourOracle(x, y, num_classes),
        image_shape=(rows, cols),
        name=Path(images_path).name,
    )


def encode_idx(dataset: Dataset) -> tuple[bytes, bytes]:
    """Return the (images, labels) IDX byte strings of a dataset."""
    rows, cols = dataset.image_shape or (1, dataset.dim)
    if rows * cols != dataset.dim:
        raise ValueError(f"image shape {rows}x{cols} does not match dimension {dataset.dim}")
    pixels = np.clip(np.rint(dataset.x * PIXEL_SCALE), 0, 255).astype(np.uint8)
    images = struct.pack(">IIII", IMAGE_MAGIC, len(dataset), rows, cols) + pixels.tobytes()
    labels = struct.pack(">II", LABEL_MAGIC, len(dataset)) + dataset.y.astype(np.uint8).tobytes()
    return images, labels


def write_idx(dataset: Dataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Write a dataset as an uncompressed IDX image/label pair."""
    images, labels = encode_idx(dataset)
    Path(images_path).write_bytes(images)
    Path(labels_path).write_bytes(labels)
    _LOGGER.debug("Wrote %d items to %s and %s", len(dataset), images_path, labels_path)
