"""Datasets, splits and file formats."""
from __future__ import annotations

from .dataset import Dataset, SplitSpec, split
from .idx import (
    BadMagicError,
    CountMismatchError,
    TruncatedFileError,
    encode_idx,
    load_idx,
    parse_idx,
    write_idx,
)
from .synthetic import (
    EmptyClassError,
    gen_blobs,
    gen_halfplane,
    gen_rings,
    longtail_counts,
    longtail_subsample,
)

__all__ = [
    "BadMagicError",
    "CountMismatchError",
    "Dataset",
    "EmptyClassError",
    "SplitSpec",
    "TruncatedFileError",
    "encode_idx",
    "gen_blobs",
    "gen_halfplane",
    "gen_rings",
    "load_idx",
    "longtail_counts",
    "longtail_subsample",
    "parse_idx",
    "split",
    "write_idx",
]
