"""
Embedding sets and their on-disk formats.

CAMF binary layout (all integers little-endian):

    offset  size     field
    0       4        magic b"CAMF"
    4       4        u32 format version (1)
    8       4        u32 N, number of samples
    12      4        u32 D, feature dimension
    16      1        u8 normalized flag (0 or 1)
    17      4*N*D    float32 features, row-major
    ...     4*N      u32 labels
    ...     4        u32 C, number of class names
    ...              C times: u32 byte length + UTF-8 bytes

CSV layout: header ``label,f0,...,f{D-1}``, one sample per row. Class names are not stored
and default to ``class_0 ... class_{C-1}``.
"""

import logging
import struct
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from covariance_fewshot.errors import (
    DataError,
    DimensionMismatchError,
    EmptyClassError,
    EmptyFileError,
    FormatError,
    LabelOutOfRangeError,
)

log = logging.getLogger(__name__)

MAGIC = b"CAMF"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIIB")
U32 = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """
    Labeled feature vectors.

    Attributes:
        features (NDArray): (N, D) float64 features.
        labels (NDArray): (N,) int64 labels in ``[0, C)``.
        class_names (tuple[str, ...]): C class names.
        normalized (bool): Whether every row has unit L2 norm.
    """

    features: NDArray[np.float64]
    labels: NDArray[np.int64]
    class_names: tuple[str, ...]
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise DimensionMismatchError(f"Features must be (N, D), got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionMismatchError(f"Expected {self.features.shape[0]} labels, got shape {self.labels.shape}")
        if not np.all(np.isfinite(self.features)):
            row, column = np.argwhere(~np.isfinite(self.features))[0]
            raise FormatError("Non-finite feature value", row=int(row), column=int(column))
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise LabelOutOfRangeError(f"Labels must lie in [0, {self.class_count})")

        counts = np.bincount(self.labels, minlength=self.class_count)
        empty = [self.class_names[c] for c in np.flatnonzero(counts == 0)]
        if empty:
            raise EmptyClassError(f"Classes without samples: {empty[:8]}")

        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, indices: ArrayLike) -> "EmbeddingSet":
        """
        Rows selected by index, sharing class names.

        :param indices: Row indices.
        :return: New EmbeddingSet.
        """
        index_array = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[index_array].copy(), labels=self.labels[index_array].copy())

    def same_as(self, other: "EmbeddingSet") -> bool:
        """Exact equality of features, labels, class names and the normalized flag."""
        return (
            self.class_names == other.class_names
            and self.normalized == other.normalized
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def make_embedding_set(
    features: ArrayLike,
    labels: ArrayLike,
    class_names: Sequence[str] | None = None,
    *,
    normalize: bool = False,
) -> EmbeddingSet:
    """
    Build a validated EmbeddingSet, optionally L2-normalizing every row.

    :param features: (N, D) features.
    :param labels: (N,) integer labels.
    :param class_names: Class names; defaults to ``class_<i>`` for ``max(label) + 1`` classes.
    :param normalize: L2-normalize the rows.
    :return: EmbeddingSet.
    """
    matrix = np.array(features, dtype=np.float64)
    label_array = np.array(labels, dtype=np.int64)
    if class_names is None:
        count = int(label_array.max()) + 1 if label_array.size else 0
        class_names = [f"class_{c}" for c in range(count)]

    if normalize:
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        zero_rows = np.flatnonzero(norms[:, 0] == 0)
        if zero_rows.size:
            raise FormatError("Cannot normalize a zero feature vector", row=int(zero_rows[0]))
        matrix = matrix / norms

    return EmbeddingSet(features=matrix, labels=label_array, class_names=tuple(class_names), normalized=normalize)


def _read_u32(payload: bytes, offset: int, what: str) -> tuple[int, int]:
    if offset + U32.size > len(payload):
        raise FormatError(f"Truncated file while reading {what}", offset=offset)
    return U32.unpack_from(payload, offset)[0], offset + U32.size


def _parse_camf(payload: bytes) -> tuple[NDArray[np.float64], NDArray[np.int64], list[str], bool]:
    if not payload:
        raise EmptyFileError("Embedding file is empty")
    if len(payload) < HEADER.size:
        raise FormatError("Truncated CAMF header", offset=len(payload))

    magic, version, n, dim, flag = HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise FormatError(f"Bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported CAMF version {version}", offset=4)
    if flag not in (0, 1):
        raise FormatError(f"Normalized flag must be 0 or 1, got {flag}", offset=16)
    if n == 0 or dim == 0:
        raise EmptyFileError(f"CAMF file holds no data (N={n}, D={dim})")

    offset = HEADER.size
    feature_bytes = 4 * n * dim
    if offset + feature_bytes + 4 * n > len(payload):
        raise FormatError("Truncated feature or label block", offset=len(payload))

    features = np.frombuffer(payload, dtype="<f4", count=n * dim, offset=offset).reshape(n, dim)
    bad = np.argwhere(~np.isfinite(features))
    if bad.size:
        row, column = (int(v) for v in bad[0])
        bad_offset = offset + 4 * (row * dim + column)
        raise FormatError("Non-finite feature value", offset=bad_offset, row=row, column=column)
    offset += feature_bytes

    labels = np.frombuffer(payload, dtype="<u4", count=n, offset=offset).astype(np.int64)
    offset += 4 * n

    class_count, offset = _read_u32(payload, offset, "class count")
    names = []
    for _ in range(class_count):
        length, offset = _read_u32(payload, offset, "class name length")
        if offset + length > len(payload):
            raise FormatError("Truncated class name", offset=offset)
        try:
            names.append(payload[offset : offset + length].decode("utf-8"))
        except UnicodeDecodeError as e:
            raise FormatError(f"Class name is not UTF-8: {e}", offset=offset) from e
        offset += length

    if offset != len(payload):
        raise FormatError(f"{len(payload) - offset} trailing bytes after class names", offset=offset)
    return features.astype(np.float64), labels, names, bool(flag)


def _parse_csv(path: Path) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError as e:
        raise EmptyFileError(f"CSV file is empty: {path}") from e
    except pd.errors.ParserError as e:
        raise FormatError(f"Malformed CSV: {e}") from e

    if frame.empty:
        raise EmptyFileError(f"CSV file has a header but no rows: {path}")
    expected = ["label"] + [f"f{i}" for i in range(frame.shape[1] - 1)]
    if list(frame.columns) != expected:
        found = ",".join(map(str, frame.columns[:3]))
        raise FormatError(f"CSV header must be {','.join(expected[:3])},...; got {found}")

    values = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, column = (int(v) for v in bad[0])
        raise FormatError("Non-finite or non-numeric feature value", row=row, column=column)

    labels = pd.to_numeric(frame["label"], errors="coerce")
    if labels.isna().any() or (labels % 1 != 0).any():
        raise FormatError("Labels must be integers", row=int(np.flatnonzero(labels.isna() | (labels % 1 != 0))[0]))
    return values, labels.to_numpy(dtype=np.int64)


def load_embeddings(path: str | Path, *, normalize: bool = True) -> EmbeddingSet:
    """
    Load an EmbeddingSet from a CAMF (``.camf``/``.bin``) or CSV (``.csv``) file.

    Rows of a file flagged as normalized are kept bit-exact; other files are L2-normalized
    when ``normalize`` is set.

    :param path: File path; the suffix selects the format.
    :param normalize: L2-normalize rows that are not already flagged as normalized.
    :return: Validated EmbeddingSet.
    :raises FormatError: On malformed content, including NaN/Inf values.
    :raises EmptyFileError: On empty files.
    :raises DataError: If the file does not exist.
    """
    file_path = Path(path)
    log.info(f"Loading embeddings path={file_path} normalize={normalize}")
    if not file_path.is_file():
        raise DataError(f"Embedding file not found: {file_path}")
    try:
        if file_path.suffix.lower() == ".csv":
            features, labels = _parse_csv(file_path)
            names = None
            already_normalized = False
        else:
            features, labels, names, already_normalized = _parse_camf(file_path.read_bytes())
    except (FormatError, EmptyFileError):
        log.exception(f"Loading embeddings FAILED path={file_path}")
        raise

    if already_normalized:
        embedding_set = EmbeddingSet(features=features, labels=labels, class_names=tuple(names or ()), normalized=True)
    else:
        embedding_set = make_embedding_set(features, labels, names, normalize=normalize)

    log.info(
        f"Loaded embeddings N={embedding_set.size} D={embedding_set.dimension} "
        f"C={embedding_set.class_count} normalized={embedding_set.normalized}"
    )
    return embedding_set


def save_embeddings(embedding_set: EmbeddingSet, path: str | Path) -> None:
    """
    Write an EmbeddingSet in CAMF format. Features are stored as float32.

    :param embedding_set: Set to write.
    :param path: Destination file.
    :return: None
    """
    file_path = Path(path)
    chunks = [
        HEADER.pack(
            MAGIC, FORMAT_VERSION, embedding_set.size, embedding_set.dimension, int(embedding_set.normalized)
        ),
        np.ascontiguousarray(embedding_set.features, dtype="<f4").tobytes(),
        np.ascontiguousarray(embedding_set.labels, dtype="<u4").tobytes(),
        U32.pack(embedding_set.class_count),
    ]
    for name in embedding_set.class_names:
        encoded = name.encode("utf-8")
        chunks.append(U32.pack(len(encoded)))
        chunks.append(encoded)

    file_path.write_bytes(b"".join(chunks))
    log.info(f"Saved CAMF embeddings path={file_path} N={embedding_set.size} D={embedding_set.dimension}")


def save_embeddings_csv(embedding_set: EmbeddingSet, path: str | Path) -> None:
    """
    Write an EmbeddingSet as CSV with header ``label,f0,...``. Class names are not stored.

    :param embedding_set: Set to write.
    :param path: Destination file.
    :return: None
    """
    frame = pd.DataFrame(embedding_set.features, columns=[f"f{i}" for i in range(embedding_set.dimension)])
    frame.insert(0, "label", embedding_set.labels)
    frame.to_csv(path, index=False)
    log.info(f"Saved CSV embeddings path={path} N={embedding_set.size} D={embedding_set.dimension}")
