"""Visual vocabularies: k-means training and (multiple) assignment.

Nearest-neighbor search is exhaustive.  Desk-scale vocabularies make that
affordable and keep quantization exactly reproducible; an approximate
search could be slotted in behind the same functions later.  All distance
computations in the package go through `sq_distances` so that every code
path quantizes identically.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidDescriptorError, TrainingError

# Vocabulary sizes: 20000 SIFT words at full scale, 1024 in the desk-scale
# test profile; 200 color words throughout.
FULL_SIFT_WORDS = 20000
DESK_SIFT_WORDS = 1024
DEFAULT_COLOR_WORDS = 200

CODEBOOK_MAGIC = b"CMIC"


class Family(enum.IntEnum):
    SIFT = 0
    COLOR = 1


@dataclass
class Codebook:
    family: Family
    centroids: np.ndarray  # (k, dim) float64
    objective_history: list[float] | None = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class Assignment:
    """Word ids sorted by squared distance, nearest first; ties go to the
    lowest id."""

    word_ids: np.ndarray
    distances: np.ndarray


def sq_distances(mat: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, rows of `mat` against all centroids.

    Uses the expansion |x|^2 - 2 x.c + |c|^2 and clamps the tiny negative
    values it can produce.
    """
    x2 = np.einsum("ij,ij->i", mat, mat)
    c2 = np.einsum("ij,ij->i", centroids, centroids)
    d = x2[:, None] - 2.0 * (mat @ centroids.T) + c2[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _check_dim(mat: np.ndarray, book: Codebook) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != book.dim:
        raise InvalidDescriptorError(
            f"descriptor dimension {mat.shape} does not match codebook dim {book.dim}"
        )
    return mat


def assign_nearest(mat: np.ndarray, book: Codebook) -> np.ndarray:
    """Nearest word id for each row of `mat`."""
    mat = _check_dim(mat, book)
    if mat.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmin(sq_distances(mat, book.centroids), axis=1)


def assign_multiple(mat: np.ndarray, book: Codebook, m: int) -> tuple[np.ndarray, np.ndarray]:
    """The `m` nearest word ids per row plus their squared distances."""
    mat = _check_dim(mat, book)
    if not 1 <= m <= book.size:
        raise ValueError(f"m must be in [1, {book.size}], got {m}")
    if mat.shape[0] == 0:
        return np.zeros((0, m), dtype=np.int64), np.zeros((0, m))
    d = sq_distances(mat, book.centroids)
    order = np.argsort(d, axis=1, kind="stable")[:, :m]
    return order, np.take_along_axis(d, order, axis=1)


def quantize_nearest(desc, book: Codebook) -> int:
    return int(assign_nearest(np.asarray(desc, dtype=np.float64)[None, :], book)[0])


def quantize_multiple(desc, book: Codebook, m: int) -> Assignment:
    ids, dists = assign_multiple(np.asarray(desc, dtype=np.float64)[None, :], book, m)
    return Assignment(word_ids=ids[0], distances=dists[0])


def train_kmeans(samples, k: int, iters: int, seed: int, family: Family = Family.SIFT) -> Codebook:
    """Lloyd's algorithm with deterministic seeding.

    Initial centroids are drawn without replacement from the distinct
    sample values; a cluster that empties is re-seeded from the sample
    currently farthest from its centroid.  The recorded objective (sum of
    squared distances at each assignment step) never increases.
    """
    mat = np.asarray(samples, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise TrainingError("samples must be a non-empty 2-D array")
    if k < 1 or iters < 1:
        raise TrainingError("k and iters must be positive")
    distinct = np.unique(mat, axis=0)
    if k > distinct.shape[0]:
        raise TrainingError(f"k={k} exceeds the {distinct.shape[0]} distinct samples")

    rng = np.random.default_rng(seed)
    centroids = distinct[rng.choice(distinct.shape[0], size=k, replace=False)].copy()

    n = mat.shape[0]
    history: list[float] = []
    prev_labels = None
    # Keep the per-chunk distance block around ~32 MB.
    chunk = max(1, int(4e6 / max(k, 1)))
    for _ in range(iters):
        labels = np.empty(n, dtype=np.int64)
        mindist = np.empty(n)
        for lo in range(0, n, chunk):
            d = sq_distances(mat[lo : lo + chunk], centroids)
            labels[lo : lo + chunk] = np.argmin(d, axis=1)
            mindist[lo : lo + chunk] = np.take_along_axis(
                d, labels[lo : lo + chunk, None], axis=1
            )[:, 0]
        history.append(float(mindist.sum()))
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels

        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, mat)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        for c in np.flatnonzero(~nonempty):
            far = int(np.argmax(mindist))
            centroids[c] = mat[far]
            mindist[far] = 0.0

    return Codebook(family=family, centroids=centroids, objective_history=history)


# Codebook file: magic "CMIC", family u8 (0=SIFT, 1=COLOR), k u32, dim u32,
# then k x dim float32, little-endian.
_CB_HEADER = struct.Struct("<4sBII")


def save_codebook(book: Codebook, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_CB_HEADER.pack(CODEBOOK_MAGIC, int(book.family), book.size, book.dim))
        fh.write(book.centroids.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        header = fh.read(_CB_HEADER.size)
        if len(header) != _CB_HEADER.size:
            raise FormatError("codebook file truncated")
        magic, family, k, dim = _CB_HEADER.unpack(header)
        if magic != CODEBOOK_MAGIC:
            raise FormatError(f"bad codebook magic {magic!r}")
        try:
            family = Family(family)
        except ValueError as exc:
            raise FormatError(f"unknown codebook family {family}") from exc
        data = fh.read(k * dim * 4)
        if len(data) != k * dim * 4:
            raise FormatError("codebook file truncated")
        centroids = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(k, dim)
    if not np.all(np.isfinite(centroids)):
        raise FormatError("codebook contains non-finite centroids")
    return Codebook(family=family, centroids=centroids)
