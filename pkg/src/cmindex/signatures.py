"""Binary signatures attached to indexed features.

SIFT descriptors get a 64-bit signature: a seeded random orthonormal
projection to 64 components, each thresholded against the per-word median
of the training data (bit k set iff the component strictly exceeds the
threshold).  Color descriptors get a 22-bit signature straight from their
semantics: with th1 and th2 the second- and fifth-largest entries of the
descriptor f, dimension i contributes

    bit i      = 1  iff  f_i > th2
    bit 11 + i = 1  iff  f_i > th1

so the pair (b_i, b_{i+11}) can be (1,1), (1,0) or (0,0) but never (0,1).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook
from .errors import FormatError, TrainingError
from .features import CN_DIM, SIFT_DIM, validate_cn

SIFT_SIG_BITS = 64
CN_SIG_BITS = 22

HE_MAGIC = b"CMIH"

_POW64 = 1 << np.arange(SIFT_SIG_BITS, dtype=np.uint64)
_POW11 = 1 << np.arange(CN_DIM, dtype=np.uint32)


@dataclass
class HeModel:
    """Row-orthonormal projection plus per-word component medians."""

    projection: np.ndarray  # (64, 128)
    thresholds: np.ndarray  # (num_words, 64)
    seed: int = 0
    untrained_words: tuple[int, ...] = field(default=(), compare=False)

    @property
    def num_words(self) -> int:
        return self.thresholds.shape[0]


def random_orthonormal_projection(seed: int) -> np.ndarray:
    """First 64 rows of a seeded 128x128 random orthonormal matrix."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((SIFT_DIM, SIFT_DIM))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.T[:SIFT_SIG_BITS].copy()


def project_sift(desc: np.ndarray, model: HeModel) -> np.ndarray:
    # One descriptor at a time, so every caller sees bit-identical values.
    return model.projection @ np.asarray(desc, dtype=np.float64)


def train_he_model(samples, book: Codebook, seed: int) -> HeModel:
    """Fit per-word thresholds from (descriptor, word) pairs.

    Thresholds are component-wise medians (mean of the middle pair for an
    even count).  Words with no samples keep a zero threshold vector and
    are listed in `untrained_words`.
    """
    projection = random_orthonormal_projection(seed)
    per_word: dict[int, list[np.ndarray]] = {}
    for desc, word in samples:
        word = int(word)
        if not 0 <= word < book.size:
            raise TrainingError(f"word index {word} outside codebook of size {book.size}")
        per_word.setdefault(word, []).append(projection @ np.asarray(desc, dtype=np.float64))

    thresholds = np.zeros((book.size, SIFT_SIG_BITS))
    untrained = []
    for word in range(book.size):
        rows = per_word.get(word)
        if not rows:
            untrained.append(word)
            continue
        thresholds[word] = np.median(np.stack(rows), axis=0)
    return HeModel(
        projection=projection,
        thresholds=thresholds,
        seed=seed,
        untrained_words=tuple(untrained),
    )


def pack_bits64(bits: np.ndarray) -> int:
    return int(np.sum(bits.astype(np.uint64) * _POW64, dtype=np.uint64))


def sift_signature(desc, word: int, model: HeModel) -> int:
    """64-bit signature of `desc` under the thresholds of `word`."""
    if not 0 <= word < model.num_words:
        raise ValueError(f"word index {word} outside model with {model.num_words} words")
    return pack_bits64(project_sift(desc, model) > model.thresholds[word])


def cn_binarize(desc) -> int:
    """22-bit semantic signature of a color-name descriptor."""
    f = validate_cn(desc)
    g = np.sort(f)[::-1]
    th1, th2 = g[1], g[4]
    low = np.sum((f > th2) * _POW11, dtype=np.uint32)
    high = np.sum((f > th1) * _POW11, dtype=np.uint32)
    return int(low | (high << np.uint32(CN_DIM)))


def cn_binarize_batch(mat: np.ndarray) -> np.ndarray:
    """Vectorized `cn_binarize` over rows; comparisons are identical to the
    scalar form."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape[0] == 0:
        return np.zeros(0, dtype=np.uint32)
    g = np.sort(mat, axis=1)[:, ::-1]
    th1 = g[:, 1:2]
    th2 = g[:, 4:5]
    low = np.sum((mat > th2) * _POW11[None, :], axis=1, dtype=np.uint32)
    high = np.sum((mat > th1) * _POW11[None, :], axis=1, dtype=np.uint32)
    return low | (high << np.uint32(CN_DIM))


def hamming_distance(a: int, b: int, width: int) -> int:
    """Population count of xor over the low `width` bits."""
    if width not in (CN_SIG_BITS, SIFT_SIG_BITS):
        raise ValueError(f"width must be 22 or 64, got {width}")
    return ((int(a) ^ int(b)) & ((1 << width) - 1)).bit_count()


# HeModel file: magic "CMIH", seed u64, 64x128 float32 projection,
# word count u32, then 64 float32 thresholds per word.
_HE_HEADER = struct.Struct("<4sQ")


def save_he_model(model: HeModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HE_HEADER.pack(HE_MAGIC, model.seed))
        fh.write(model.projection.astype("<f4").tobytes())
        fh.write(struct.pack("<I", model.num_words))
        fh.write(model.thresholds.astype("<f4").tobytes())


def load_he_model(path) -> HeModel:
    with open(path, "rb") as fh:
        header = fh.read(_HE_HEADER.size)
        if len(header) != _HE_HEADER.size:
            raise FormatError("signature model file truncated")
        magic, seed = _HE_HEADER.unpack(header)
        if magic != HE_MAGIC:
            raise FormatError(f"bad signature model magic {magic!r}")
        proj_bytes = SIFT_SIG_BITS * SIFT_DIM * 4
        data = fh.read(proj_bytes + 4)
        if len(data) != proj_bytes + 4:
            raise FormatError("signature model file truncated")
        projection = (
            np.frombuffer(data[:proj_bytes], dtype="<f4").astype(np.float64).reshape(SIFT_SIG_BITS, SIFT_DIM)
        )
        (num_words,) = struct.unpack("<I", data[proj_bytes:])
        th_bytes = num_words * SIFT_SIG_BITS * 4
        data = fh.read(th_bytes)
        if len(data) != th_bytes:
            raise FormatError("signature model file truncated")
        thresholds = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(num_words, SIFT_SIG_BITS)
    return HeModel(projection=projection, thresholds=thresholds, seed=seed)
