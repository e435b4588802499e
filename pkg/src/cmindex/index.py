"""Inverted indexes: the 2-D coupled index and the 1-D baseline.

A database feature is quantized once (nearest word on each axis) and its
posting lands in exactly one entry, so the entries of the 2-D index
partition each SIFT word's postings across the color words.  Entries are
stored sparsely; inverse document frequency is the plain ratio
N / n_ij (no logarithm) and image norms are l2 norms of the
term-frequency histogram over entries.  Both index kinds freeze after
building: queries only ever read.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook, assign_nearest
from .errors import (
    FormatError,
    FrozenIndexError,
    IngestionError,
    UndefinedEntryError,
    ZeroFeatureError,
)
from .features import ImageRecord
from .signatures import HeModel, cn_binarize_batch, pack_bits64, project_sift

INDEX_MAGIC = b"CMIX"
INDEX_VERSION = 1
FLAG_SIFT_SIG = 0x01
FLAG_CN_SIG = 0x02


class MemoryProfile(enum.Enum):
    BASELINE = "baseline"
    CMI = "cmi"
    HE = "he"
    CMI_HE = "cmi_he"


# Logical per-feature cost in quarter bytes: image id u32 always; +8 bytes
# for the 64-bit SIFT signature; +22 bits (2.75 bytes) for the color one.
_QUARTER_BYTES = {
    MemoryProfile.BASELINE: 16,
    MemoryProfile.CMI: 27,
    MemoryProfile.HE: 48,
    MemoryProfile.CMI_HE: 59,
}


@dataclass(frozen=True)
class Posting:
    image_id: int
    sift_sig: int | None = None
    cn_sig: int | None = None


@dataclass
class PostingList:
    ids: np.ndarray  # uint32, sorted
    sift: np.ndarray | None  # uint64
    cn: np.ndarray | None  # uint32
    slots: np.ndarray  # indices into the norm table, derived

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def posting(self, idx: int) -> Posting:
        return Posting(
            image_id=int(self.ids[idx]),
            sift_sig=None if self.sift is None else int(self.sift[idx]),
            cn_sig=None if self.cn is None else int(self.cn[idx]),
        )


class _InvertedIndex:
    """Shared machinery; keys are (i, j) pairs or bare SIFT words."""

    def __init__(self, has_sift_sig: bool, has_cn_sig: bool):
        self.entries: dict = {}
        self.n_images = 0
        self.pair_counts: dict = {}
        self.image_ids = np.zeros(0, dtype=np.uint32)
        self.norms = np.zeros(0)
        self.has_sift_sig = has_sift_sig
        self.has_cn_sig = has_cn_sig
        self.frozen = False
        self._pending: dict = {}
        self._norm_sq: dict[int, int] = {}
        self._seen: set[int] = set()

    def add_image(self, image_id: int, keys: list, sift_sigs=None, cn_sigs=None) -> None:
        """Record one image's postings; `keys` holds one entry key per feature."""
        if self.frozen:
            raise FrozenIndexError("index is frozen")
        image_id = int(image_id)
        if image_id in self._seen:
            raise IngestionError(f"duplicate image_id {image_id}")
        if not 0 <= image_id < 2**32:
            raise IngestionError(f"image_id {image_id} does not fit in 32 bits")
        self._seen.add(image_id)
        self.n_images += 1
        if not keys:
            return
        hist: dict = {}
        for f, key in enumerate(keys):
            ids, ssigs, csigs = self._pending.setdefault(key, ([], [], []))
            ids.append(image_id)
            if self.has_sift_sig:
                ssigs.append(int(sift_sigs[f]))
            if self.has_cn_sig:
                csigs.append(int(cn_sigs[f]))
            hist[key] = hist.get(key, 0) + 1
        for key, count in hist.items():
            self.pair_counts[key] = self.pair_counts.get(key, 0) + 1
        self._norm_sq[image_id] = sum(c * c for c in hist.values())

    def freeze(self) -> None:
        if self.frozen:
            return
        self.image_ids = np.array(sorted(self._norm_sq), dtype=np.uint32)
        self.norms = np.sqrt(
            np.array([self._norm_sq[i] for i in self.image_ids], dtype=np.float64)
        )
        for key, (ids, ssigs, csigs) in self._pending.items():
            ids = np.array(ids, dtype=np.uint32)
            order = np.argsort(ids, kind="stable")
            entry = PostingList(
                ids=ids[order],
                sift=np.array(ssigs, dtype=np.uint64)[order] if self.has_sift_sig else None,
                cn=np.array(csigs, dtype=np.uint32)[order] if self.has_cn_sig else None,
                slots=np.searchsorted(self.image_ids, ids[order]),
            )
            for arr in (entry.ids, entry.sift, entry.cn, entry.slots):
                if arr is not None:
                    arr.setflags(write=False)
            self.entries[key] = entry
        self._pending = {}
        self.frozen = True

    def norm_of(self, image_id: int) -> float:
        slot = int(np.searchsorted(self.image_ids, image_id))
        if slot >= len(self.image_ids) or self.image_ids[slot] != image_id:
            raise ZeroFeatureError(f"image {image_id} has no indexed features")
        return float(self.norms[slot])

    def total_features(self) -> int:
        return sum(len(e) for e in self.entries.values())


class MultiIndex(_InvertedIndex):
    """K_s x K_c grid of posting lists, stored sparsely."""

    def __init__(self, k_s: int, k_c: int, has_sift_sig: bool):
        super().__init__(has_sift_sig=has_sift_sig, has_cn_sig=True)
        self.k_s = k_s
        self.k_c = k_c

    def idf(self, i: int, j: int) -> float:
        n_ij = self.pair_counts.get((i, j), 0)
        if n_ij == 0:
            raise UndefinedEntryError(f"no image contains word pair ({i}, {j})")
        return self.n_images / n_ij


class BaselineIndex(_InvertedIndex):
    """Conventional 1-D index over SIFT words only."""

    def __init__(self, k_s: int, has_sift_sig: bool):
        super().__init__(has_sift_sig=has_sift_sig, has_cn_sig=False)
        self.k_s = k_s

    def idf(self, i: int) -> float:
        n_i = self.pair_counts.get(i, 0)
        if n_i == 0:
            raise UndefinedEntryError(f"no image contains word {i}")
        return self.n_images / n_i


def idf(index: MultiIndex, i: int, j: int) -> float:
    """N / n_ij for entry (i, j); undefined when no image holds the pair."""
    return index.idf(i, j)


def image_norm(hist) -> float:
    """l2 norm of a sparse TF histogram {entry key: count}."""
    counts = list(hist.values() if hasattr(hist, "values") else hist)
    if not counts:
        raise ZeroFeatureError("histogram is empty")
    if any(c < 1 for c in counts):
        raise ValueError("TF counts must be >= 1")
    return math.sqrt(sum(int(c) * int(c) for c in counts))


def _image_signatures(rec: ImageRecord, words: np.ndarray, he: HeModel) -> list[int]:
    sigs = []
    for f, feat in enumerate(rec.features):
        proj = project_sift(feat.sift, he)
        sigs.append(pack_bits64(proj > he.thresholds[int(words[f])]))
    return sigs


def build_multi_index(
    corpus: list[ImageRecord],
    books: tuple[Codebook, Codebook],
    he: HeModel | None = None,
) -> MultiIndex:
    """Quantize every feature tuple to its nearest word pair and pack the
    postings, IDF counts and norm table; the index is frozen on return."""
    sift_book, color_book = books
    index = MultiIndex(k_s=sift_book.size, k_c=color_book.size, has_sift_sig=he is not None)
    for rec in corpus:
        words_s = assign_nearest(rec.sift_matrix, sift_book)
        words_c = assign_nearest(rec.color_matrix, color_book)
        cn_sigs = cn_binarize_batch(rec.color_matrix)
        sift_sigs = _image_signatures(rec, words_s, he) if he is not None else None
        keys = [(int(i), int(j)) for i, j in zip(words_s, words_c)]
        index.add_image(rec.image_id, keys, sift_sigs, cn_sigs)
    index.freeze()
    return index


def build_baseline_index(
    corpus: list[ImageRecord],
    sift_book: Codebook,
    he: HeModel | None = None,
) -> BaselineIndex:
    index = BaselineIndex(k_s=sift_book.size, has_sift_sig=he is not None)
    for rec in corpus:
        words_s = assign_nearest(rec.sift_matrix, sift_book)
        sift_sigs = _image_signatures(rec, words_s, he) if he is not None else None
        index.add_image(rec.image_id, [int(i) for i in words_s], sift_sigs, None)
    index.freeze()
    return index


def default_profile(index: _InvertedIndex) -> MemoryProfile:
    if index.has_cn_sig:
        return MemoryProfile.CMI_HE if index.has_sift_sig else MemoryProfile.CMI
    return MemoryProfile.HE if index.has_sift_sig else MemoryProfile.BASELINE


def memory_footprint(index: _InvertedIndex, profile: MemoryProfile) -> tuple[float, int]:
    """Logical (bytes per feature, total bytes) for a storage profile.

    Per-feature costs: 4 for the image id, +8 with SIFT signatures, +2.75
    with color signatures.  A fractional total rounds up to whole bytes.
    The entry directory is excluded; see `directory_overhead`.
    """
    if not index.frozen:
        raise FrozenIndexError("memory accounting requires a frozen index")
    quarters = _QUARTER_BYTES[profile]
    n = index.total_features()
    return quarters / 4.0, (n * quarters + 3) // 4


def directory_overhead(index: _InvertedIndex) -> int:
    """Bytes for the entry directory itself (key pair + count per entry)."""
    return 12 * len(index.entries)


# ---------------------------------------------------------------------------
# Persistence.  Little-endian: magic "CMIX", version u16, flags u8 (bit 0 =
# SIFT signatures present, bit 1 = color signatures present), N u32, entry
# count u64; per entry i u32, j u32 (0 for the baseline), posting count u32,
# then per posting image_id u32 [, sift signature u64] [, color signature
# u32]; finally the norm table as count u32 then (image_id u32, norm f64)
# pairs.  Entries and norms are written in sorted order so identical
# indexes serialize to identical bytes.
# ---------------------------------------------------------------------------

_IDX_HEADER = struct.Struct("<4sHBIQ")
_ENTRY_HEADER = struct.Struct("<III")


def save_index(index: _InvertedIndex, path) -> None:
    if not index.frozen:
        raise FrozenIndexError("only frozen indexes can be saved")
    flags = (FLAG_SIFT_SIG if index.has_sift_sig else 0) | (
        FLAG_CN_SIG if index.has_cn_sig else 0
    )
    two_d = isinstance(index, MultiIndex)
    with open(path, "wb") as fh:
        fh.write(
            _IDX_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, flags, index.n_images, len(index.entries))
        )
        for key in sorted(index.entries):
            entry = index.entries[key]
            i, j = key if two_d else (key, 0)
            fh.write(_ENTRY_HEADER.pack(i, j, len(entry)))
            for p in range(len(entry)):
                fh.write(struct.pack("<I", int(entry.ids[p])))
                if index.has_sift_sig:
                    fh.write(struct.pack("<Q", int(entry.sift[p])))
                if index.has_cn_sig:
                    fh.write(struct.pack("<I", int(entry.cn[p])))
        fh.write(struct.pack("<I", len(index.image_ids)))
        for slot in range(len(index.image_ids)):
            fh.write(struct.pack("<Id", int(index.image_ids[slot]), float(index.norms[slot])))


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("index file truncated")
    return data


def load_index(path) -> MultiIndex | BaselineIndex:
    """Rebuild an index from disk; IDF counts come back from the postings
    themselves and nominal grid sizes from the occupied coordinates."""
    with open(path, "rb") as fh:
        magic, version, flags, n_images, n_entries = _IDX_HEADER.unpack(
            _read_exact(fh, _IDX_HEADER.size)
        )
        if magic != INDEX_MAGIC:
            raise FormatError(f"bad index magic {magic!r}")
        if version != INDEX_VERSION:
            raise FormatError(f"unsupported index version {version}")
        has_sift = bool(flags & FLAG_SIFT_SIG)
        has_cn = bool(flags & FLAG_CN_SIG)
        if flags & ~(FLAG_SIFT_SIG | FLAG_CN_SIG):
            raise FormatError(f"unknown index flags {flags:#x}")

        raw_entries = []
        for _ in range(n_entries):
            i, j, count = _ENTRY_HEADER.unpack(_read_exact(fh, _ENTRY_HEADER.size))
            ids = np.empty(count, dtype=np.uint32)
            ssigs = np.empty(count, dtype=np.uint64) if has_sift else None
            csigs = np.empty(count, dtype=np.uint32) if has_cn else None
            for p in range(count):
                (ids[p],) = struct.unpack("<I", _read_exact(fh, 4))
                if has_sift:
                    (ssigs[p],) = struct.unpack("<Q", _read_exact(fh, 8))
                if has_cn:
                    (csigs[p],) = struct.unpack("<I", _read_exact(fh, 4))
            raw_entries.append((i, j, ids, ssigs, csigs))

        (n_norms,) = struct.unpack("<I", _read_exact(fh, 4))
        norm_ids = np.empty(n_norms, dtype=np.uint32)
        norm_vals = np.empty(n_norms)
        for p in range(n_norms):
            norm_ids[p], norm_vals[p] = struct.unpack("<Id", _read_exact(fh, 12))

    if has_cn:
        index: MultiIndex | BaselineIndex = MultiIndex(
            k_s=1 + max((e[0] for e in raw_entries), default=-1),
            k_c=1 + max((e[1] for e in raw_entries), default=-1),
            has_sift_sig=has_sift,
        )
    else:
        index = BaselineIndex(
            k_s=1 + max((e[0] for e in raw_entries), default=-1), has_sift_sig=has_sift
        )

    order = np.argsort(norm_ids, kind="stable")
    index.image_ids = norm_ids[order]
    index.norms = norm_vals[order]
    index.n_images = n_images
    for i, j, ids, ssigs, csigs in raw_entries:
        if not has_cn and j != 0:
            raise FormatError("baseline index entry with nonzero color word")
        key = (i, j) if has_cn else i
        if key in index.entries:
            raise FormatError(f"duplicate index entry {key}")
        entry = PostingList(
            ids=ids, sift=ssigs, cn=csigs, slots=np.searchsorted(index.image_ids, ids)
        )
        for arr in (entry.ids, entry.sift, entry.cn, entry.slots):
            if arr is not None:
                arr.setflags(write=False)
        index.entries[key] = entry
        index.pair_counts[key] = len(np.unique(ids))
    index._pending = {}
    index.frozen = True
    return index


def index_equal(a: _InvertedIndex, b: _InvertedIndex) -> bool:
    """Structural equality: entries, IDF counts, norms and image count."""
    if type(a) is not type(b) or a.n_images != b.n_images:
        return False
    if a.has_sift_sig != b.has_sift_sig or a.has_cn_sig != b.has_cn_sig:
        return False
    if set(a.entries) != set(b.entries) or a.pair_counts != b.pair_counts:
        return False
    for key, ea in a.entries.items():
        eb = b.entries[key]
        if not np.array_equal(ea.ids, eb.ids):
            return False
        if (ea.sift is None) != (eb.sift is None) or (
            ea.sift is not None and not np.array_equal(ea.sift, eb.sift)
        ):
            return False
        if (ea.cn is None) != (eb.cn is None) or (
            ea.cn is not None and not np.array_equal(ea.cn, eb.cn)
        ):
            return False
    return np.array_equal(a.image_ids, b.image_ids) and np.array_equal(a.norms, b.norms)
