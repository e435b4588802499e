"""Online retrieval against frozen indexes, plus a brute-force oracle.

Scoring follows the TF-IDF kernel

    sim(Q, I) = sum over matched feature pairs of  f(x, y) * idf(i, j)^2
                ------------------------------------------------------
                                 |Q|_2 * |I|_2

where a pair matches only when co-located in an index entry, f is the
product of the enabled Hamming-gated Gaussian factors
(exp(-d^2 / sigma^2) for distances strictly below the threshold, 0 at or
above it), and the norms come from single-assignment term-frequency
histograms.  Multiple assignment widens the set of entries a query
feature traverses; it never changes norms or stored postings.  Optional
burstiness damping scales each match by t^(-1/2), with t the number of
valid matches between that query feature and that database image.

Queries are pure readers: per-query accumulators are private and the
traversal counters ride along on the returned ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .codebook import Codebook, assign_multiple, assign_nearest
from .errors import ConfigError
from .features import ImageRecord
from .index import BaselineIndex, MultiIndex, Posting
from .signatures import (
    CN_SIG_BITS,
    SIFT_SIG_BITS,
    HeModel,
    cn_binarize_batch,
    pack_bits64,
    project_sift,
)

__all__ = [
    "QueryParams",
    "QueryFeatureView",
    "RankedList",
    "TraversalStats",
    "match_weight",
    "burstiness_reweight",
    "query_multi_index",
    "query_baseline",
    "brute_force_score",
    "traversal_stats",
]


@dataclass(frozen=True)
class QueryParams:
    """Retrieval-time knobs.  `ma_color = None` resolves to half the color
    vocabulary (rounded up) at query time."""

    ma_sift: int = 3
    ma_color: int | None = None
    kappa_color: int = 7
    sigma_color: float = 4.0
    tau_sift: int = 30
    sigma_sift: float = 16.0
    enable_sift_he: bool = True
    enable_color_he: bool = True
    enable_burst: bool = False

    def resolved_ma_color(self, k_c: int) -> int:
        return (k_c + 1) // 2 if self.ma_color is None else self.ma_color

    def validate(self, k_s: int, k_c: int | None = None) -> None:
        if not 1 <= self.ma_sift <= k_s:
            raise ConfigError(f"ma_sift={self.ma_sift} outside [1, {k_s}]")
        if k_c is not None and not 1 <= self.resolved_ma_color(k_c) <= k_c:
            raise ConfigError(f"ma_color={self.ma_color} outside [1, {k_c}]")
        if not 0 <= self.kappa_color <= CN_SIG_BITS:
            raise ConfigError(f"kappa_color={self.kappa_color} outside [0, {CN_SIG_BITS}]")
        if not 0 <= self.tau_sift <= SIFT_SIG_BITS:
            raise ConfigError(f"tau_sift={self.tau_sift} outside [0, {SIFT_SIG_BITS}]")
        if not (self.sigma_color > 0 and self.sigma_sift > 0):
            raise ConfigError("sigma_color and sigma_sift must be positive")


@dataclass
class TraversalStats:
    postings_visited: int = 0
    entries_visited: int = 0


@dataclass
class RankedList:
    """(image_id, score) pairs sorted by score descending, id ascending."""

    query_id: int
    items: list[tuple[int, float]]
    stats: TraversalStats | None = None

    def ids(self) -> list[int]:
        return [i for i, _ in self.items]


def traversal_stats(ranked: RankedList) -> tuple[int, int]:
    """Counters from the query that produced `ranked`."""
    if ranked.stats is None:
        raise ValueError("this ranking carries no traversal counters")
    return ranked.stats.postings_visited, ranked.stats.entries_visited


@dataclass(frozen=True)
class QueryFeatureView:
    """A query feature as seen from one index entry: its signatures under
    the entry's SIFT word."""

    sift_sig: int | None = None
    cn_sig: int | None = None


def match_weight(q: QueryFeatureView | Posting, p: Posting | QueryFeatureView, params: QueryParams) -> float:
    """Eq.-style match strength for two co-located features, in [0, 1]."""
    w = 1.0
    if params.enable_sift_he:
        d = (int(q.sift_sig) ^ int(p.sift_sig)).bit_count()
        if d >= params.tau_sift:
            return 0.0
        w *= float(np.exp(-(float(d) * float(d)) / (params.sigma_sift * params.sigma_sift)))
    if params.enable_color_he:
        d = (int(q.cn_sig) ^ int(p.cn_sig)).bit_count()
        if d >= params.kappa_color:
            return 0.0
        w *= float(np.exp(-(float(d) * float(d)) / (params.sigma_color * params.sigma_color)))
    return w


def burstiness_reweight(weights: Iterable[float]) -> np.ndarray:
    """Scale the valid matches of one (query feature, database image) group
    by t^(-1/2)."""
    arr = np.asarray(list(weights), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("burstiness group must contain at least one match")
    return arr * (float(arr.size) ** -0.5)


def _entry_weights(entry, q_ssig: int | None, q_csig: int | None, params: QueryParams) -> np.ndarray:
    w = np.ones(len(entry))
    if q_ssig is not None:
        d = np.bitwise_count(entry.sift ^ np.uint64(q_ssig)).astype(np.float64)
        w = np.where(
            d < params.tau_sift,
            np.exp(-(d * d) / (params.sigma_sift * params.sigma_sift)),
            0.0,
        )
    if q_csig is not None:
        d = np.bitwise_count(entry.cn ^ np.uint32(q_csig)).astype(np.float64)
        w = w * np.where(
            d < params.kappa_color,
            np.exp(-(d * d) / (params.sigma_color * params.sigma_color)),
            0.0,
        )
    return w


def _hist_norm(pairs: Iterable) -> float:
    hist: dict = {}
    for key in pairs:
        hist[key] = hist.get(key, 0) + 1
    return math.sqrt(sum(c * c for c in hist.values()))


def _finish(query_id, index, acc, qnorm, exclude_image_id, stats) -> RankedList:
    nz = np.flatnonzero(acc > 0.0)
    items = []
    for slot in nz:
        image_id = int(index.image_ids[slot])
        if image_id == exclude_image_id:
            continue
        items.append((image_id, float(acc[slot] / (qnorm * index.norms[slot]))))
    items.sort(key=lambda t: (-t[1], t[0]))
    return RankedList(query_id=query_id, items=items, stats=stats)


def _accumulate_feature(acc, slots_list, contrib_list, enable_burst) -> None:
    if not slots_list:
        return
    slots = np.concatenate(slots_list)
    contribs = np.concatenate(contrib_list)
    if enable_burst:
        _, inv, counts = np.unique(slots, return_inverse=True, return_counts=True)
        contribs = contribs * (counts.astype(np.float64)[inv] ** -0.5)
    np.add.at(acc, slots, contribs)


def query_multi_index(
    query: ImageRecord,
    index: MultiIndex,
    books: tuple[Codebook, Codebook],
    he: HeModel | None,
    params: QueryParams,
    exclude_image_id: int | None = None,
) -> RankedList:
    """Rank database images against `query` through the 2-D index."""
    sift_book, color_book = books
    if sift_book.size < index.k_s or color_book.size < index.k_c:
        raise ConfigError("codebooks are smaller than the index dimensions")
    params.validate(sift_book.size, color_book.size)
    if params.enable_sift_he and (he is None or not index.has_sift_sig):
        raise ConfigError("SIFT Hamming weighting needs a model and indexed signatures")

    stats = TraversalStats()
    if not query.features:
        return RankedList(query_id=query.image_id, items=[], stats=stats)

    mat_s, mat_c = query.sift_matrix, query.color_matrix
    ma_c = params.resolved_ma_color(color_book.size)
    words_s, _ = assign_multiple(mat_s, sift_book, params.ma_sift)
    words_c, _ = assign_multiple(mat_c, color_book, ma_c)
    qnorm = _hist_norm(zip(words_s[:, 0].tolist(), words_c[:, 0].tolist()))
    q_csigs = cn_binarize_batch(mat_c) if params.enable_color_he else None

    acc = np.zeros(len(index.image_ids))
    for f in range(len(query.features)):
        proj = project_sift(query.features[f].sift, he) if params.enable_sift_he else None
        q_csig = int(q_csigs[f]) if q_csigs is not None else None
        slots_list, contrib_list = [], []
        for i in words_s[f].tolist():
            q_ssig = pack_bits64(proj > he.thresholds[i]) if proj is not None else None
            for j in words_c[f].tolist():
                entry = index.entries.get((i, j))
                if entry is None:
                    continue
                stats.entries_visited += 1
                stats.postings_visited += len(entry)
                w = _entry_weights(entry, q_ssig, q_csig, params)
                valid = w > 0.0
                if not valid.any():
                    continue
                idf2 = (index.n_images / index.pair_counts[(i, j)]) ** 2
                slots_list.append(entry.slots[valid])
                contrib_list.append(w[valid] * idf2)
        _accumulate_feature(acc, slots_list, contrib_list, params.enable_burst)

    return _finish(query.image_id, index, acc, qnorm, exclude_image_id, stats)


def query_baseline(
    query: ImageRecord,
    index: BaselineIndex,
    sift_book: Codebook,
    he: HeModel | None,
    params: QueryParams,
    exclude_image_id: int | None = None,
) -> RankedList:
    """Rank through the 1-D index; the color dimension simply does not exist."""
    if sift_book.size < index.k_s:
        raise ConfigError("codebook is smaller than the index dimension")
    params.validate(sift_book.size)
    if params.enable_sift_he and (he is None or not index.has_sift_sig):
        raise ConfigError("SIFT Hamming weighting needs a model and indexed signatures")

    stats = TraversalStats()
    if not query.features:
        return RankedList(query_id=query.image_id, items=[], stats=stats)

    words_s, _ = assign_multiple(query.sift_matrix, sift_book, params.ma_sift)
    qnorm = _hist_norm(words_s[:, 0].tolist())

    acc = np.zeros(len(index.image_ids))
    for f in range(len(query.features)):
        proj = project_sift(query.features[f].sift, he) if params.enable_sift_he else None
        slots_list, contrib_list = [], []
        for i in words_s[f].tolist():
            q_ssig = pack_bits64(proj > he.thresholds[i]) if proj is not None else None
            entry = index.entries.get(i)
            if entry is None:
                continue
            stats.entries_visited += 1
            stats.postings_visited += len(entry)
            w = _entry_weights(entry, q_ssig, None, params)
            valid = w > 0.0
            if not valid.any():
                continue
            idf2 = (index.n_images / index.pair_counts[i]) ** 2
            slots_list.append(entry.slots[valid])
            contrib_list.append(w[valid] * idf2)
        _accumulate_feature(acc, slots_list, contrib_list, params.enable_burst)

    return _finish(query.image_id, index, acc, qnorm, exclude_image_id, stats)


def brute_force_score(
    query: ImageRecord,
    corpus: list[ImageRecord],
    books: tuple[Codebook, Codebook],
    he: HeModel | None,
    params: QueryParams,
    exclude_image_id: int | None = None,
) -> RankedList:
    """Oracle for the 2-D scoring: a direct sweep over all feature pairs.

    Quantization, signatures, IDF counts and norms are all recomputed from
    the raw corpus; no inverted index is consulted.
    """
    sift_book, color_book = books
    params.validate(sift_book.size, color_book.size)
    use_s = params.enable_sift_he
    use_c = params.enable_color_he
    if use_s and he is None:
        raise ConfigError("SIFT Hamming weighting needs a model")

    n_images = len(corpus)
    db_img, db_i, db_j, db_ssig, db_csig = [], [], [], [], []
    pair_images: dict = {}
    norms: dict[int, float] = {}
    for rec in corpus:
        ws = assign_nearest(rec.sift_matrix, sift_book)
        wc = assign_nearest(rec.color_matrix, color_book)
        csigs = cn_binarize_batch(rec.color_matrix)
        pairs = list(zip(ws.tolist(), wc.tolist()))
        if pairs:
            norms[rec.image_id] = _hist_norm(pairs)
        for p in set(pairs):
            pair_images[p] = pair_images.get(p, 0) + 1
        for f, feat in enumerate(rec.features):
            db_img.append(rec.image_id)
            db_i.append(int(ws[f]))
            db_j.append(int(wc[f]))
            if use_s:
                db_ssig.append(pack_bits64(project_sift(feat.sift, he) > he.thresholds[int(ws[f])]))
            if use_c:
                db_csig.append(int(csigs[f]))

    if not query.features:
        return RankedList(query_id=query.image_id, items=[], stats=None)

    db_img = np.array(db_img, dtype=np.int64)
    db_i = np.array(db_i, dtype=np.int64)
    db_j = np.array(db_j, dtype=np.int64)
    db_ssig = np.array(db_ssig, dtype=np.uint64) if use_s else None
    db_csig = np.array(db_csig, dtype=np.uint32) if use_c else None
    idf2_arr = np.array(
        [(n_images / pair_images[(i, j)]) ** 2 for i, j in zip(db_i.tolist(), db_j.tolist())]
    )

    ma_c = params.resolved_ma_color(color_book.size)
    words_s, _ = assign_multiple(query.sift_matrix, sift_book, params.ma_sift)
    words_c, _ = assign_multiple(query.color_matrix, color_book, ma_c)
    qnorm = _hist_norm(zip(words_s[:, 0].tolist(), words_c[:, 0].tolist()))
    q_csigs = cn_binarize_batch(query.color_matrix) if use_c else None

    raw: dict[int, float] = {}
    for f in range(len(query.features)):
        mask = np.isin(db_i, words_s[f]) & np.isin(db_j, words_c[f])
        if not mask.any():
            continue
        w = np.ones(db_img.shape[0])
        if use_s:
            proj = project_sift(query.features[f].sift, he)
            for i in words_s[f].tolist():
                sub = mask & (db_i == i)
                if not sub.any():
                    continue
                qsig = pack_bits64(proj > he.thresholds[i])
                d = np.bitwise_count(db_ssig[sub] ^ np.uint64(qsig)).astype(np.float64)
                w[sub] = np.where(
                    d < params.tau_sift,
                    np.exp(-(d * d) / (params.sigma_sift * params.sigma_sift)),
                    0.0,
                )
        if use_c:
            d = np.bitwise_count(db_csig ^ np.uint32(int(q_csigs[f]))).astype(np.float64)
            w = w * np.where(
                d < params.kappa_color,
                np.exp(-(d * d) / (params.sigma_color * params.sigma_color)),
                0.0,
            )
        valid = mask & (w > 0.0)
        if not valid.any():
            continue
        contribs = w[valid] * idf2_arr[valid]
        imgs = db_img[valid]
        if params.enable_burst:
            _, inv, counts = np.unique(imgs, return_inverse=True, return_counts=True)
            contribs = contribs * (counts.astype(np.float64)[inv] ** -0.5)
        for image_id, c in zip(imgs.tolist(), contribs.tolist()):
            raw[image_id] = raw.get(image_id, 0.0) + c

    items = [
        (image_id, total / (qnorm * norms[image_id]))
        for image_id, total in raw.items()
        if total > 0.0 and image_id != exclude_image_id
    ]
    items.sort(key=lambda t: (-t[1], t[0]))
    return RankedList(query_id=query.image_id, items=items, stats=None)
