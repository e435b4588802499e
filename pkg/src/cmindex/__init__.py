"""Coupled multi-index image retrieval.

Two local descriptors per keypoint (a 128-D gradient histogram and an
11-D color-name vector) are jointly quantized into a 2-D inverted index
and queried with Hamming-signature filtering and TF-IDF scoring; a
conventional 1-D index serves as the baseline.
"""

from .codebook import (
    Assignment,
    Codebook,
    Family,
    load_codebook,
    quantize_multiple,
    quantize_nearest,
    save_codebook,
    train_kmeans,
)
from .features import (
    FeatureTuple,
    ImageRecord,
    SynthConfig,
    generate_synthetic_corpus,
    load_descriptors,
    mean_cn_descriptor,
    root_sift_transform,
    save_descriptors,
    save_descriptors_text,
)
from .index import (
    BaselineIndex,
    MemoryProfile,
    MultiIndex,
    Posting,
    build_baseline_index,
    build_multi_index,
    idf,
    image_norm,
    index_equal,
    load_index,
    memory_footprint,
    save_index,
)
from .metrics import (
    GroundTruth,
    MetricsReport,
    average_precision,
    compute_metrics,
    ground_truth_from_records,
    mean_average_precision,
    ns_score,
    top_k_precision,
)
from .query import (
    QueryParams,
    RankedList,
    brute_force_score,
    burstiness_reweight,
    match_weight,
    query_baseline,
    query_multi_index,
    traversal_stats,
)
from .signatures import (
    HeModel,
    cn_binarize,
    hamming_distance,
    load_he_model,
    save_he_model,
    sift_signature,
    train_he_model,
)

__version__ = "0.1.0"
