"""Descriptor ingestion, preprocessing and synthetic corpus generation.

Every keypoint carries a coupled descriptor pair: a 128-D gradient
histogram (square-rooted after l1 normalization, so its l2 norm is 1 for
any nonzero input) and an 11-D color-name probability vector obtained as
the mean over the pixels of the keypoint's patch.  Upstream detectors and
per-pixel color models are out of scope: descriptors enter through
`load_descriptors` or come from `generate_synthetic_corpus`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyPatchError, FormatError, InvalidDescriptorError

SIFT_DIM = 128
CN_DIM = 11
SIMPLEX_TOL = 1e-6

DESCRIPTOR_MAGIC = b"CMID"
DESCRIPTOR_VERSION = 1


def _as_vector(values, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (dim,):
        raise InvalidDescriptorError(f"{what} must have shape ({dim},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidDescriptorError(f"{what} contains non-finite entries")
    return arr


def validate_cn(values) -> np.ndarray:
    """Check the 11-D color-name vector sits on the probability simplex."""
    arr = _as_vector(values, CN_DIM, "color descriptor")
    if np.any(arr < -SIMPLEX_TOL) or np.any(arr > 1.0 + SIMPLEX_TOL):
        raise InvalidDescriptorError("color descriptor entries must lie in [0, 1]")
    total = float(arr.sum())
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise InvalidDescriptorError(f"color descriptor must sum to 1 (got {total!r})")
    return arr


def root_sift_transform(raw) -> np.ndarray:
    """l1-normalize a raw 128-D descriptor, then take element-wise sqrt.

    The all-zero descriptor maps to itself; any nonzero input comes out
    with unit l2 norm.
    """
    arr = _as_vector(raw, SIFT_DIM, "raw descriptor")
    if np.any(arr < 0):
        raise InvalidDescriptorError("raw descriptor entries must be non-negative")
    total = float(arr.sum())
    if total == 0.0:
        return np.zeros(SIFT_DIM)
    return np.sqrt(arr / total)


def mean_cn_descriptor(pixel_cn_vectors) -> np.ndarray:
    """Arithmetic mean of per-pixel color-name vectors (the patch descriptor)."""
    vectors = [validate_cn(v) for v in pixel_cn_vectors]
    if not vectors:
        raise EmptyPatchError("patch contains no pixel vectors")
    return np.mean(np.stack(vectors), axis=0)


@dataclass(frozen=True)
class FeatureTuple:
    """One keypoint's coupled descriptors plus its location and scale."""

    sift: np.ndarray
    color: np.ndarray
    x: float = 0.0
    y: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        sift = _as_vector(self.sift, SIFT_DIM, "sift descriptor")
        if np.any(sift < 0):
            raise InvalidDescriptorError("sift descriptor entries must be non-negative")
        object.__setattr__(self, "sift", sift)
        object.__setattr__(self, "color", validate_cn(self.color))
        if not self.scale > 0:
            raise InvalidDescriptorError(f"keypoint scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    group_id: int
    features: list[FeatureTuple]

    @property
    def sift_matrix(self) -> np.ndarray:
        if not self.features:
            return np.zeros((0, SIFT_DIM))
        return np.stack([f.sift for f in self.features])

    @property
    def color_matrix(self) -> np.ndarray:
        if not self.features:
            return np.zeros((0, CN_DIM))
        return np.stack([f.color for f in self.features])


@dataclass(frozen=True)
class SynthConfig:
    """Grouped synthetic corpus: images within a group share latent
    cluster centers in both descriptor spaces.

    `noise` perturbs each feature; `illum` scales each image's color mass
    (multiplicative jitter followed by re-normalization).  `sift_pool`
    forces SIFT prototypes to be drawn from a shared pool of that size,
    so groups collide in gradient space while staying apart in color;
    0 gives every (group, slot) its own prototype.
    """

    groups: int = 10
    images_per_group: int = 4
    features_per_image: int = 10
    noise: float = 0.05
    illum: float = 0.3
    sift_pool: int = 0

    def validate(self) -> None:
        if self.groups < 1:
            raise ConfigError("groups must be >= 1")
        if self.images_per_group < 2:
            raise ConfigError("images_per_group must be >= 2")
        if self.features_per_image < 1:
            raise ConfigError("features_per_image must be >= 1")
        if self.noise < 0 or self.illum < 0:
            raise ConfigError("noise and illum must be non-negative")
        if self.sift_pool < 0:
            raise ConfigError("sift_pool must be >= 0")


def generate_synthetic_corpus(config: SynthConfig, seed: int) -> list[ImageRecord]:
    """Deterministically sample a grouped corpus for desk-scale experiments."""
    config.validate()
    rng = np.random.default_rng(seed)
    slots = config.features_per_image

    pool_size = config.sift_pool if config.sift_pool > 0 else config.groups * slots
    sift_pool = rng.gamma(shape=2.0, scale=1.0, size=(pool_size, SIFT_DIM))
    if config.sift_pool > 0:
        proto_idx = rng.integers(0, pool_size, size=(config.groups, slots))
    else:
        proto_idx = np.arange(config.groups * slots).reshape(config.groups, slots)
    cn_protos = rng.dirichlet(np.full(CN_DIM, 0.5), size=(config.groups, slots))

    records: list[ImageRecord] = []
    image_id = 0
    for g in range(config.groups):
        for _ in range(config.images_per_group):
            gain = np.exp(config.illum * rng.standard_normal(CN_DIM))
            feats = []
            for s in range(slots):
                raw = sift_pool[proto_idx[g, s]] + config.noise * rng.standard_normal(SIFT_DIM)
                np.maximum(raw, 0.0, out=raw)
                cn = cn_protos[g, s] * np.exp(config.noise * rng.standard_normal(CN_DIM)) * gain
                cn = cn / cn.sum()
                x, y = rng.uniform(0.0, 512.0, size=2)
                scale = rng.uniform(1.0, 8.0)
                feats.append(FeatureTuple(root_sift_transform(raw), cn, float(x), float(y), float(scale)))
            records.append(ImageRecord(image_id, g, feats))
            image_id += 1
    return records


# ---------------------------------------------------------------------------
# Descriptor files.  Binary layout (little-endian):
#   magic "CMID", version u16 = 1, image count u32;
#   per image: image_id u32, group_id u32, feature count u32;
#   per feature: x, y, scale f32, 128 x f32 sift, 11 x f32 color.
# The text variant carries the same fields, one image header line
# ("image_id group_id feature_count") followed by one line per feature,
# after a "CMID 1 <image_count>" header.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHI")
_IMAGE_HEADER = struct.Struct("<III")


def save_descriptors(records: list[ImageRecord], path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION, len(records)))
        for rec in records:
            fh.write(_IMAGE_HEADER.pack(rec.image_id, rec.group_id, len(rec.features)))
            for f in rec.features:
                row = np.concatenate(([f.x, f.y, f.scale], f.sift, f.color))
                fh.write(row.astype("<f4").tobytes())


def save_descriptors_text(records: list[ImageRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write(f"CMID {DESCRIPTOR_VERSION} {len(records)}\n")
        for rec in records:
            fh.write(f"{rec.image_id} {rec.group_id} {len(rec.features)}\n")
            for f in rec.features:
                row = np.concatenate(([f.x, f.y, f.scale], f.sift, f.color)).astype(np.float32)
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("descriptor file truncated")
    return data


def _feature_from_row(row: np.ndarray) -> FeatureTuple:
    if row.shape != (3 + SIFT_DIM + CN_DIM,):
        raise FormatError(f"feature row has {row.size} values, expected {3 + SIFT_DIM + CN_DIM}")
    try:
        return FeatureTuple(
            sift=row[3 : 3 + SIFT_DIM],
            color=row[3 + SIFT_DIM :],
            x=float(row[0]),
            y=float(row[1]),
            scale=float(row[2]),
        )
    except InvalidDescriptorError as exc:
        raise FormatError(f"invalid feature in descriptor file: {exc}") from exc


def _load_descriptors_binary(fh) -> list[ImageRecord]:
    magic, version, n_images = _HEADER.unpack(_read_exact(fh, _HEADER.size))
    if magic != DESCRIPTOR_MAGIC:
        raise FormatError(f"bad descriptor magic {magic!r}")
    if version != DESCRIPTOR_VERSION:
        raise FormatError(f"unsupported descriptor version {version}")
    row_bytes = (3 + SIFT_DIM + CN_DIM) * 4
    records = []
    seen: set[int] = set()
    for _ in range(n_images):
        image_id, group_id, n_feat = _IMAGE_HEADER.unpack(_read_exact(fh, _IMAGE_HEADER.size))
        if image_id in seen:
            raise FormatError(f"duplicate image_id {image_id} in descriptor file")
        seen.add(image_id)
        feats = []
        for _ in range(n_feat):
            row = np.frombuffer(_read_exact(fh, row_bytes), dtype="<f4").astype(np.float64)
            feats.append(_feature_from_row(row))
        records.append(ImageRecord(image_id, group_id, feats))
    return records


def _load_descriptors_text(path) -> list[ImageRecord]:
    with open(path, "r") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise FormatError("empty descriptor text file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "CMID":
        raise FormatError(f"bad descriptor text header {lines[0]!r}")
    if int(head[1]) != DESCRIPTOR_VERSION:
        raise FormatError(f"unsupported descriptor version {head[1]}")
    n_images = int(head[2])
    records = []
    seen: set[int] = set()
    pos = 1
    try:
        for _ in range(n_images):
            image_id, group_id, n_feat = (int(v) for v in lines[pos].split())
            pos += 1
            if image_id in seen:
                raise FormatError(f"duplicate image_id {image_id} in descriptor file")
            seen.add(image_id)
            feats = []
            for _ in range(n_feat):
                row = np.array([np.float32(v) for v in lines[pos].split()], dtype=np.float64)
                pos += 1
                feats.append(_feature_from_row(row))
            records.append(ImageRecord(image_id, group_id, feats))
    except IndexError as exc:
        raise FormatError("descriptor text file truncated") from exc
    except ValueError as exc:
        raise FormatError(f"malformed descriptor text file: {exc}") from exc
    return records


def load_descriptors(path) -> list[ImageRecord]:
    """Read a descriptor file, accepting the binary or text layout."""
    with open(path, "rb") as fh:
        head = fh.read(6)
        if len(head) >= 6 and head[:4] == DESCRIPTOR_MAGIC and head[4:6] == b"\x01\x00":
            fh.seek(0)
            return _load_descriptors_binary(fh)
    return _load_descriptors_text(path)
