"""Synthetic hard-negative datasets, batch sampling, and embedding files.

The generator plants hard negatives deliberately: classes come in groups
whose anchor directions are mutually orthogonal and far apart (separation
``Delta``), while class centers inside one group differ only by
noise-scale offsets. Records of different classes in the same group are
therefore near-duplicates, exactly the regime hardness amplification
targets, while cross-group pairs are easy negatives.

Randomness comes from an explicitly specified generator so a dataset can be
rebuilt bit-for-bit by any implementation, independent of numpy's stream:

* state seeding: splitmix64 (increment 0x9E3779B97F4A7C15, mixers
  0xBF58476D1CE4E5B9 and 0x94D049BB133111EB) applied to the user seed; a
  zero state is replaced by the splitmix64 increment
* core generator: xorshift64* with shifts 12, 25, 27 and output multiplier
  0x2545F4914F6CDD1D
* uniforms: high 53 bits of the output, divided by 2**53; Gaussians:
  Box-Muller on two uniforms (the first offset so log(0) cannot occur),
  cosine branch first, sine branch cached and returned next
* integers in [0, n): rejection sampling on the raw 64-bit output

Draw order in generate(): group direction matrix row by row, then per class
its center offset, then per record query noise followed by target noise,
classes in label order, records in index order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    InputError,
    InvalidConfigError,
    TruncatedPayloadError,
    UnknownDtypeError,
)
from .validation import as_float_matrix

_MASK64 = (1 << 64) - 1
_SPLITMIX_INC = 0x9E3779B97F4A7C15
_XORSHIFT_MULT = 0x2545F4914F6CDD1D

_EMBED_MAGIC = b"EGAE"
_EMBED_VERSION = 1

# Within-group class centers sit CENTER_SPREAD noise-lengths from their
# group anchor; records then scatter at one noise-length around the center.
# 1.5 keeps same-group classes separable but only barely: their record
# clouds brush against each other, which is what makes them hard negatives.
CENTER_SPREAD = 1.5
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_DTYPE = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def splitmix64(x: int) -> int:
    x = (x + _SPLITMIX_INC) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class XorShift64Star:
    """xorshift64* PRNG with splitmix64 seeding; pure integer arithmetic."""

    def __init__(self, seed: int):
        state = splitmix64(seed & _MASK64)
        self._state = state if state != 0 else _SPLITMIX_INC
        self._spare_gaussian: float | None = None

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * _XORSHIFT_MULT) & _MASK64

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def randint(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise InvalidConfigError(f"randint bound must be positive, got {n}")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def gaussian(self) -> float:
        if self._spare_gaussian is not None:
            z = self._spare_gaussian
            self._spare_gaussian = None
            return z
        # u1 shifted into (0, 1] so the log is always finite
        u1 = ((self.next_u64() >> 11) + 1) / float(1 << 53)
        u2 = (self.next_u64() >> 11) / float(1 << 53)
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_gaussian = r * math.sin(theta)
        return r * math.cos(theta)

    def gaussian_vector(self, n: int) -> np.ndarray:
        return np.array([self.gaussian() for _ in range(n)])


@dataclass(frozen=True)
class SyntheticConfig:
    """Shape of a planted-hard-negative dataset.

    num_classes classes are split into num_classes / group_size groups;
    group anchors sit at mutual distance ``separation``, class centers
    within a group at distance of order ``noise``.
    """

    num_classes: int
    input_dim: int
    group_size: int = 1
    noise: float = 0.05
    separation: float = 4.0
    records_per_class: int = 8
    seed: int = 0

    def __post_init__(self):
        k, m, g = self.num_classes, self.input_dim, self.group_size
        if k < 2:
            raise InvalidConfigError(f"num_classes must be >= 2, got {k}")
        if m < 2:
            raise InvalidConfigError(f"input_dim must be >= 2, got {m}")
        if g < 1:
            raise InvalidConfigError(f"group_size must be >= 1, got {g}")
        if k % g != 0:
            raise InvalidConfigError(
                f"group_size {g} must divide num_classes {k}"
            )
        if k // g > m:
            raise InvalidConfigError(
                f"{k // g} groups need orthogonal directions in dimension {m}; "
                "raise input_dim or group_size"
            )
        if not (math.isfinite(self.noise) and self.noise >= 0):
            raise InvalidConfigError(f"noise must be finite and >= 0, got {self.noise}")
        if not (math.isfinite(self.separation) and self.separation >= 0):
            raise InvalidConfigError(
                f"separation must be finite and >= 0, got {self.separation}"
            )
        if self.records_per_class < 1:
            raise InvalidConfigError(
                f"records_per_class must be >= 1, got {self.records_per_class}"
            )

    @property
    def num_groups(self) -> int:
        return self.num_classes // self.group_size

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_mapping(cls, doc: dict) -> "SyntheticConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise InvalidConfigError(f"unknown dataset config keys: {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise InvalidConfigError(f"bad dataset config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "SyntheticConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"dataset config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidConfigError("dataset config JSON must be an object")
        return cls.from_mapping(doc)


@dataclass
class PairDataset:
    """Aligned (query, target) record pairs with class labels.

    records_by_class[i] lists the record indices belonging to class_ids[i];
    every record's query and target share that class.
    """

    queries: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    class_ids: np.ndarray
    records_by_class: list[np.ndarray]
    centers: np.ndarray | None = None
    config: SyntheticConfig | None = None

    @property
    def num_records(self) -> int:
        return self.queries.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    @property
    def input_dim(self) -> int:
        return self.queries.shape[1]


def _orthonormal_rows(rng: XorShift64Star, count: int, dim: int) -> np.ndarray:
    """Orthonormal directions via modified Gram-Schmidt on Gaussian rows.

    A row that collapses during projection (probability ~0) is redrawn from
    the same stream.
    """
    rows = np.empty((count, dim))
    i = 0
    while i < count:
        v = rng.gaussian_vector(dim)
        for j in range(i):
            v -= (v @ rows[j]) * rows[j]
        norm = math.sqrt(float(v @ v))
        if norm < 1e-9:
            continue
        rows[i] = v / norm
        i += 1
    return rows


def generate_dataset(config: SyntheticConfig) -> PairDataset:
    """Build the planted-hard-negative dataset described by config.

    Group anchors are orthonormal directions scaled by separation/sqrt(2),
    so any two anchors are exactly ``separation`` apart. Center offsets and
    record noise are Gaussian vectors scaled by noise/sqrt(input_dim), giving
    them expected length ~noise.
    """
    k, m, r = config.num_classes, config.input_dim, config.records_per_class
    rng = XorShift64Star(config.seed)
    anchors = _orthonormal_rows(rng, config.num_groups, m) * (
        config.separation / math.sqrt(2.0)
    )
    scale = config.noise / math.sqrt(m)
    centers = np.empty((k, m))
    for c in range(k):
        centers[c] = anchors[c // config.group_size] + (
            CENTER_SPREAD * scale
        ) * rng.gaussian_vector(m)

    n = k * r
    queries = np.empty((n, m))
    targets = np.empty((n, m))
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for c in range(k):
        for _ in range(r):
            queries[row] = centers[c] + scale * rng.gaussian_vector(m)
            targets[row] = centers[c] + scale * rng.gaussian_vector(m)
            labels[row] = c
            row += 1
    class_ids = np.arange(k, dtype=np.int64)
    records_by_class = [np.arange(c * r, (c + 1) * r, dtype=np.int64) for c in range(k)]
    return PairDataset(queries, targets, labels, class_ids, records_by_class, centers, config)


def sample_batch(
    dataset: PairDataset, batch_size: int, seed: int, step: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw batch_size records with pairwise-distinct class labels.

    Deterministic in (seed, step): the sampler's stream is seeded with
    splitmix64(splitmix64(seed) XOR (step + 1)). Classes are chosen by a
    partial Fisher-Yates pass over the class list, then one record index is
    drawn per chosen class, in that order.
    """
    b = int(batch_size)
    k = dataset.num_classes
    if not 1 <= b <= k:
        raise InvalidConfigError(
            f"batch size must be in [1, {k}] so labels can be distinct, got {b}"
        )
    rng = XorShift64Star(splitmix64(seed & _MASK64) ^ ((step + 1) & _MASK64))
    order = list(range(k))
    for i in range(b):
        j = i + rng.randint(k - i)
        order[i], order[j] = order[j], order[i]
    chosen = order[:b]
    rows = np.empty(b, dtype=np.int64)
    for i, cls_pos in enumerate(chosen):
        candidates = dataset.records_by_class[cls_pos]
        rows[i] = candidates[rng.randint(len(candidates))]
    return dataset.queries[rows], dataset.targets[rows], dataset.labels[rows]


def write_embeddings(path, embeddings, labels, dtype: str = "f8") -> None:
    """Write an EGAE embedding file.

    Layout: magic "EGAE", u16 version, u64 row count, u64 dimension, u8
    dtype code (1 = float32, 2 = float64), the values little-endian
    row-major, then one i64 label per row.
    """
    x = as_float_matrix(embeddings, "embeddings")
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 1 or lab.shape[0] != x.shape[0]:
        raise InputError(
            f"labels must be one per row: got {lab.shape} for {x.shape[0]} rows"
        )
    np_dtype = np.dtype(dtype)
    if np_dtype not in _CODE_FOR_DTYPE:
        raise UnknownDtypeError(f"unsupported dtype {dtype!r}; use f4 or f8")
    code = _CODE_FOR_DTYPE[np_dtype]
    with open(path, "wb") as fh:
        fh.write(_EMBED_MAGIC)
        fh.write(struct.pack("<HQQB", _EMBED_VERSION, x.shape[0], x.shape[1], code))
        fh.write(np.ascontiguousarray(x, dtype=_DTYPE_CODES[code]).tobytes())
        fh.write(np.ascontiguousarray(lab, dtype="<i8").tobytes())


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an EGAE file back as (embeddings float64, labels int64)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != _EMBED_MAGIC:
        raise BadMagicError(f"not an embedding file: expected magic {_EMBED_MAGIC!r}")
    header_end = 4 + struct.calcsize("<HQQB")
    if len(raw) < header_end:
        raise TruncatedPayloadError("embedding file header truncated")
    version, count, dim, code = struct.unpack_from("<HQQB", raw, 4)
    if version != _EMBED_VERSION:
        raise BadMagicError(f"unsupported embedding file version {version}")
    if code not in _DTYPE_CODES:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    np_dtype = _DTYPE_CODES[code]
    values_bytes = count * dim * np_dtype.itemsize
    labels_bytes = count * 8
    expected = header_end + values_bytes + labels_bytes
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"embedding file is {len(raw)} bytes, header implies {expected}"
        )
    values = np.frombuffer(raw, dtype=np_dtype, count=count * dim, offset=header_end)
    x = values.reshape(count, dim).astype(np.float64)
    labels = np.frombuffer(raw, dtype="<i8", count=count, offset=header_end + values_bytes)
    return x, labels.astype(np.int64).copy()


def dataset_from_embeddings(embeddings: np.ndarray, labels: np.ndarray) -> PairDataset:
    """Wrap stored embeddings as a self-paired dataset (query = target).

    Each row becomes one record; rows sharing a label form a class, so
    distinct-label batch sampling still holds.
    """
    x = as_float_matrix(embeddings, "embeddings")
    lab = np.asarray(labels, dtype=np.int64)
    class_ids, inverse = np.unique(lab, return_inverse=True)
    if len(class_ids) < 2:
        raise InvalidConfigError(
            "embedding file needs at least 2 distinct labels to form batches"
        )
    records_by_class = [
        np.flatnonzero(inverse == i).astype(np.int64) for i in range(len(class_ids))
    ]
    return PairDataset(x, x.copy(), lab, class_ids, records_by_class)


def load_dataset(source: str) -> PairDataset:
    """Resolve a --data argument.

    Accepts an inline JSON object (synthetic config), a path to a .json file
    with the same content, or a path to an .egae embedding file.
    """
    text = source.strip()
    if text.startswith("{"):
        return generate_dataset(SyntheticConfig.from_json(text))
    path = Path(source)
    suffix = path.suffix.lower()
    if suffix == ".json":
        return generate_dataset(SyntheticConfig.from_json(path.read_text()))
    if suffix == ".egae":
        return dataset_from_embeddings(*read_embeddings(path))
    raise InvalidConfigError(
        f"cannot interpret data source {source!r}: expected inline JSON, "
        "a .json config file, or an .egae embedding file"
    )
