"""Language-to-feature pipeline: hashed token embeddings, pooling, ReLU expansion.

The featurizer stands in for a frozen pretrained text encoder. Tokens are
hashed into a fixed number of buckets and every bucket owns a fixed
pseudo-random embedding, so the whole pipeline is a pure function of the text
and the configuration: identical inputs always produce bit-identical feature
matrices. Pooled embeddings are widened by a frozen random projection
followed by ReLU, which raises the linear separability of the classes the
router has to tell apart.

Users with a real encoder can skip the hashing stage entirely and feed
per-instruction embedding matrices through :func:`read_embedding_records`;
pooling and expansion are unchanged downstream.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "EMPTY_TOKEN",
    "FeaturizerConfig",
    "SequenceFeatures",
    "ExpansionParams",
    "EmbeddingRecord",
    "tokenize",
    "embed_sequence",
    "mean_pool",
    "expand",
    "featurize_one",
    "featurize_batch",
    "read_embedding_records",
]

# Sentinel token for instructions that contain no alphanumeric characters;
# routing must stay total over arbitrary user input.
EMPTY_TOKEN = "<empty>"

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")


@dataclass(frozen=True)
class FeaturizerConfig:
    """Deterministic featurizer settings.

    Two equal configs featurize equal text bit-identically. The raw embedding
    dimension ``d_f`` must sit strictly below the expanded dimension ``d_e``.
    """

    seed: int = 0
    d_f: int = 64
    d_e: int = 1024
    vocab_buckets: int = 1 << 16
    lowercase: bool = True

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.d_f <= 0 or self.d_e <= 0 or self.vocab_buckets <= 0:
            raise ValueError("d_f, d_e and vocab_buckets must be positive")
        if not self.d_f < self.d_e:
            raise ValueError(
                f"raw dimension d_f={self.d_f} must be strictly smaller "
                f"than expanded dimension d_e={self.d_e}"
            )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "d_f": self.d_f,
            "d_e": self.d_e,
            "vocab_buckets": self.vocab_buckets,
            "lowercase": self.lowercase,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeaturizerConfig":
        try:
            return cls(
                seed=int(doc["seed"]),
                d_f=int(doc["d_f"]),
                d_e=int(doc["d_e"]),
                vocab_buckets=int(doc["vocab_buckets"]),
                lowercase=bool(doc["lowercase"]),
            )
        except KeyError as exc:
            raise ValueError(f"featurizer config is missing field {exc}") from exc


@dataclass(frozen=True)
class SequenceFeatures:
    """Per-token embedding rows for one instruction, shape (token_count, d_f)."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValueError("rows must be a 2-D matrix with at least one row")
        if not np.isfinite(rows).all():
            raise ValueError("rows must contain only finite values")
        object.__setattr__(self, "rows", rows)

    @property
    def token_count(self) -> int:
        return self.rows.shape[0]

    @property
    def width(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class ExpansionParams:
    """Frozen random projection that widens pooled features before ReLU."""

    projection: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        projection = np.asarray(self.projection, dtype=np.float64)
        if projection.ndim != 2:
            raise ValueError("projection must be a d_f x d_e matrix")
        if not np.isfinite(projection).all():
            raise ValueError("projection must contain only finite values")
        projection = projection.copy()
        projection.setflags(write=False)
        object.__setattr__(self, "projection", projection)

    @classmethod
    def create(cls, seed: int, d_f: int, d_e: int) -> "ExpansionParams":
        """Deterministically regenerate the projection from (seed, d_f, d_e).

        Entries are N(0, 1/d_f); the same triple always yields the identical
        matrix, so states only need to persist the seed.
        """
        if d_f <= 0 or d_e <= 0:
            raise ValueError("d_f and d_e must be positive")
        rng = np.random.default_rng([seed, d_f, d_e])
        projection = rng.standard_normal((d_f, d_e)) / math.sqrt(d_f)
        return cls(projection=projection, seed=seed)

    @property
    def d_f(self) -> int:
        return self.projection.shape[0]

    @property
    def d_e(self) -> int:
        return self.projection.shape[1]


def tokenize(text: str, config: FeaturizerConfig) -> list[str]:
    """Split on whitespace and punctuation; degenerate input yields the sentinel.

    Lowercases first when the config says so. The same string always maps to
    the same token sequence.
    """
    if config.lowercase:
        text = text.lower()
    tokens = _TOKEN_RE.findall(text)
    return tokens if tokens else [EMPTY_TOKEN]


def _bucket(token: str, seed: int, vocab_buckets: int) -> int:
    digest = hashlib.blake2b(
        token.encode("utf-8"),
        digest_size=8,
        key=seed.to_bytes(8, "little"),
    ).digest()
    return int.from_bytes(digest, "big") % vocab_buckets


@lru_cache(maxsize=65536)
def _bucket_embedding(bucket: int, d_f: int) -> np.ndarray:
    # The bucket index seeds the vector; entries are standard normal scaled
    # by 1/sqrt(d_f) so the expected squared row norm is 1.
    rng = np.random.default_rng(bucket)
    vec = rng.standard_normal(d_f) / math.sqrt(d_f)
    vec.setflags(write=False)
    return vec


def embed_sequence(tokens: Sequence[str], config: FeaturizerConfig) -> SequenceFeatures:
    """Hash each token into a bucket and look up that bucket's fixed embedding."""
    if not tokens:
        raise ValueError("token sequence must be non-empty")
    rows = np.empty((len(tokens), config.d_f), dtype=np.float64)
    for i, token in enumerate(tokens):
        rows[i] = _bucket_embedding(
            _bucket(token, config.seed, config.vocab_buckets), config.d_f
        )
    return SequenceFeatures(rows=rows)


def mean_pool(seq: SequenceFeatures) -> np.ndarray:
    """Average over the token axis, collapsing variable-length sequences."""
    return seq.rows.mean(axis=0)


def expand(pooled: np.ndarray, params: ExpansionParams) -> np.ndarray:
    """Project the pooled vector up to d_e dimensions and clip at zero."""
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.shape != (params.d_f,):
        raise ValueError(
            f"pooled vector has shape {pooled.shape}, expected ({params.d_f},)"
        )
    return np.maximum(pooled @ params.projection, 0.0)


def _check_pipeline(config: FeaturizerConfig, params: ExpansionParams) -> None:
    if (params.d_f, params.d_e) != (config.d_f, config.d_e):
        raise ValueError(
            f"expansion params are {params.d_f}x{params.d_e} but the config "
            f"expects {config.d_f}x{config.d_e}"
        )


def featurize_one(
    text: str, config: FeaturizerConfig, params: ExpansionParams
) -> np.ndarray:
    """Full pipeline for one instruction: tokenize, embed, pool, expand."""
    _check_pipeline(config, params)
    return expand(mean_pool(embed_sequence(tokenize(text, config), config)), params)


def featurize_batch(
    texts: Sequence[str], config: FeaturizerConfig, params: ExpansionParams
) -> np.ndarray:
    """Featurize many instructions; row i belongs to texts[i]."""
    if not texts:
        raise ValueError("at least one text is required")
    _check_pipeline(config, params)
    out = np.empty((len(texts), config.d_e), dtype=np.float64)
    for i, text in enumerate(texts):
        out[i] = expand(
            mean_pool(embed_sequence(tokenize(text, config), config)), params
        )
    return out


@dataclass(frozen=True)
class EmbeddingRecord:
    """Externally supplied per-instruction features plus their task label."""

    task_id: int
    features: SequenceFeatures


def _iter_lines(source: str | Path | IO[str] | Iterable[str]) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            yield from handle
    else:
        yield from source


def read_embedding_records(
    source: str | Path | IO[str] | Iterable[str],
) -> Iterator[EmbeddingRecord]:
    """Parse newline-delimited ``{"features": [[...], ...], "task_id": int}`` records.

    Accepts a path, an open text stream, or any iterable of lines; blank lines
    are skipped. Ragged rows, non-finite values, or a missing task id reject
    the record, naming its 0-based index.
    """
    index = 0
    for line in _iter_lines(source):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"record {index}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ValueError(f"record {index}: expected a JSON object")
        if "task_id" not in doc:
            raise ValueError(f"record {index}: missing task_id")
        task_id = doc["task_id"]
        if not isinstance(task_id, int) or isinstance(task_id, bool):
            raise ValueError(f"record {index}: task_id must be an integer")
        raw = doc.get("features")
        if not isinstance(raw, list) or not raw:
            raise ValueError(f"record {index}: features must be a non-empty list")
        widths = {len(row) if isinstance(row, list) else -1 for row in raw}
        if len(widths) != 1 or -1 in widths or 0 in widths:
            raise ValueError(f"record {index}: feature rows are ragged or empty")
        try:
            rows = np.array(raw, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"record {index}: non-numeric feature value") from exc
        if not np.isfinite(rows).all():
            raise ValueError(f"record {index}: non-finite feature value")
        yield EmbeddingRecord(task_id=task_id, features=SequenceFeatures(rows=rows))
        index += 1
