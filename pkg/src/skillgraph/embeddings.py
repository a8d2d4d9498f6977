"""Feature-hash text embeddings and similarity helpers.

The default provider needs no external service: it hashes token n-grams
into a fixed number of signed buckets and normalizes. Any object with an
``embed(text) -> np.ndarray`` method and a ``dim`` attribute can stand in,
including the HTTP-backed embedder in :mod:`skillgraph.http_providers`.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol, runtime_checkable

import numpy as np

DEFAULT_EMBED_DIM = 256

_TOKEN_RE = re.compile(r"[a-z0-9_\-]+")


def tokenize(text: str) -> list[str]:
    """Lowercased word-ish tokens; hyphens and underscores stay inside tokens."""
    return _TOKEN_RE.findall(text.lower())


def whitespace_token_count(text: str) -> int:
    """Provider-independent token count used for cost accounting."""
    return len(text.split())


@runtime_checkable
class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _bucket(token: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "big")
    return h % dim, (1.0 if h & 1 else -1.0)


class HashingEmbedder:
    """Deterministic in-process embedder: signed feature hashing of token n-grams.

    Unigrams and bigrams are hashed into ``dim`` buckets; the result is
    normalized to unit length. Text with no tokens maps to the all-zero
    sentinel vector (see :func:`is_sentinel`) so batch ingestion stays total.
    """

    def __init__(self, dim: int = DEFAULT_EMBED_DIM) -> None:
        if dim <= 0:
            raise ValueError(f"embedding dimension must be positive, got {dim}")
        self.dim = dim
        self._memo: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._memo.get(text)
        if cached is not None:
            return cached
        tokens = tokenize(text)
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in tokens:
            idx, sign = _bucket(gram, self.dim)
            vec[idx] += sign
        for first, second in zip(tokens, tokens[1:]):
            idx, sign = _bucket(f"{first} {second}", self.dim)
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        vec.setflags(write=False)
        self._memo[text] = vec
        return vec


def is_sentinel(vec: np.ndarray) -> bool:
    """True for the zero vector produced by tokenless input."""
    return not vec.any()


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine in [-1, 1]; zero whenever either vector is the sentinel."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def clamped_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine clamped to [0, 1]: edge masses and seed weights must be nonnegative."""
    return max(0.0, cosine_similarity(a, b))
