"""Answer matching: text-similarity class assignment and answer containment."""
from __future__ import annotations

import string
import zlib
from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np

TRIGRAM_BINS = 4096


class Embedder(ABC):
    """Deterministic text embedding provider; vectors are unit-normalized."""

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class TrigramEmbedder(Embedder):
    """Hashed character-trigram embedding, the offline similarity fallback.

    Lowercases, pads word boundaries with spaces, hashes every character
    trigram into a fixed bin count vector, and L2-normalizes. Purely local and
    deterministic, so CI never needs a hosted encoder.
    """

    def __init__(self, bins: int = TRIGRAM_BINS):
        self.bins = bins
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        padded = f"  {text.casefold()}  "
        v = np.zeros(self.bins, dtype=np.float64)
        for i in range(len(padded) - 2):
            tri = padded[i : i + 3]
            v[zlib.crc32(tri.encode("utf-8")) % self.bins] += 1.0
        norm = float(np.linalg.norm(v))
        if norm > 0.0:
            v /= norm
        v.setflags(write=False)
        if len(self._cache) < 65536:
            self._cache[text] = v
        return v


def trigram_fallback_embedder() -> Embedder:
    return TrigramEmbedder()


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors; exactly 1.0 for identical vectors."""
    if np.array_equal(a, b):
        return 1.0
    return float(np.dot(a, b))


def match_class(
    response: str, categories: Sequence[str], embedder: Embedder
) -> tuple[str, float]:
    """Assign the category whose embedding is closest to the response.

    Ties on the winning cosine go to the lexicographically smallest category.
    """
    if not categories:
        raise ValueError("categories must be non-empty")
    rv = embedder.embed(response)
    best_score = -np.inf
    tied: list[str] = []
    for cat in categories:
        score = cosine(rv, embedder.embed(cat))
        if score > best_score:
            best_score = score
            tied = [cat]
        elif score == best_score:
            tied.append(cat)
    return min(tied), float(best_score)


class CategoryMatcher:
    """match_class with the category embeddings computed once."""

    def __init__(self, embedder: Embedder, categories: Sequence[str]):
        if not categories:
            raise ValueError("categories must be non-empty")
        self.embedder = embedder
        self.categories = list(categories)
        self._vectors = [embedder.embed(c) for c in self.categories]

    def match(self, response: str) -> tuple[str, float]:
        rv = self.embedder.embed(response)
        best_score = -np.inf
        tied: list[str] = []
        for cat, cv in zip(self.categories, self._vectors):
            score = cosine(rv, cv)
            if score > best_score:
                best_score = score
                tied = [cat]
            elif score == best_score:
                tied.append(cat)
        return min(tied), float(best_score)


def normalize_answer_text(text: str) -> str:
    """Casefold, collapse whitespace runs, and strip punctuation off token edges."""
    tokens = text.casefold().split()
    return " ".join(t.strip(string.punctuation) for t in tokens)


def contains_answer(response: str, gt: str, *, word_boundary: bool = False) -> bool:
    """True when the normalized ground-truth answer appears inside the response.

    Plain mode is substring containment (so "6" matches inside "68", a
    documented artifact); ``word_boundary`` requires the answer to appear as a
    contiguous whole-token run instead.
    """
    if not gt:
        raise ValueError("ground-truth answer must be non-empty")
    norm_resp = normalize_answer_text(response)
    norm_gt = normalize_answer_text(gt)
    if not word_boundary:
        return norm_gt in norm_resp
    resp_tokens = norm_resp.split()
    gt_tokens = norm_gt.split()
    if not gt_tokens:
        return False
    for i in range(len(resp_tokens) - len(gt_tokens) + 1):
        if resp_tokens[i : i + len(gt_tokens)] == gt_tokens:
            return True
    return False
