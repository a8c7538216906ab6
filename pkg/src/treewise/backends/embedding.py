"""Sentence embedders for paraphrase detection.

The real engine plugs a sentence-transformer here; the shipped default is a
deterministic hashed bag-of-words embedder so offline runs and tests need no
model weights.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Mapping, Sequence

import numpy as np

from ..retrieval import tokenize

__all__ = ["Embedder", "HashingEmbedder", "FixtureEmbedder"]

Embedder = Callable[[str], np.ndarray]


def _token_slot(token: str, dim: int) -> int:
    digest = hashlib.md5(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


class HashingEmbedder:
    """Unit-norm hashed token-count vectors; cosine approximates lexical
    overlap.  Texts with no tokens embed to the zero vector."""

    def __init__(self, dim: int = 512) -> None:
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            vector[_token_slot(token, self.dim)] += 1.0
        norm = np.linalg.norm(vector)
        if norm > 0:
            vector /= norm
        return vector


class FixtureEmbedder:
    """Maps exact texts to fixed unit vectors; unknown texts fall back to a
    hashing embedder.  Useful for scripting paraphrase scenarios."""

    def __init__(self, vectors: Mapping[str, Sequence[float]], dim: int = 512) -> None:
        self._fallback = HashingEmbedder(dim)
        self._vectors: dict[str, np.ndarray] = {}
        for text, values in vectors.items():
            vec = np.asarray(values, dtype=np.float64)
            norm = np.linalg.norm(vec)
            self._vectors[text] = vec / norm if norm > 0 else vec

    def __call__(self, text: str) -> np.ndarray:
        known = self._vectors.get(text)
        return known if known is not None else self._fallback(text)
