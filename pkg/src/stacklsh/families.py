"""Reference LSH families with known guarantees: MinHash and SimHash.

Both are exposed through the same hash-family surface as the learned
encoder so they can back the multi-table index interchangeably.  MinHash
scalar collisions estimate the Jaccard coefficient of the frame token
sets; SimHash bits estimate the angle between bag-of-words (or TF-IDF)
feature vectors.
"""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import EmptyTokenSet, ZeroVector
from .lsh import HashCode, pack_bits
from .traces import CorpusStats, StackTrace, trace_tokens

#: Mersenne prime modulus of the pairwise-independent integer hash family;
#: small enough that (a * x + b) stays exact in 64-bit arithmetic.
_MERSENNE_31 = (1 << 31) - 1


class MinHashFamily(BaseEstimator):
    """m * b seeded universal integer hash functions reduced to min-hash bits.

    Each scalar function is ``min over tokens of (a * x + c) mod p`` with
    p = 2**31 - 1; collisions of the scalar minima estimate the Jaccard
    coefficient of the token sets.  For indexing, each minimum is reduced
    to its lowest bit and the bits are grouped b per block, which keeps
    one hash-code shape across all families (the Jaccard guarantee holds
    for the scalar values, not the packed bits).
    """

    def __init__(
        self,
        m: int = 64,
        b: int = 8,
        seed: int = 0,
        granularity: str = "method",
    ) -> None:
        self.m = m
        self.b = b
        self.seed = seed
        self.granularity = granularity

    def fit(self, stats: CorpusStats, y=None) -> "MinHashFamily":
        """Bind the family to a corpus vocabulary and draw its functions."""
        rng = np.random.default_rng(self.seed)
        n = self.m * self.b
        self.coef_a_ = rng.integers(1, _MERSENNE_31, size=n, dtype=np.int64)
        self.coef_c_ = rng.integers(0, _MERSENNE_31, size=n, dtype=np.int64)
        self.vocab_digest_ = stats.digest()
        return self

    @staticmethod
    def _token_ids(tokens: Iterable[str]) -> np.ndarray:
        # digesting every token (in-vocabulary or not) spreads ids over the
        # whole modulus; consecutive vocabulary indexes would give the
        # linear hash family a lattice structure that biases the minima
        ids = {
            int.from_bytes(
                hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big"
            )
            % _MERSENNE_31
            for token in set(tokens)
        }
        return np.fromiter(ids, dtype=np.int64, count=len(ids))

    def scalar_hashes(self, trace: StackTrace) -> np.ndarray:
        """The m * b scalar min-hash values of the trace's token set."""
        check_is_fitted(self, "coef_a_")
        ids = self._token_ids(trace_tokens(trace, self.granularity))
        if ids.size == 0:
            raise EmptyTokenSet("trace yields no tokens to hash")
        values = (self.coef_a_[:, None] * ids[None, :] + self.coef_c_[:, None]) % _MERSENNE_31
        return values.min(axis=1)

    def hash(self, trace: StackTrace) -> HashCode:
        return pack_bits(self.scalar_hashes(trace) & 1, self.m, self.b)

    def transform(self, traces: Sequence[StackTrace]) -> list[HashCode]:
        return [self.hash(t) for t in traces]

    def spec(self) -> dict:
        check_is_fitted(self, "coef_a_")
        return {
            "type": "minhash",
            "seed": self.seed,
            "m": self.m,
            "b": self.b,
            "granularity": str(self.granularity),
            "vocab_digest": self.vocab_digest_,
        }

    def fingerprint(self) -> str:
        payload = json.dumps(self.spec(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


class SimHashFamily(BaseEstimator):
    """m * b seeded random hyperplanes over the corpus feature space.

    Each output bit is the sign of the projection of the trace's
    bag-of-words (or TF-IDF) vector onto one standard-normal hyperplane.
    The per-bit collision probability is ``1 - theta / pi``, monotone in
    the cosine but not the identity mapping.
    """

    def __init__(
        self,
        m: int = 64,
        b: int = 8,
        seed: int = 0,
        weighting: str = "counts",
        granularity: str = "method",
    ) -> None:
        self.m = m
        self.b = b
        self.seed = seed
        self.weighting = weighting
        self.granularity = granularity

    def fit(self, stats: CorpusStats, y=None) -> "SimHashFamily":
        if self.weighting not in ("counts", "tfidf"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        rng = np.random.default_rng(self.seed)
        vocab = dict(stats.vocabulary)
        # hyperplanes come off the seeded stream in one fixed draw; the
        # vocabulary index order defines the feature dimension order
        self.planes_ = rng.standard_normal((self.m * self.b, len(vocab)))
        self.vocabulary_ = vocab
        self.vocab_digest_ = stats.digest()
        self.idf_ = np.zeros(len(vocab))
        for token, idx in vocab.items():
            self.idf_[idx] = stats.idf_of(token)
        return self

    def features(self, trace: StackTrace) -> np.ndarray:
        """Dense feature vector over the vocabulary; OOV tokens contribute 0."""
        check_is_fitted(self, "planes_")
        vec = np.zeros(len(self.vocabulary_))
        for token in trace_tokens(trace, self.granularity):
            idx = self.vocabulary_.get(token)
            if idx is not None:
                vec[idx] += 1.0
        if self.weighting == "tfidf":
            vec *= self.idf_
        return vec

    def projections(self, trace: StackTrace) -> np.ndarray:
        vec = self.features(trace)
        if not np.any(vec):
            raise ZeroVector("trace has an all-zero feature vector")
        return self.planes_ @ vec

    def bit_values(self, trace: StackTrace) -> np.ndarray:
        """The m * b sign bits (1 where the projection is >= 0)."""
        return (self.projections(trace) >= 0.0).astype(np.int64)

    def hash(self, trace: StackTrace) -> HashCode:
        return pack_bits(self.bit_values(trace), self.m, self.b)

    def transform(self, traces: Sequence[StackTrace]) -> list[HashCode]:
        return [self.hash(t) for t in traces]

    def spec(self) -> dict:
        check_is_fitted(self, "planes_")
        return {
            "type": "simhash",
            "seed": self.seed,
            "m": self.m,
            "b": self.b,
            "weighting": self.weighting,
            "granularity": str(self.granularity),
            "vocab_digest": self.vocab_digest_,
        }

    def fingerprint(self) -> str:
        payload = json.dumps(self.spec(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()
