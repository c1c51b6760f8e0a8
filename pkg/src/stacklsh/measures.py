"""Ground-truth stack-trace similarity measures, each mapping to [0, 1].

Twelve measures are exposed behind one dispatch function: Jaccard and
cosine over bag-of-words / bigram / TF-IDF representations, plain edit
similarity, and the position- and frequency-aware alignment measures
(PDM, Brodie, DURFEX, Lerch, Moroo, TraceSim).  All of them are
symmetric, score 1 on identical traces, and are pure functions of their
inputs given immutable corpus statistics.

Free coefficients default to neutral values and are surfaced through
:class:`MeasureParams`; no claim of numeric equivalence with the original
authors' implementations is made.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

from .traces import CorpusStats, FrameGranularity, StackTrace, trace_tokens


class MeasureId(str, Enum):
    """Closed set of supported similarity measures."""

    JACCARD_BOW = "JaccardBow"
    JACCARD_BIGRAM = "JaccardBigram"
    COSINE_BOW = "CosineBow"
    COSINE_BIGRAM = "CosineBigram"
    COSINE_TFIDF = "CosineTfidf"
    EDIT_SIM = "EditSim"
    PDM = "Pdm"
    BRODIE = "Brodie"
    DURFEX = "Durfex"
    LERCH = "Lerch"
    MOROO = "Moroo"
    TRACESIM = "TraceSim"


STATS_FREE_MEASURES = frozenset(
    {
        MeasureId.JACCARD_BOW,
        MeasureId.JACCARD_BIGRAM,
        MeasureId.COSINE_BOW,
        MeasureId.COSINE_BIGRAM,
        MeasureId.EDIT_SIM,
        MeasureId.PDM,
        MeasureId.DURFEX,
    }
)


@dataclass(frozen=True)
class MeasureParams:
    """Free coefficients of the parameterized measures.

    ``pdm_c`` decays the distance to the top frame, ``pdm_o`` decays the
    alignment offset (it also drives the offset decay in Brodie's
    alignment score).  TraceSim weights a frame at depth i with token t
    as ``(1 / (i + 1) ** alpha) * sigmoid(beta * (idf(t) - gamma))``.
    """

    pdm_c: float = 1.0
    pdm_o: float = 1.0
    tracesim_alpha: float = 1.0
    tracesim_beta: float = 1.0
    tracesim_gamma: float = 1.0
    moroo_weight: float = 0.5
    durfex_n: int = 2

    def __post_init__(self) -> None:
        for name in ("pdm_c", "pdm_o", "tracesim_alpha", "tracesim_beta", "tracesim_gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.moroo_weight <= 1.0:
            raise ValueError("moroo_weight must be in [0, 1]")
        if self.durfex_n < 1:
            raise ValueError("durfex_n must be >= 1")


DEFAULT_MEASURE_PARAMS = MeasureParams()


def _clip01(value: float) -> float:
    # guard against float fuzz like 1.0000000000000002 from dot products
    return 0.0 if value < 0.0 else 1.0 if value > 1.0 else value


def _ngrams(tokens: Sequence[str], n: int) -> list:
    if n == 1:
        return list(tokens)
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _cosine_of_counts(ca: Counter, cb: Counter) -> float:
    """Cosine of two count vectors; two empty vectors compare as 1.

    The identical-degenerate-inputs-score-1 convention mirrors the empty
    n-gram set rule for Jaccard.
    """
    if ca == cb:
        return 1.0  # identical bags (including two empty ones) score 1 exactly
    if not ca or not cb:
        return 0.0
    dot = sum(w * cb[t] for t, w in ca.items() if t in cb)
    na = math.sqrt(sum(w * w for w in ca.values()))
    nb = math.sqrt(sum(w * w for w in cb.values()))
    return _clip01(dot / (na * nb))


def jaccard_ngram(a: StackTrace, b: StackTrace, n: int = 1) -> float:
    """Jaccard coefficient over frame n-gram sets (n = 1 or 2).

    The bigram set of a single-frame trace is empty; two empty sets
    compare as similarity 1.
    """
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    sa = set(_ngrams(trace_tokens(a), n))
    sb = set(_ngrams(trace_tokens(b), n))
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def cosine(
    a: StackTrace,
    b: StackTrace,
    weighting: str = "counts",
    n: int = 1,
    stats: CorpusStats | None = None,
) -> float:
    """Cosine similarity over n-gram count vectors or TF-IDF vectors."""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    ca: Counter = Counter(_ngrams(trace_tokens(a), n))
    cb: Counter = Counter(_ngrams(trace_tokens(b), n))
    if weighting == "tfidf":
        if stats is None:
            raise ValueError("TF-IDF weighting needs corpus statistics")
        if n != 1:
            raise ValueError("TF-IDF weighting is defined over unigrams")
        ca = Counter({t: tf * stats.idf_of(t) for t, tf in ca.items()})
        cb = Counter({t: tf * stats.idf_of(t) for t, tf in cb.items()})
    elif weighting != "counts":
        raise ValueError(f"unknown weighting {weighting!r}")
    return _cosine_of_counts(ca, cb)


def edit_sim(a: StackTrace, b: StackTrace) -> float:
    """1 - Levenshtein(frames) / max(|a|, |b|) with unit costs."""
    ta, tb = trace_tokens(a), trace_tokens(b)
    return 1.0 - _levenshtein(ta, tb) / max(len(ta), len(tb))


def _levenshtein(x: Sequence, y: Sequence) -> int:
    if x == y:
        return 0
    if len(x) < len(y):
        x, y = y, x
    prev = list(range(len(y) + 1))
    for i, xi in enumerate(x, start=1):
        cur = [i]
        for j, yj in enumerate(y, start=1):
            cur.append(
                min(
                    prev[j] + 1,
                    cur[j - 1] + 1,
                    prev[j - 1] + (0 if xi == yj else 1),
                )
            )
        prev = cur
    return prev[-1]


def _pdm_match_weight(i: int, j: int, c: float, o: float) -> float:
    """Contribution of matching position i against position j."""
    return math.exp(-c * min(i, j)) * math.exp(-o * abs(i - j))


def pdm(a: StackTrace, b: StackTrace, c: float = 1.0, o: float = 1.0) -> float:
    """Position-dependent matching over aligned identical frames.

    A dynamic program finds the monotone matching maximizing the sum of
    ``exp(-c * min(i, j)) * exp(-o * |i - j|)`` over matched equal frames;
    the total is normalized by the perfect self-alignment score of the
    shorter trace, which bounds the result to [0, 1].
    """
    if c <= 0 or o <= 0:
        raise ValueError("decay coefficients must be positive")
    ta, tb = trace_tokens(a), trace_tokens(b)
    na, nb = len(ta), len(tb)
    best = [[0.0] * (nb + 1) for _ in range(na + 1)]
    for i in range(1, na + 1):
        row = best[i]
        prev = best[i - 1]
        for j in range(1, nb + 1):
            score = max(prev[j], row[j - 1])
            if ta[i - 1] == tb[j - 1]:
                score = max(score, prev[j - 1] + _pdm_match_weight(i - 1, j - 1, c, o))
            row[j] = score
    denom = sum(math.exp(-c * i) for i in range(min(na, nb)))
    return _clip01(best[na][nb] / denom)


def brodie(a: StackTrace, b: StackTrace, stats: CorpusStats, o: float = 1.0) -> float:
    """Global alignment weighted by frame rarity and position offset.

    Needleman-Wunsch with zero gap and mismatch penalties; matching token
    t at positions (i, j) scores ``idf_norm(t) * exp(-o * |i - j|)`` where
    ``idf_norm`` divides by the corpus maximum IDF (uniform weights when
    every IDF is zero).  The total is normalized by the self-alignment
    score of the longer trace (the larger self score on equal lengths,
    which keeps the measure symmetric).
    """
    ta, tb = trace_tokens(a), trace_tokens(b)
    max_idf = max(stats.idf.values(), default=0.0)

    def idf_norm(token: str) -> float:
        if max_idf <= 0.0:
            return 1.0
        return stats.idf_of(token) / max_idf

    na, nb = len(ta), len(tb)
    best = [[0.0] * (nb + 1) for _ in range(na + 1)]
    for i in range(1, na + 1):
        row = best[i]
        prev = best[i - 1]
        for j in range(1, nb + 1):
            score = max(prev[j], row[j - 1])
            if ta[i - 1] == tb[j - 1]:
                score = max(
                    score,
                    prev[j - 1] + idf_norm(ta[i - 1]) * math.exp(-o * abs(i - j)),
                )
            row[j] = score

    self_a = sum(idf_norm(t) for t in ta)
    self_b = sum(idf_norm(t) for t in tb)
    if na > nb:
        denom = self_a
    elif nb > na:
        denom = self_b
    else:
        denom = max(self_a, self_b)
    if denom <= 0.0:
        return 1.0 if ta == tb else 0.0
    return _clip01(best[na][nb] / denom)


def durfex(a: StackTrace, b: StackTrace, n: int = 2) -> float:
    """Cosine over package-level n-grams with consecutive duplicates collapsed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pa = _collapse(trace_tokens(a, FrameGranularity.PACKAGE))
    pb = _collapse(trace_tokens(b, FrameGranularity.PACKAGE))
    ca = Counter(tuple(pa[i : i + n]) for i in range(len(pa) - n + 1))
    cb = Counter(tuple(pb[i : i + n]) for i in range(len(pb) - n + 1))
    return _cosine_of_counts(ca, cb)


def _collapse(tokens: Sequence[str]) -> list[str]:
    out: list[str] = []
    for t in tokens:
        if not out or out[-1] != t:
            out.append(t)
    return out


def lerch(a: StackTrace, b: StackTrace, stats: CorpusStats) -> float:
    """TF-IDF retrieval score, symmetrized and normalized to [0, 1].

    The directed score is ``score(x, y) = sum over shared tokens of
    tf_y(t) * idf(t)^2``; the similarity is the geometric mean of the two
    directed scores over the geometric mean of the self scores, which is
    symmetric and bounded by 1.  A zero self score yields 0 except for
    identical token bags, which score 1.
    """
    ca: Counter = Counter(trace_tokens(a))
    cb: Counter = Counter(trace_tokens(b))

    def directed(cx: Counter, cy: Counter) -> float:
        return sum(cy[t] * stats.idf_of(t) ** 2 for t in cx if t in cy)

    self_a = directed(ca, ca)
    self_b = directed(cb, cb)
    if self_a <= 0.0 or self_b <= 0.0:
        return 1.0 if ca == cb else 0.0
    return _clip01(math.sqrt(directed(ca, cb) * directed(cb, ca) / (self_a * self_b)))


def moroo(
    a: StackTrace,
    b: StackTrace,
    stats: CorpusStats,
    weight: float = 0.5,
    pdm_c: float = 1.0,
    pdm_o: float = 1.0,
) -> float:
    """Convex combination of TF-IDF cosine and PDM."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must be in [0, 1]")
    return weight * cosine(a, b, "tfidf", 1, stats) + (1.0 - weight) * pdm(
        a, b, pdm_c, pdm_o
    )


def _tracesim_weights(
    tokens: Sequence[str],
    stats: CorpusStats,
    alpha: float,
    beta: float,
    gamma: float,
) -> list[float]:
    return [
        (1.0 / (i + 1) ** alpha) / (1.0 + math.exp(-beta * (stats.idf_of(t) - gamma)))
        for i, t in enumerate(tokens)
    ]


def tracesim(
    a: StackTrace,
    b: StackTrace,
    stats: CorpusStats,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 1.0,
) -> float:
    """Weighted Levenshtein with depth- and rarity-dependent frame weights.

    A frame at depth i with token t weighs ``(1 / (i + 1)^alpha)`` times a
    logistic squashing of its IDF.  Insertions and deletions cost the
    frame's weight, substituting mismatched tokens costs both weights, and
    the distance is normalized by the total weight of both traces.
    """
    if alpha <= 0 or beta <= 0 or gamma <= 0:
        raise ValueError("alpha, beta, gamma must be positive")
    ta, tb = trace_tokens(a), trace_tokens(b)
    wa = _tracesim_weights(ta, stats, alpha, beta, gamma)
    wb = _tracesim_weights(tb, stats, alpha, beta, gamma)

    na, nb = len(ta), len(tb)
    prev = [0.0] * (nb + 1)
    for j in range(1, nb + 1):
        prev[j] = prev[j - 1] + wb[j - 1]
    for i in range(1, na + 1):
        cur = [prev[0] + wa[i - 1]] + [0.0] * nb
        for j in range(1, nb + 1):
            sub = 0.0 if ta[i - 1] == tb[j - 1] else wa[i - 1] + wb[j - 1]
            cur[j] = min(
                prev[j] + wa[i - 1],
                cur[j - 1] + wb[j - 1],
                prev[j - 1] + sub,
            )
        prev = cur
    total = sum(wa) + sum(wb)
    return _clip01(1.0 - prev[nb] / total)


def similarity(
    measure: Union[MeasureId, str],
    a: StackTrace,
    b: StackTrace,
    stats: CorpusStats | None = None,
    params: MeasureParams = DEFAULT_MEASURE_PARAMS,
) -> float:
    """Dispatch to one of the twelve measures.

    ``stats`` may be omitted only for the measures that need no corpus
    statistics.  Out-of-vocabulary tokens never raise; their IDF is
    floored at ``ln N``.
    """
    m = MeasureId(measure)
    if stats is None and m not in STATS_FREE_MEASURES:
        raise ValueError(f"{m.value} requires corpus statistics")
    if m is MeasureId.JACCARD_BOW:
        return jaccard_ngram(a, b, 1)
    if m is MeasureId.JACCARD_BIGRAM:
        return jaccard_ngram(a, b, 2)
    if m is MeasureId.COSINE_BOW:
        return cosine(a, b, "counts", 1)
    if m is MeasureId.COSINE_BIGRAM:
        return cosine(a, b, "counts", 2)
    if m is MeasureId.COSINE_TFIDF:
        return cosine(a, b, "tfidf", 1, stats)
    if m is MeasureId.EDIT_SIM:
        return edit_sim(a, b)
    if m is MeasureId.PDM:
        return pdm(a, b, params.pdm_c, params.pdm_o)
    if m is MeasureId.BRODIE:
        return brodie(a, b, stats, params.pdm_o)
    if m is MeasureId.DURFEX:
        return durfex(a, b, params.durfex_n)
    if m is MeasureId.LERCH:
        return lerch(a, b, stats)
    if m is MeasureId.MOROO:
        return moroo(a, b, stats, params.moroo_weight, params.pdm_c, params.pdm_o)
    if m is MeasureId.TRACESIM:
        return tracesim(
            a, b, stats, params.tracesim_alpha, params.tracesim_beta, params.tracesim_gamma
        )
    raise ValueError(f"unhandled measure {m!r}")  # pragma: no cover
