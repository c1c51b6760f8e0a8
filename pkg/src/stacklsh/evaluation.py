"""Retrieval quality, rank fidelity, guarantee metrics, sweeps, benchmarks.

All metrics are pure over immutable inputs.  Candidate sets come from the
LSH index; truth comes from exact linear scans with the chosen measure,
either as full nearest-neighbor rankings or as the set of pairs whose
closed-form candidate probability reaches 0.5.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    AllCombinationsExcluded,
    LengthMismatch,
    NoEligibleQueries,
)
from .lsh import (
    HashFamily,
    LshIndex,
    LshParams,
    build_index,
    exact_block_hamming,
    implied_similarity_threshold,
    query,
    query_ranked,
)
from .measures import DEFAULT_MEASURE_PARAMS, MeasureId, MeasureParams, similarity
from .traces import CorpusStats, CrashReport, StackTrace


@dataclass(frozen=True)
class QuerySet:
    """Query ids against a reference corpus under one measure and (L, K)."""

    query_ids: tuple[str, ...]
    corpus_ids: tuple[str, ...]
    measure: str
    params: LshParams


@dataclass
class EvalReport:
    """One evaluation run's metrics, shaped for JSON emission."""

    rr_at_k: dict[int, float]
    mrr: float
    kendall_tau: float
    guarantee_precision: float
    guarantee_recall: float
    guarantee_fscore: float
    mean_query_latency_s: float
    linear_scan_latency_s: float
    n_queries: int
    measure: str
    params: dict

    def to_json(self) -> str:
        obj = dict(self.__dict__)
        obj["rr_at_k"] = {str(k): v for k, v in self.rr_at_k.items()}
        return json.dumps(obj, sort_keys=True, indent=2)


def knn_oracle(
    item: Union[CrashReport, StackTrace],
    corpus: Sequence[CrashReport],
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    k: int,
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
) -> list[tuple[str, float]]:
    """Exact top-k by linear scan: descending similarity, ties by id.

    The query's own id is excluded when a report is passed.  A ``k``
    larger than the corpus returns the full ranking.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(item, CrashReport):
        trace, own_id = item.trace, item.id
    else:
        trace, own_id = item, None
    scored = [
        (r.id, similarity(measure, trace, r.trace, stats, measure_params))
        for r in corpus
        if r.id != own_id
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def recall_rate_at_k(
    candidates: Mapping[str, Iterable[str]],
    true_rankings: Mapping[str, Sequence[str]],
    k: int,
    *,
    require_k_candidates: bool = True,
) -> float:
    """Fraction of true top-k neighbors recovered among the candidates.

    Per the protocol, only queries with at least k candidates count;
    ``require_k_candidates=False`` switches to the unfiltered variant
    where every query counts (misses included).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    eligible = 0
    for qid, ranking in true_rankings.items():
        cand = set(candidates.get(qid, ()))
        if require_k_candidates and len(cand) < k:
            continue
        eligible += 1
        hits += sum(1 for nn in ranking[:k] if nn in cand)
    if eligible == 0:
        raise NoEligibleQueries(f"no query has >= {k} candidates")
    return hits / (k * eligible)


def mean_reciprocal_rank(
    candidates: Mapping[str, Sequence[str]],
    true_rankings: Mapping[str, Sequence[str]],
) -> float:
    """Average rank-ratio of each retrieved candidate vs its true rank.

    For every query, each candidate at position r of the (ordered)
    candidate list whose true rank is t contributes r / t, averaged over
    the candidate list; queries with no candidates contribute 0.
    """
    if not true_rankings:
        raise NoEligibleQueries("empty query set")
    total = 0.0
    for qid, ranking in true_rankings.items():
        cand = list(candidates.get(qid, ()))
        if not cand:
            continue
        true_rank = {cid: pos + 1 for pos, cid in enumerate(ranking)}
        ratios = [
            (pos + 1) / true_rank[cid]
            for pos, cid in enumerate(cand)
            if cid in true_rank
        ]
        if ratios:
            total += sum(ratios) / len(cand)
    return total / len(true_rankings)


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-adjusted Kendall rank correlation (the tau-b variant).

    ``(C - D) / sqrt((n0 - n1) (n0 - n2))`` over concordant/discordant
    pairs with tie corrections; NaN when either sequence is constant.
    Quadratic in the input length, evaluated in vectorized row blocks.
    """
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.ndim != 1 or xv.shape != yv.shape:
        raise LengthMismatch("inputs must be equal-length 1-d sequences")
    n = xv.shape[0]
    if n < 2:
        raise LengthMismatch("need at least two observations")
    concordant = discordant = ties_x = ties_y = 0
    cols = np.arange(n)
    block = max(1, min(512, (1 << 22) // max(n, 1)))
    for start in range(0, n, block):
        stop = min(start + block, n)
        upper = cols[None, :] > np.arange(start, stop)[:, None]
        sx = np.sign(xv[start:stop, None] - xv[None, :])
        sy = np.sign(yv[start:stop, None] - yv[None, :])
        prod = sx * sy
        concordant += int(np.count_nonzero(upper & (prod > 0)))
        discordant += int(np.count_nonzero(upper & (prod < 0)))
        ties_x += int(np.count_nonzero(upper & (sx == 0)))
        ties_y += int(np.count_nonzero(upper & (sy == 0)))
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0.0:
        return float("nan")
    return (concordant - discordant) / denom


def guarantee_scores(
    candidates: Mapping[str, Iterable[str]],
    truths: Mapping[str, Iterable[str]],
) -> tuple[float, float, float]:
    """Macro precision/recall/F over per-query candidate and truth sets.

    Queries with an empty truth set are excluded from recall averaging,
    queries with an empty candidate set from precision averaging; F is
    the harmonic mean of the two macro averages.
    """
    recall_terms = []
    precision_terms = []
    for qid, truth in truths.items():
        truth_set = set(truth)
        cand_set = set(candidates.get(qid, ()))
        inter = len(truth_set & cand_set)
        if truth_set:
            recall_terms.append(inter / len(truth_set))
        if cand_set:
            precision_terms.append(inter / len(cand_set))
    if not recall_terms or not precision_terms:
        raise NoEligibleQueries("every query has an empty truth or candidate set")
    recall = float(np.mean(recall_terms))
    precision = float(np.mean(precision_terms))
    fscore = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, fscore


def guarantee_truth_sets(
    queries: Sequence[CrashReport],
    corpus: Sequence[CrashReport],
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    k: int,
    l: int,
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
) -> dict[str, set[str]]:
    """Per-query set of corpus traces with candidate probability >= 0.5.

    The probability threshold inverts to a similarity threshold, so one
    exact scan per query suffices.
    """
    s_star = implied_similarity_threshold(k, l)
    truths: dict[str, set[str]] = {}
    for q in queries:
        truths[q.id] = {
            r.id
            for r in corpus
            if r.id != q.id
            and similarity(measure, q.trace, r.trace, stats, measure_params) >= s_star
        }
    return truths


def guarantee_metrics(
    queries: Sequence[CrashReport],
    corpus: Sequence[CrashReport],
    index: LshIndex,
    family: HashFamily,
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    k: int,
    l: int,
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
) -> tuple[float, float, float]:
    """Precision/recall/F of the index against the probability-0.5 truth."""
    truths = guarantee_truth_sets(queries, corpus, measure, stats, k, l, measure_params)
    candidates = {q.id: query(index, q, family) for q in queries}
    return guarantee_scores(candidates, truths)


@dataclass
class SweepEntry:
    l: int
    k: int
    threshold: float
    median_fscore: float
    iqr: float
    excluded: bool
    reason: str | None
    fscores: list[float] = field(default_factory=list, repr=False)


@dataclass
class SweepResult:
    entries: list[SweepEntry]
    selected_l: int
    selected_k: int

    @property
    def selected(self) -> tuple[int, int]:
        return (self.selected_l, self.selected_k)

    def to_csv(self) -> str:
        lines = ["l,k,threshold,median_fscore,iqr,excluded,reason"]
        for e in self.entries:
            lines.append(
                f"{e.l},{e.k},{e.threshold:.6f},{e.median_fscore:.6f},"
                f"{e.iqr:.6f},{int(e.excluded)},{e.reason or ''}"
            )
        return "\n".join(lines) + "\n"


def default_lk_grid(m: int) -> list[tuple[int, int]]:
    """Power-of-two (L, K) combinations with L * K <= m."""
    options = [1, 2, 4, 8, 16, 32, 64]
    return [(l, k) for l in options for k in options if l * k <= m]


def sweep_lk(
    queries: Sequence[CrashReport],
    corpus: Sequence[CrashReport],
    family: HashFamily,
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    grid: Sequence[tuple[int, int]],
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
    *,
    min_threshold: float = 0.3,
    max_threshold: float = 0.95,
    max_iqr: float = 0.3,
) -> SweepResult:
    """Per-(L, K) F-score distributions and the selected combination.

    Hash codes and exact similarities are computed once and re-sliced per
    combination.  A combination is excluded when its implied similarity
    threshold falls outside [min_threshold, max_threshold] or when the
    interquartile range of its per-query F-scores exceeds ``max_iqr``;
    among the rest the highest median F-score wins (ties break toward the
    lexicographically smallest (L, K)).
    """
    if not grid:
        raise AllCombinationsExcluded("empty grid")
    corpus_codes = {r.id: family.hash(r.trace) for r in corpus}
    query_codes = {q.id: family.hash(q.trace) for q in queries}
    exact_sims: dict[str, dict[str, float]] = {}
    for q in queries:
        exact_sims[q.id] = {
            r.id: similarity(measure, q.trace, r.trace, stats, measure_params)
            for r in corpus
            if r.id != q.id
        }

    entries: list[SweepEntry] = []
    for l, k in grid:
        if l * k > family.m:
            raise AllCombinationsExcluded(
                f"(L, K) = ({l}, {k}) needs {l * k} functions, family has {family.m}"
            )
        params = LshParams(m=family.m, k=k, l=l, b=family.b)
        tables: list[dict[int, set[str]]] = [dict() for _ in range(l)]
        for rid, code in corpus_codes.items():
            for j in range(l):
                tables[j].setdefault(code.table_key(j, k), set()).add(rid)
        threshold = implied_similarity_threshold(k, l)
        fscores: list[float] = []
        for qid, qcode in query_codes.items():
            sims = exact_sims[qid]
            truth = {rid for rid, s in sims.items() if s >= threshold}
            if not truth:
                continue
            cand: set[str] = set()
            for j in range(l):
                cand.update(tables[j].get(qcode.table_key(j, k), ()))
            cand.discard(qid)
            inter = len(cand & truth)
            recall_q = inter / len(truth)
            precision_q = inter / len(cand) if cand else 0.0
            if precision_q + recall_q == 0:
                fscores.append(0.0)
            else:
                fscores.append(2 * precision_q * recall_q / (precision_q + recall_q))
        if fscores:
            q25, q50, q75 = np.percentile(fscores, [25, 50, 75])
        else:
            q25 = q50 = q75 = float("nan")
        iqr = float(q75 - q25)
        reason = None
        if not fscores:
            reason = "no eligible queries"
        elif threshold < min_threshold:
            reason = f"threshold {threshold:.3f} below {min_threshold}"
        elif threshold > max_threshold:
            reason = f"threshold {threshold:.3f} above {max_threshold}"
        elif iqr > max_iqr:
            reason = f"iqr {iqr:.3f} above {max_iqr}"
        entries.append(
            SweepEntry(
                l=l,
                k=k,
                threshold=threshold,
                median_fscore=float(q50),
                iqr=iqr,
                excluded=reason is not None,
                reason=reason,
                fscores=fscores,
            )
        )

    admissible = [e for e in entries if not e.excluded]
    if not admissible:
        raise AllCombinationsExcluded("every (L, K) combination was excluded")
    best = sorted(admissible, key=lambda e: (-e.median_fscore, e.l, e.k))[0]
    return SweepResult(entries=entries, selected_l=best.l, selected_k=best.k)


@dataclass
class BenchResult:
    lsh_mean_s: float
    scan_mean_s: float
    repetitions: int
    n_queries: int


def bench(
    queries: Sequence[CrashReport],
    corpus: Sequence[CrashReport],
    index: LshIndex,
    family: HashFamily,
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
    repetitions: int = 3,
    scan_k: int = 10,
) -> BenchResult:
    """Mean wall-clock latency per query: ranked LSH lookup vs linear scan.

    Runs one warm-up pass before timing and averages over at least three
    repetitions.
    """
    if repetitions < 3:
        raise ValueError("benchmarks need at least 3 repetitions")
    by_id = {r.id: r for r in corpus}
    for q in queries[:1]:
        query_ranked(index, q, family, measure, stats, by_id, measure_params)
        knn_oracle(q, corpus, measure, stats, scan_k, measure_params)

    lsh_total = 0.0
    scan_total = 0.0
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for q in queries:
            query_ranked(index, q, family, measure, stats, by_id, measure_params)
        lsh_total += time.perf_counter() - t0
        t0 = time.perf_counter()
        for q in queries:
            knn_oracle(q, corpus, measure, stats, scan_k, measure_params)
        scan_total += time.perf_counter() - t0
    denom = repetitions * len(queries)
    return BenchResult(
        lsh_mean_s=lsh_total / denom,
        scan_mean_s=scan_total / denom,
        repetitions=repetitions,
        n_queries=len(queries),
    )


def evaluate(
    queries: Sequence[CrashReport],
    corpus: Sequence[CrashReport],
    family: HashFamily,
    measure: Union[MeasureId, str],
    stats: CorpusStats,
    params: LshParams,
    measure_params: MeasureParams = DEFAULT_MEASURE_PARAMS,
    *,
    rr_ks: Sequence[int] = (1, 5),
    tau_pair_cap: int = 2000,
    seed: int = 0,
    bench_repetitions: int = 3,
) -> EvalReport:
    """Full evaluation protocol against one family at one (L, K)."""
    index = build_index(family, corpus, params)
    by_id = {r.id: r for r in corpus}

    rankings: dict[str, list[str]] = {}
    candidate_lists: dict[str, list[str]] = {}
    for q in queries:
        full = knn_oracle(q, corpus, measure, stats, len(corpus), measure_params)
        rankings[q.id] = [cid for cid, _ in full]
        ranked = query_ranked(index, q, family, measure, stats, by_id, measure_params)
        candidate_lists[q.id] = [cid for cid, _ in ranked]

    rr: dict[int, float] = {}
    for k in rr_ks:
        try:
            rr[k] = recall_rate_at_k(candidate_lists, rankings, k)
        except NoEligibleQueries:
            rr[k] = float("nan")
    mrr = mean_reciprocal_rank(candidate_lists, rankings)

    rng = np.random.default_rng(seed)
    qs = list(queries)
    cs = list(corpus)
    sims = []
    code_sims = []
    q_codes = {q.id: family.hash(q.trace) for q in qs}
    c_codes = {r.id: family.hash(r.trace) for r in cs}
    n_pairs = min(tau_pair_cap, len(qs) * len(cs))
    for _ in range(n_pairs):
        q = qs[rng.integers(len(qs))]
        r = cs[rng.integers(len(cs))]
        if q.id == r.id:
            continue
        sims.append(similarity(measure, q.trace, r.trace, stats, measure_params))
        code_sims.append(exact_block_hamming(q_codes[q.id], c_codes[r.id]))
    tau = kendall_tau(sims, code_sims) if len(sims) >= 2 else float("nan")

    precision, recall, fscore = guarantee_metrics(
        queries, corpus, index, family, measure, stats, params.k, params.l, measure_params
    )
    timing = bench(
        queries, corpus, index, family, measure, stats, measure_params, bench_repetitions
    )
    return EvalReport(
        rr_at_k=rr,
        mrr=mrr,
        kendall_tau=tau,
        guarantee_precision=precision,
        guarantee_recall=recall,
        guarantee_fscore=fscore,
        mean_query_latency_s=timing.lsh_mean_s,
        linear_scan_latency_s=timing.scan_mean_s,
        n_queries=len(queries),
        measure=str(MeasureId(measure).value),
        params={"m": params.m, "k": params.k, "l": params.l, "b": params.b},
    )
