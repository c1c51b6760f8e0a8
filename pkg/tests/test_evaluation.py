"""Retrieval metrics, guarantee scores, sweeps, and the benchmark harness."""

import math

import numpy as np
import pytest
import scipy.stats

from stacklsh.errors import (
    AllCombinationsExcluded,
    LengthMismatch,
    NoEligibleQueries,
)
from stacklsh.evaluation import (
    bench,
    default_lk_grid,
    evaluate,
    guarantee_metrics,
    guarantee_scores,
    kendall_tau,
    knn_oracle,
    mean_reciprocal_rank,
    recall_rate_at_k,
    sweep_lk,
)
from stacklsh.families import MinHashFamily
from stacklsh.lsh import LshParams, build_index, probability_similarity
from stacklsh.measures import similarity


class TestKnnOracle:
    def test_single_other_trace(self, small_corpus, small_stats):
        got = knn_oracle(small_corpus[0], small_corpus[:2], "JaccardBow", small_stats, 5)
        assert [cid for cid, _ in got] == [small_corpus[1].id]

    def test_k_larger_than_corpus(self, small_corpus, small_stats):
        got = knn_oracle(small_corpus[0], small_corpus, "JaccardBow", small_stats, 10_000)
        assert len(got) == len(small_corpus) - 1  # self excluded

    def test_agrees_with_full_sort(self, small_corpus, small_stats):
        q = small_corpus[7]
        scored = sorted(
            (
                (r.id, similarity("EditSim", q.trace, r.trace, small_stats))
                for r in small_corpus
                if r.id != q.id
            ),
            key=lambda pair: (-pair[1], pair[0]),
        )
        got = knn_oracle(q, small_corpus, "EditSim", small_stats, 10)
        assert got == scored[:10]

    def test_k_must_be_positive(self, small_corpus, small_stats):
        with pytest.raises(ValueError):
            knn_oracle(small_corpus[0], small_corpus, "EditSim", small_stats, 0)


class TestRecallRateAtK:
    def test_perfect_candidates(self):
        rankings = {"q1": ["a", "b", "c"], "q2": ["d", "e", "f"]}
        candidates = {"q1": {"a", "b"}, "q2": {"d", "e"}}
        assert recall_rate_at_k(candidates, rankings, 2) == 1.0

    def test_disjoint_candidates(self):
        rankings = {"q1": ["a", "b"]}
        candidates = {"q1": {"x", "y"}}
        assert recall_rate_at_k(candidates, rankings, 2) == 0.0

    def test_partial_hits_hand_counted(self):
        # q1 recovers 2 of top-2, q2 recovers 1, q3 recovers 0: 3 / (2 * 3)
        rankings = {"q1": ["a", "b"], "q2": ["c", "d"], "q3": ["e", "f"]}
        candidates = {"q1": {"a", "b"}, "q2": {"c", "x"}, "q3": {"y", "z"}}
        assert recall_rate_at_k(candidates, rankings, 2) == pytest.approx(3 / 6)

    def test_eligibility_filter(self):
        # q2 has fewer than k candidates and is excluded under the filter
        rankings = {"q1": ["a", "b"], "q2": ["c", "d"]}
        candidates = {"q1": {"a", "b"}, "q2": {"c"}}
        assert recall_rate_at_k(candidates, rankings, 2) == 1.0
        unfiltered = recall_rate_at_k(candidates, rankings, 2, require_k_candidates=False)
        assert unfiltered == pytest.approx((2 + 1) / 4)

    def test_no_eligible_queries(self):
        with pytest.raises(NoEligibleQueries):
            recall_rate_at_k({"q1": set()}, {"q1": ["a"]}, 1)


class TestMeanReciprocalRank:
    def test_worked_example(self):
        # three retrieved of five true neighbors; candidate order (s2, s5, s3)
        # reproduces the reference arithmetic: (1/2 + 2/5 + 3/3) / 3 = 0.6333...
        candidates = {"q": ["s2", "s5", "s3"]}
        rankings = {"q": ["s1", "s2", "s3", "s4", "s5"]}
        got = mean_reciprocal_rank(candidates, rankings)
        assert got == pytest.approx(19 / 30, abs=1e-12)

    def test_exact_match_is_one(self):
        candidates = {"q": ["a", "b", "c"]}
        rankings = {"q": ["a", "b", "c"]}
        assert mean_reciprocal_rank(candidates, rankings) == 1.0

    def test_single_candidate_at_true_rank_two(self):
        assert mean_reciprocal_rank({"q": ["b"]}, {"q": ["a", "b"]}) == 0.5

    def test_empty_candidates_contribute_zero(self):
        candidates = {"q1": ["a"], "q2": []}
        rankings = {"q1": ["a"], "q2": ["b"]}
        assert mean_reciprocal_rank(candidates, rankings) == pytest.approx(0.5)

    def test_never_exceeds_one_for_sorted_candidates(self, small_corpus, small_stats):
        rng = np.random.default_rng(3)
        rankings = {}
        candidates = {}
        for q in small_corpus[:10]:
            full = [cid for cid, _ in knn_oracle(q, small_corpus, "EditSim", small_stats, 100)]
            rankings[q.id] = full
            keep = sorted(rng.choice(len(full), size=5, replace=False))
            candidates[q.id] = [full[i] for i in keep]  # subsequence keeps true order
        got = mean_reciprocal_rank(candidates, rankings)
        assert got <= 1.0
        # equality holds only when every candidate sits at its true rank
        exact = {qid: rankings[qid][:5] for qid in rankings}
        assert mean_reciprocal_rank(exact, rankings) == 1.0


class TestKendallTau:
    def test_identity_and_reversal(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert kendall_tau(x, x) == 1.0
        assert kendall_tau(x, x[::-1]) == -1.0

    def test_pair_counting_example(self):
        # one discordant pair of six: (5 - 1) / 6
        assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3)

    def test_matches_scipy_tau_b(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(5, 60))
            x = rng.integers(0, 8, n).astype(float)  # ties included
            y = rng.integers(0, 8, n).astype(float)
            expected = scipy.stats.kendalltau(x, y, variant="b").statistic
            got = kendall_tau(x, y)
            if math.isnan(expected):
                assert math.isnan(got)
            else:
                assert got == pytest.approx(expected, abs=1e-12)

    def test_monotone_invariance(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, 50)
        assert kendall_tau(x, 3.7 * x + 0.2) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            kendall_tau([1.0], [1.0, 2.0])
        with pytest.raises(LengthMismatch):
            kendall_tau([1.0], [1.0])


class TestGuaranteeScores:
    def test_perfect_sets(self):
        cands = {"q": {"a", "b"}}
        truths = {"q": {"a", "b"}}
        assert guarantee_scores(cands, truths) == (1.0, 1.0, 1.0)

    def test_empty_candidates_zero_recall(self):
        cands = {"q1": set(), "q2": {"a"}}
        truths = {"q1": {"a"}, "q2": {"a"}}
        precision, recall, fscore = guarantee_scores(cands, truths)
        assert recall == pytest.approx(0.5)
        assert precision == 1.0  # q1 excluded from precision averaging

    def test_no_eligible(self):
        with pytest.raises(NoEligibleQueries):
            guarantee_scores({"q": set()}, {"q": set()})

    def test_bernoulli_simulation_matches_analytic_recall(self):
        # ideal family simulated at the function level: candidate recall
        # over the truth pairs matches the mean closed-form probability
        rng = np.random.default_rng(12)
        k, l, m = 4, 16, 64
        sims = rng.uniform(0.45, 0.95, 400)
        trials = 250
        analytic = float(np.mean([probability_similarity(s, k, l) for s in sims]))
        rates = []
        for _ in range(trials):
            collide = rng.random((len(sims), m)) < sims[:, None]
            hit = collide.reshape(len(sims), l, k).all(axis=2).any(axis=1)
            rates.append(hit.mean())
        assert abs(float(np.mean(rates)) - analytic) <= 0.02

    def test_recall_monotone_in_table_count(self):
        # under an ideal family, adding tables can only help expected recall
        rng = np.random.default_rng(14)
        k, m = 4, 64
        sims = rng.uniform(0.4, 0.9, 300)
        trials = 400
        means = []
        for l in (2, 4, 8, 16):
            rates = []
            for _ in range(trials):
                collide = rng.random((len(sims), l * k)) < sims[:, None]
                hit = collide.reshape(len(sims), l, k).all(axis=2).any(axis=1)
                rates.append(hit.mean())
            means.append(float(np.mean(rates)))
        for lo, hi in zip(means, means[1:]):
            assert hi >= lo - 0.02

    def test_guarantee_metrics_end_to_end(self, small_corpus, small_stats):
        family = MinHashFamily(m=64, b=8, seed=3).fit(small_stats)
        params = LshParams(m=64, k=2, l=8, b=8)
        index = build_index(family, small_corpus, params)
        precision, recall, fscore = guarantee_metrics(
            small_corpus[:10], small_corpus, index, family, "JaccardBow",
            small_stats, params.k, params.l,
        )
        assert 0.0 <= precision <= 1.0
        assert 0.0 <= recall <= 1.0
        if precision + recall:
            assert fscore == pytest.approx(
                2 * precision * recall / (precision + recall)
            )


class TestSweep:
    def test_single_admissible_combination(self, small_corpus, small_stats):
        family = MinHashFamily(m=16, b=4, seed=5).fit(small_stats)
        result = sweep_lk(
            small_corpus[:8], small_corpus, family, "JaccardBow", small_stats, [(2, 2)],
            max_iqr=1.0,  # leave only the threshold rules in play
        )
        assert result.selected == (2, 2)

    def test_low_threshold_combination_excluded(self, small_corpus, small_stats):
        # (64, 1) implies similarity threshold ~0.011: always excluded
        family = MinHashFamily(m=64, b=8, seed=5).fit(small_stats)
        result = sweep_lk(
            small_corpus[:8], small_corpus, family, "JaccardBow", small_stats,
            [(64, 1), (4, 4)],
        )
        entry = next(e for e in result.entries if (e.l, e.k) == (64, 1))
        assert entry.excluded and "threshold" in entry.reason
        assert result.selected == (4, 4)

    def test_high_threshold_combination_excluded(self, small_corpus, small_stats):
        # (1, 16) implies threshold ~0.958 > 0.95
        family = MinHashFamily(m=64, b=8, seed=5).fit(small_stats)
        result = sweep_lk(
            small_corpus[:8], small_corpus, family, "JaccardBow", small_stats,
            [(1, 16), (4, 4)],
        )
        entry = next(e for e in result.entries if (e.l, e.k) == (1, 16))
        assert entry.excluded
        assert result.selected == (4, 4)

    def test_all_excluded_raises(self, small_corpus, small_stats):
        family = MinHashFamily(m=64, b=8, seed=5).fit(small_stats)
        with pytest.raises(AllCombinationsExcluded):
            sweep_lk(
                small_corpus[:8], small_corpus, family, "JaccardBow", small_stats,
                [(64, 1)],
            )

    def test_deterministic_selection(self, small_corpus, small_stats):
        family = MinHashFamily(m=64, b=8, seed=5).fit(small_stats)
        grid = default_lk_grid(64)
        r1 = sweep_lk(small_corpus[:8], small_corpus, family, "JaccardBow", small_stats, grid)
        r2 = sweep_lk(small_corpus[:8], small_corpus, family, "JaccardBow", small_stats, grid)
        assert r1.selected == r2.selected

    def test_csv_shape(self, small_corpus, small_stats):
        family = MinHashFamily(m=16, b=4, seed=5).fit(small_stats)
        result = sweep_lk(
            small_corpus[:8], small_corpus, family, "JaccardBow", small_stats,
            [(2, 2), (4, 2)],
        )
        lines = result.to_csv().strip().splitlines()
        assert lines[0] == "l,k,threshold,median_fscore,iqr,excluded,reason"
        assert len(lines) == 3


class TestBench:
    def test_positive_finite_latencies(self, small_corpus, small_stats):
        family = MinHashFamily(m=16, b=4, seed=5).fit(small_stats)
        params = LshParams(m=16, k=2, l=4, b=4)
        index = build_index(family, small_corpus, params)
        result = bench(
            small_corpus[:3], small_corpus, index, family, "JaccardBow", small_stats,
            repetitions=3,
        )
        assert result.lsh_mean_s > 0 and math.isfinite(result.lsh_mean_s)
        assert result.scan_mean_s > 0 and math.isfinite(result.scan_mean_s)

    def test_minimum_repetitions_enforced(self, small_corpus, small_stats):
        family = MinHashFamily(m=16, b=4, seed=5).fit(small_stats)
        index = build_index(family, small_corpus, LshParams(m=16, k=2, l=4, b=4))
        with pytest.raises(ValueError):
            bench(small_corpus[:2], small_corpus, index, family, "JaccardBow",
                  small_stats, repetitions=2)


class TestEvaluate:
    def test_report_shape(self, small_corpus, small_stats):
        family = MinHashFamily(m=64, b=8, seed=5).fit(small_stats)
        params = LshParams(m=64, k=2, l=8, b=8)
        report = evaluate(
            small_corpus[:6], small_corpus, family, "JaccardBow", small_stats, params,
            tau_pair_cap=200,
        )
        assert set(report.rr_at_k) == {1, 5}
        assert report.mrr <= 1.0
        assert -1.0 <= report.kendall_tau <= 1.0 or math.isnan(report.kendall_tau)
        payload = report.to_json()
        assert '"mrr"' in payload

    def test_metrics_invariant_under_id_relabeling(self, small_corpus, small_stats):
        # rename every trace id; rr@k and mrr must not change
        family = MinHashFamily(m=64, b=8, seed=5).fit(small_stats)
        params = LshParams(m=64, k=2, l=8, b=8)
        renamed = [
            type(r)(id=f"zz-{i:04d}", trace=r.trace)
            for i, r in enumerate(small_corpus)
        ]
        a = evaluate(small_corpus[:6], small_corpus, family, "JaccardBow",
                     small_stats, params, tau_pair_cap=50)
        b = evaluate(renamed[:6], renamed, family, "JaccardBow",
                     small_stats, params, tau_pair_cap=50)
        for k in a.rr_at_k:
            both = (a.rr_at_k[k], b.rr_at_k[k])
            assert all(math.isnan(v) for v in both) or both[0] == pytest.approx(both[1])
        assert a.mrr == pytest.approx(b.mrr)
