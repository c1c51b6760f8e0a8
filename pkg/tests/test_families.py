"""MinHash and SimHash: determinism, collision guarantees, estimator surface."""

import numpy as np
import pytest
from sklearn.base import clone

from conftest import make_trace
from stacklsh.errors import EmptyTokenSet, ZeroVector
from stacklsh.families import MinHashFamily, SimHashFamily
from stacklsh.traces import build_corpus


@pytest.fixture(scope="module")
def vocab_stats():
    traces = [
        make_trace("t0", "t1", "t2"),
        make_trace("t1", "t2", "t3"),
        make_trace("t4", "t5"),
        make_trace("t6", "t7", "t8", "t9"),
    ]
    return build_corpus(traces)


class TestMinHash:
    def test_deterministic(self, vocab_stats):
        fam = MinHashFamily(m=16, b=4, seed=3).fit(vocab_stats)
        t = make_trace("t0", "t4", "t6")
        assert fam.hash(t) == fam.hash(t)
        fam2 = MinHashFamily(m=16, b=4, seed=3).fit(vocab_stats)
        assert fam2.hash(t) == fam.hash(t)
        assert fam2.fingerprint() == fam.fingerprint()

    def test_seed_changes_codes(self, vocab_stats):
        t = make_trace("t0", "t4", "t6")
        a = MinHashFamily(m=16, b=4, seed=3).fit(vocab_stats)
        b = MinHashFamily(m=16, b=4, seed=4).fit(vocab_stats)
        assert a.fingerprint() != b.fingerprint()
        assert a.hash(t) != b.hash(t)  # 64 bits agreeing by chance is negligible

    def test_scalar_collision_rate_estimates_jaccard(self, vocab_stats):
        # sets {1,2,3} and {2,3,4}: Jaccard exactly 0.5
        a = make_trace("t1", "t2", "t3")
        b = make_trace("t2", "t3", "t4")
        fam = MinHashFamily(m=2500, b=4, seed=7).fit(vocab_stats)  # 10,000 functions
        rate = float(np.mean(fam.scalar_hashes(a) == fam.scalar_hashes(b)))
        assert abs(rate - 0.5) <= 0.02

    def test_oov_tokens_hash_consistently(self, vocab_stats):
        fam = MinHashFamily(m=8, b=4, seed=1).fit(vocab_stats)
        t = make_trace("never.seen.Frame.one", "t0")
        assert fam.hash(t) == fam.hash(t)

    def test_empty_token_set_guarded(self, vocab_stats):
        # real StackTraces always carry a frame; the guard still holds for
        # any duck-typed trace that slips an empty frame tuple through
        from types import SimpleNamespace

        fam = MinHashFamily(m=8, b=4, seed=1).fit(vocab_stats)
        with pytest.raises(EmptyTokenSet):
            fam.scalar_hashes(SimpleNamespace(frames=()))  # type: ignore[arg-type]

    def test_estimator_params_round_trip(self, vocab_stats):
        fam = MinHashFamily(m=8, b=2, seed=5)
        assert clone(fam).get_params() == fam.get_params()

    def test_seed_invariance_of_collision_statistics(self, vocab_stats):
        # codes change with the seed, the collision-rate statistic does not
        a = make_trace("t1", "t2", "t3")
        b = make_trace("t2", "t3", "t4")
        rates = []
        for seed in (3, 4, 5):
            fam = MinHashFamily(m=2500, b=4, seed=seed).fit(vocab_stats)
            rates.append(float(np.mean(fam.scalar_hashes(a) == fam.scalar_hashes(b))))
        assert max(rates) - min(rates) <= 0.04


class TestSimHash:
    def test_deterministic(self, vocab_stats):
        fam = SimHashFamily(m=16, b=4, seed=3).fit(vocab_stats)
        t = make_trace("t0", "t1")
        assert fam.hash(t) == fam.hash(t)

    def test_orthogonal_vectors_half_collision(self, vocab_stats):
        # disjoint token sets have orthogonal count vectors: theta = pi/2
        a = make_trace("t0", "t1")
        b = make_trace("t4", "t5")
        fam = SimHashFamily(m=2500, b=4, seed=11).fit(vocab_stats)  # 10,000 planes
        rate = float(np.mean(fam.bit_values(a) == fam.bit_values(b)))
        assert abs(rate - 0.5) <= 0.02

    def test_identical_vectors_always_collide(self, vocab_stats):
        a = make_trace("t0", "t1")
        fam = SimHashFamily(m=64, b=8, seed=2).fit(vocab_stats)
        assert np.array_equal(fam.bit_values(a), fam.bit_values(a))

    def test_opposite_vectors_complementary_bits(self, vocab_stats):
        fam = SimHashFamily(m=32, b=4, seed=2).fit(vocab_stats)
        vec = fam.features(make_trace("t0", "t1", "t4"))
        bits_pos = (fam.planes_ @ vec >= 0).astype(int)
        bits_neg = (fam.planes_ @ (-vec) >= 0).astype(int)
        # sign flip complements every bit (projections are never exactly 0)
        assert np.all(bits_pos != bits_neg)

    def test_zero_vector_rejected(self, vocab_stats):
        fam = SimHashFamily(m=8, b=4, seed=1).fit(vocab_stats)
        with pytest.raises(ZeroVector):
            fam.hash(make_trace("completely.unknown.Frame.method"))

    def test_tfidf_weighting_changes_projection(self, vocab_stats):
        t = make_trace("t0", "t1", "t2")
        counts = SimHashFamily(m=16, b=4, seed=3, weighting="counts").fit(vocab_stats)
        tfidf = SimHashFamily(m=16, b=4, seed=3, weighting="tfidf").fit(vocab_stats)
        assert counts.fingerprint() != tfidf.fingerprint()

    def test_collision_rate_tracks_angle_not_identity(self, vocab_stats):
        # per-bit collision rate is 1 - theta/pi: monotone in cosine but
        # not equal to it, so assert the angle form specifically
        a = make_trace("t0", "t1")
        b = make_trace("t0", "t2")
        fam = SimHashFamily(m=2500, b=4, seed=13).fit(vocab_stats)
        va, vb = fam.features(a), fam.features(b)
        cosine = float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))
        expected = 1.0 - np.arccos(cosine) / np.pi
        rate = float(np.mean(fam.bit_values(a) == fam.bit_values(b)))
        assert abs(rate - expected) <= 0.02
        assert abs(rate - cosine) > 0.05  # identity mapping would be wrong

    def test_seed_invariance_of_statistics(self, vocab_stats):
        a = make_trace("t0", "t1")
        b = make_trace("t4", "t5")
        rates = []
        for seed in (1, 2, 3):
            fam = SimHashFamily(m=2500, b=4, seed=seed).fit(vocab_stats)
            rates.append(float(np.mean(fam.bit_values(a) == fam.bit_values(b))))
        assert max(rates) - min(rates) <= 0.04


class TestSpecPersistence:
    def test_spec_contains_required_fields(self, vocab_stats):
        fam = MinHashFamily(m=8, b=2, seed=5).fit(vocab_stats)
        spec = fam.spec()
        assert spec["type"] == "minhash"
        assert {"seed", "m", "b", "vocab_digest"} <= set(spec)
        sh = SimHashFamily(m=8, b=2, seed=5, weighting="tfidf").fit(vocab_stats)
        assert sh.spec()["weighting"] == "tfidf"

    def test_vocab_digest_binds_family_to_corpus(self, vocab_stats):
        other_stats = build_corpus([make_trace("q0"), make_trace("q1")])
        a = MinHashFamily(m=8, b=2, seed=5).fit(vocab_stats)
        b = MinHashFamily(m=8, b=2, seed=5).fit(other_stats)
        assert a.fingerprint() != b.fingerprint()
