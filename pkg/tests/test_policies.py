import itertools
import math

import numpy as np
import pytest

from conftest import random_sample_set
from oracles import StubModel, all_label_sets, joint_mutual_information, vendi_entropy_oracle, vig_oracle
from vigal.classifier import ClassifierConfig, DropoutMLP, TrainingDiverged
from vigal.core import Dataset, LabelVectorSet, PoolState
from vigal.policies import (
    BatchBaldConfig,
    PolicyConfig,
    PoolExhausted,
    class_weights,
    rank,
    score_bald,
    score_max_entropy,
    score_mean_std,
    score_vig,
    select_batch,
    select_batchbald,
    vig_from_samples,
)


def slices(*rows):
    """Build an S x 1 x C sample set from per-pass distributions of one point."""
    return np.array([[r] for r in rows], dtype=float)


class TestMaxEntropy:
    @pytest.mark.parametrize("p, h", [
        ((1, 0, 0), 0.0),
        ((0.2,) * 5, math.log(5)),
        ((0.5, 0.5, 0), math.log(2)),
    ])
    def test_examples(self, p, h):
        assert score_max_entropy(slices(p))[0] == pytest.approx(h, abs=1e-12)


class TestMeanStd:
    def test_identical_slices(self, rng):
        p = rng.dirichlet(np.ones(3), size=4)
        assert np.all(score_mean_std(np.broadcast_to(p, (6, 4, 3))) == 0.0)

    def test_hand_example(self):
        # each class has values {1, 0}: population std 0.5
        assert score_mean_std(slices((1, 0), (0, 1)))[0] == pytest.approx(0.5, abs=1e-12)

    def test_single_sample(self, rng):
        assert np.all(score_mean_std(random_sample_set(rng, 1, 9, 4)) == 0.0)

    def test_zero_iff_identical(self, rng):
        for _ in range(100):
            P = random_sample_set(rng, int(rng.integers(2, 6)), 3, 3)
            P[:, 1] = P[0, 1]
            s = score_mean_std(P)
            assert s[1] == 0.0 and s[0] > 0 and s[2] > 0


class TestBald:
    def test_identical_slices(self, rng):
        p = rng.dirichlet(np.ones(4), size=5)
        assert np.all(score_bald(np.broadcast_to(p, (7, 5, 4))) == 0.0)

    def test_disagreeing_pair(self):
        assert score_bald(slices((1, 0), (0, 1)))[0] == pytest.approx(math.log(2), abs=1e-12)

    def test_uniform_slices(self):
        assert score_bald(slices((0.25,) * 4, (0.25,) * 4, (0.25,) * 4))[0] == 0.0

    def test_bounded_by_max_entropy(self, rng):
        for _ in range(100):
            P = random_sample_set(rng, int(rng.integers(1, 10)), 20, int(rng.integers(2, 6)), rng.uniform(0.1, 2))
            b = score_bald(P)
            assert np.all(b >= 0)
            assert np.all(b <= score_max_entropy(P) + 1e-9)


class TestBatchBald:
    def test_batch_of_one_is_bald_argmax(self, rng):
        for k in range(25):
            P = random_sample_set(rng, 8, 30, 4, 0.5)
            pick = select_batchbald(P, 1, rng=np.random.default_rng(k))
            assert pick == [int(np.argmax(score_bald(P)))]

    def test_duplicate_is_not_preferred_over_independent_candidate(self):
        dup = [(1, 0), (0, 1), (1, 0), (0, 1)]
        other = [(0.9, 0.1), (0.9, 0.1), (0.1, 0.9), (0.1, 0.9)]
        P = np.array([[dup[s], dup[s], other[s]] for s in range(4)], dtype=float)
        # brute force: I(dup, twin) = ln 2 < I(dup, other) = 1.0612...
        assert joint_mutual_information(P, [0, 1]) == pytest.approx(math.log(2))
        assert joint_mutual_information(P, [0, 2]) > 1.06
        for seed in range(10):
            picks = select_batchbald(P, 2, rng=np.random.default_rng(seed))
            assert picks[0] in (0, 1) and picks[1] == 2

    def test_deterministic_sampler_falls_to_tie_breaking(self, rng):
        P = np.broadcast_to(rng.dirichlet(np.ones(3), size=10), (5, 10, 3))
        a = select_batchbald(P, 4, rng=np.random.default_rng(3))
        b = select_batchbald(P, 4, rng=np.random.default_rng(3))
        assert a == b and len(set(a)) == 4
        picks = {tuple(select_batchbald(P, 4, rng=np.random.default_rng(s))) for s in range(5)}
        assert len(picks) > 1

    def test_exact_greedy_matches_brute_force_greedy(self, rng):
        for _ in range(10):
            P = random_sample_set(rng, 5, 7, 3, 0.7)
            picks = select_batchbald(P, 3, BatchBaldConfig(config_enum_limit=10**6))
            chosen = []
            for _ in range(3):
                rest = [i for i in range(7) if i not in chosen]
                chosen.append(max(rest, key=lambda i: joint_mutual_information(P, chosen + [i])))
            assert picks == chosen

    def test_sampled_configurations_approximate_exact(self, rng):
        P = random_sample_set(rng, 6, 12, 3, 0.5)
        exact = select_batchbald(P, 4, BatchBaldConfig(config_enum_limit=10**6))
        sampled = select_batchbald(P, 4, BatchBaldConfig(config_enum_limit=3, mc_configs=20000),
                                   rng=np.random.default_rng(0))
        assert len(set(sampled)) == 4
        mi_exact = joint_mutual_information(P, exact)
        mi_sampled = joint_mutual_information(P, sampled)
        assert mi_sampled >= 0.95 * mi_exact

    def test_batch_too_large(self, rng):
        with pytest.raises(PoolExhausted):
            select_batchbald(random_sample_set(rng, 3, 2, 2), 3)


class TestRankAndWeights:
    def test_rank_breaks_exact_ties_by_seed(self):
        scores = np.array([1.0, 3.0, 3.0, 3.0, 0.0])
        orders = {tuple(rank(scores, np.random.default_rng(s))) for s in range(20)}
        assert all(o[3:] == (0, 4) for o in orders)
        assert len(orders) > 1

    def test_class_weights(self):
        np.testing.assert_allclose(class_weights([0.6, 0.395, 0.005], 0.01), [0.6 / 0.995, 0.395 / 0.995, 0])
        np.testing.assert_allclose(class_weights([0.3, 0.3, 0.4], 0.5), [0, 0, 1])


# -- VIG --------------------------------------------------------------------

def stub_setting(prior, probs, posteriors):
    """Dataset/pool where every unlabeled point is part of the label vectors."""
    N = np.asarray(prior).shape[1]
    ds = Dataset(np.arange(N + 2, dtype=float)[:, None] + 1.0, [0] * (N + 2), 2)
    pool = PoolState(labeled=[(N, 0)], unlabeled=set(range(N)), test={N + 1})
    model = StubModel(prior, probs, posteriors)
    return model, pool, ds


def run_stub(prior, probs, posteriors, q, floor=0.01):
    S = np.asarray(prior).shape[0]
    model, pool, ds = stub_setting(prior, probs, posteriors)
    cfg = PolicyConfig(name="vig", mc_samples_score=1,
                       vig={"mc_samples_pool": S, "order": q, "class_weight_floor": floor})
    return score_vig(0, model, pool, ds, cfg)


def vig_cases(max_exhaustive=4096, n_random=150, seed=0):
    rng = np.random.default_rng(seed)
    probs_cycle = [(0.5, 0.5), (0.3, 0.7), (0.995, 0.005), (0.8, 0.2)]
    k = 0
    for N in range(1, 5):
        for S in range(1, 5):
            total = 2 ** (3 * N * S)
            if total <= max_exhaustive:
                sets = list(all_label_sets(S, N))
                for prior, p0, p1 in itertools.product(sets, repeat=3):
                    k += 1
                    yield prior, probs_cycle[k % 4], {0: p0, 1: p1}
            else:
                for _ in range(n_random):
                    k += 1
                    prior, p0, p1 = rng.integers(0, 2, size=(3, S, N))
                    yield prior, probs_cycle[k % 4], {0: p0, 1: p1}


class TestVigOracle:
    @pytest.mark.parametrize("q", [0.5, 1.0, 2.0])
    def test_matches_enumeration_oracle(self, q):
        n = 0
        for prior, probs, post in vig_cases(max_exhaustive=512):
            got = run_stub(prior, probs, post, q).score
            want = vig_oracle(prior, probs, post, q, 0.01)
            assert abs(got - want) <= 1e-9, (prior, probs, post)
            n += 1
        assert n > 2000

    def test_hand_example_through_stub(self):
        got = run_stub([[0], [1]], (0.5, 0.5), {0: [[0], [0]], 1: [[1], [1]]}, 1.0)
        assert got.score == pytest.approx(math.log(2), abs=1e-12)
        assert got.diagnostics["prior_entropy"] == pytest.approx(math.log(2))

    def test_no_op_conditioning(self, rng):
        prior = rng.integers(0, 2, size=(4, 3))
        assert run_stub(prior, (0.4, 0.6), {0: prior, 1: prior}, 1.0).score == 0.0

    def test_prior_bounds_and_permutation_invariance(self, rng):
        for _ in range(50):
            S = int(rng.integers(1, 6))
            prior, p0, p1 = rng.integers(0, 2, size=(3, S, 4))
            res = run_stub(prior, (0.3, 0.7), {0: p0, 1: p1}, 1.0)
            assert 0 <= res.diagnostics["prior_entropy"] <= math.log(S) + 1e-12
            perm = rng.permutation(S)
            res2 = run_stub(prior[perm], (0.3, 0.7), {0: p0[perm[::-1]], 1: p1[perm]}, 1.0)
            assert abs(res.score - res2.score) <= 1e-10

    def test_failed_fantasy_scores_minus_infinity(self):
        def posterior(c):
            return None if c == 1 else LabelVectorSet([[0]])
        score, diag = vig_from_samples(LabelVectorSet([[0], [1]]), (0.5, 0.5), posterior)
        assert score == -math.inf and diag["failed_class"] == 1

    def test_divergence_inside_score_vig(self, monkeypatch):
        model, pool, ds = stub_setting([[0, 1]], (0.5, 0.5), {0: [[0, 0]], 1: [[1, 1]]})

        def boom(self, X, y, warm_start=False):
            raise TrainingDiverged("training diverged")

        monkeypatch.setattr(StubModel, "train", boom)
        res = score_vig(0, model, pool, ds, PolicyConfig(name="vig", vig={"mc_samples_pool": 1}))
        assert res.score == -math.inf

    def test_rejects_labeled_candidate(self):
        model, pool, ds = stub_setting([[0]], (0.5, 0.5), {0: [[0]], 1: [[1]]})
        with pytest.raises(ValueError):
            score_vig(1, model, pool, ds, PolicyConfig(name="vig"))


@pytest.fixture(scope="module")
def setting():
    from vigal.dataio import make_blobs, split

    ds = make_blobs(3, 15, 2, 3.0, 1.0, seed=1)
    pool = split(ds, 0.2, seed=0)
    first = sorted(pool.unlabeled)[:6]
    pool.add_labels(first, ds.labels[first])
    return ds, pool


class TestVigWithNetwork:
    def test_deterministic_model_scores_zero(self, setting):
        ds, pool = setting
        model = DropoutMLP(2, 3, ClassifierConfig(dropout_rate=0.0, max_epochs=20))
        model.train(ds.features[pool.labeled_ids], pool.labeled_classes)
        cfg = PolicyConfig(name="vig", vig={"mc_samples_pool": 4})
        for c in sorted(pool.unlabeled)[:5]:
            assert score_vig(c, model, pool, ds, cfg).score == 0.0

    def test_reproducible_and_finite(self, setting):
        ds, pool = setting
        model = DropoutMLP(2, 3, ClassifierConfig(max_epochs=30, learning_rate=0.1))
        model.train(ds.features[pool.labeled_ids], pool.labeled_classes)
        cfg = PolicyConfig(name="vig", vig={"mc_samples_pool": 8}, seed=5)
        c = sorted(pool.unlabeled)[0]
        a, b = score_vig(c, model, pool, ds, cfg), score_vig(c, model, pool, ds, cfg)
        assert a.score == b.score and math.isfinite(a.score)
        assert 0 <= a.diagnostics["prior_entropy"] <= math.log(8) + 1e-12


# -- select_batch -------------------------------------------------------------

@pytest.fixture(scope="module")
def small_run():
    from vigal.dataio import make_blobs, split

    ds = make_blobs(3, 20, 2, 2.0, 1.0, seed=2)
    pool = split(ds, 0.25, seed=1)
    first = sorted(pool.unlabeled)[:9]
    pool.add_labels(first, ds.labels[first])
    model = DropoutMLP(2, 3, ClassifierConfig(max_epochs=40, learning_rate=0.1))
    model.train(ds.features[pool.labeled_ids], pool.labeled_classes)
    return ds, pool, model


class ConstantModel:
    """Predicts fixed per-point distributions, identical in every pass."""

    def __init__(self, table):
        self.table = table

    def mc_sample_probs(self, X, num_samples, seed=None):
        from vigal.core import ProbabilitySampleSet

        rows = np.array([self.table[float(x[0])] for x in X])
        return ProbabilitySampleSet(np.broadcast_to(rows, (num_samples, *rows.shape)))


class TestSelectBatch:
    @pytest.mark.parametrize("name", ["random", "max_entropy", "mean_std", "bald", "batchbald", "vig"])
    def test_distinct_unlabeled_and_seeded(self, small_run, name):
        ds, pool, model = small_run
        cfg = PolicyConfig(name=name, mc_samples_score=8, vig={"mc_samples_pool": 4, "candidate_subsample": 6})
        a = select_batch(cfg, model, pool, ds, 4, seed=3)
        b = select_batch(cfg, model, pool, ds, 4, seed=3)
        assert a.ids == b.ids
        assert len(set(a.ids)) == 4 and set(a.ids) <= pool.unlabeled

    def test_max_entropy_picks_the_uncertain_point(self):
        table = {float(i): np.array([0.98, 0.01, 0.01]) for i in range(6)}
        table[3.0] = np.full(3, 1 / 3)
        ds = Dataset(np.arange(8, dtype=float)[:, None], [0] * 8, 3)
        pool = PoolState(labeled=[(6, 0)], unlabeled=set(range(6)), test={7})
        sel = select_batch(PolicyConfig(name="max_entropy"), ConstantModel(table), pool, ds, 1, seed=0)
        assert sel.ids == [3]

    def test_whole_pool_in_score_order(self, small_run):
        ds, pool, model = small_run
        n = len(pool.unlabeled)
        sel = select_batch(PolicyConfig(name="bald", mc_samples_score=8), model, pool, ds, n, seed=0)
        assert sorted(sel.ids) == sorted(pool.unlabeled)
        assert all(a >= b for a, b in zip(sel.scores, sel.scores[1:]))

    def test_pool_exhausted(self, small_run):
        ds, pool, model = small_run
        with pytest.raises(PoolExhausted, match="pool exhausted"):
            select_batch(PolicyConfig(name="random"), model, pool, ds, len(pool.unlabeled) + 1)

    def test_vig_diagnostics_report_order(self, small_run):
        ds, pool, model = small_run
        cfg = PolicyConfig(name="vig", vig={"mc_samples_pool": 4, "candidate_subsample": 5, "order": 2})
        sel = select_batch(cfg, model, pool, ds, 2, seed=1)
        assert sel.diagnostics["order"] == 2.0
        assert sel.diagnostics["candidates_scored"] == 5

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            PolicyConfig(name="coreset")
