import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from molr.encoders import EncoderConfig, init_weights
from molr.errors import EmptyRanks, TruthMissing
from molr.evaluator import (
    HIT_KS,
    build_candidate_pool,
    evaluate_ranking,
    multi_choice,
    rank_products,
    ranking_metrics,
)
from molr.smiles import parse_reaction
from molr.trainer import vocab_for


def sort_oracle(h, pool, truth):
    dist = [float(np.linalg.norm(c - h)) for c in pool]
    order = sorted(range(len(pool)), key=lambda i: (dist[i], i))
    return order.index(truth) + 1


def test_rank_truth_at_zero_distance():
    pool = np.array([[1.0, 0.0], [0.0, 0.0], [2.0, 2.0]])
    assert rank_products(np.zeros(2), pool, 1) == 1


def test_rank_tie_goes_to_pool_order():
    pool = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert rank_products(np.zeros(2), pool, 1) == 2
    assert rank_products(np.zeros(2), pool, 0) == 1


def test_rank_truth_missing():
    with pytest.raises(TruthMissing):
        rank_products(np.zeros(2), np.zeros((3, 2)), 3)


def test_rank_matches_sort_oracle_on_random_pools():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        pool = rng.integers(-2, 3, size=(n, 3)).astype(float)  # small integers force ties
        h = rng.integers(-2, 3, size=3).astype(float)
        t = int(rng.integers(n))
        assert rank_products(h, pool, t) == sort_oracle(h, pool, t)


def test_rank_invariant_to_reordering_non_truth():
    rng = np.random.default_rng(1)
    pool = rng.normal(size=(20, 4))
    h = rng.normal(size=4)
    base = rank_products(h, pool, 0)
    for _ in range(10):
        perm = np.concatenate([[0], 1 + rng.permutation(19)])
        assert rank_products(h, pool[perm], 0) == base


def test_metrics_examples():
    r = ranking_metrics([1, 1, 1])
    assert (r.mrr, r.mr) == (1.0, 1.0) and all(v == 1.0 for v in r.hit.values())
    r = ranking_metrics([2])
    assert r.mrr == 0.5 and r.hit[1] == 0.0 and r.hit[3] == 1.0
    r = ranking_metrics([1, 4, 10, 100])
    assert r.mrr == pytest.approx((1 + 1 / 4 + 1 / 10 + 1 / 100) / 4, abs=1e-15)
    assert r.mr == 28.75
    assert [r.hit[k] for k in HIT_KS] == [0.25, 0.25, 0.5, 0.75]


def test_metrics_empty():
    with pytest.raises(EmptyRanks):
        ranking_metrics([])


def test_metrics_match_direct_formula():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        ranks = rng.integers(1, 200, size=int(rng.integers(1, 50))).tolist()
        rep = ranking_metrics(ranks)
        n = len(ranks)
        assert abs(rep.mrr - sum(1.0 / x for x in ranks) / n) <= 1e-12
        assert abs(rep.mr - sum(ranks) / n) <= 1e-12
        for k in HIT_KS:
            assert abs(rep.hit[k] - sum(x <= k for x in ranks) / n) <= 1e-12


@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=100))
def test_metric_invariants(ranks):
    rep = ranking_metrics(ranks)
    hits = [rep.hit[k] for k in HIT_KS]
    assert hits == sorted(hits)
    assert 0 < rep.mrr <= 1 and rep.mr >= 1
    assert abs(rep.mrr * len(ranks) - sum(1 / r for r in ranks)) <= 1e-12 * len(ranks)


def test_pool_dedup_keeps_first_occurrence():
    rs = [parse_reaction(line) for line in ("a\tCC\tCCO", "b\tCO\tOCC", "c\tC\tCCN", "d\tN\tCCO")]
    pool, truth = build_candidate_pool(rs)
    assert len(pool) == 2
    assert truth == [0, 0, 1, 0]
    assert build_candidate_pool([]) == ([], [])


def test_evaluate_ranking_end_to_end():
    rs = [parse_reaction(line) for line in ("a\tCC\tCCO", "b\tCN\tCCN", "c\tC\tCCCl")]
    vocab = vocab_for(rs)
    enc = EncoderConfig.uniform("gcn", 2, 8)
    rep = evaluate_ranking(rs, vocab, enc, init_weights(enc, vocab.total_dim, 0))
    assert len(rep.ranks) == 3 and all(1 <= r <= 3 for r in rep.ranks)


def test_multi_choice():
    h = np.array([1.0, 2.0])
    choices = np.array([[0.0, 0.0], [1.0, 2.0], [5.0, 5.0], [1.0, 2.1]])
    assert multi_choice(h, choices, 1) == (1, True)
    assert multi_choice(h, choices, 3) == (1, False)
    assert multi_choice(np.zeros(2), np.ones((4, 2)), 2) == (0, False)
    with pytest.raises(ValueError):
        multi_choice(h, choices[:1], 0)
