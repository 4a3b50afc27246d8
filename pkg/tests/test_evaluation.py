"""Ordering and retrieval metrics against brute-force oracles."""

import itertools
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from storyorder import (
    bucket_report,
    kendall_tau,
    recall_at_k,
    retrieve_and_order_score,
    tau_best,
)


def brute_force_tau(predicted, reference):
    """Count discordant pairs by direct double loop."""
    pos = {x: i for i, x in enumerate(reference)}
    ranks = [pos[x] for x in predicted]
    m = len(ranks)
    inversions = sum(
        1 for i in range(m) for j in range(i + 1, m) if ranks[i] > ranks[j]
    )
    pairs = m * (m - 1) // 2
    return 1.0 - 2.0 * inversions / pairs


def test_exhaustive_small_permutations():
    t0 = time.time()
    cases = 0
    for m in range(2, 7):
        reference = [f"f{i}" for i in range(m)]
        for perm in itertools.permutations(reference):
            assert kendall_tau(perm, reference) == brute_force_tau(perm, reference)
            cases += 1
    assert cases == 872
    assert time.time() - t0 < 5.0


def test_random_permutations_up_to_eleven():
    rng = np.random.default_rng(0)
    t0 = time.time()
    for _ in range(1000):
        m = int(rng.integers(2, 12))
        reference = [f"f{i}" for i in range(m)]
        perm = [reference[i] for i in rng.permutation(m)]
        assert kendall_tau(perm, reference) == brute_force_tau(perm, reference)
    assert time.time() - t0 < 5.0


@pytest.mark.parametrize("m", range(2, 12))
def test_endpoints(m):
    ids = [f"f{i}" for i in range(m)]
    assert kendall_tau(ids, ids) == 1.0
    assert kendall_tau(ids[::-1], ids) == -1.0


def test_rejects_mismatched_sets():
    with pytest.raises(ValueError):
        kendall_tau(["a", "b"], ["a", "c"])
    with pytest.raises(ValueError):
        kendall_tau(["a"], ["a"])


@given(st.permutations(list(range(9))))
def test_tau_matches_brute_force(perm):
    reference = [f"f{i}" for i in range(9)]
    predicted = [reference[i] for i in perm]
    assert kendall_tau(predicted, reference) == brute_force_tau(predicted, reference)


@given(st.permutations(list(range(7))))
def test_reversal_negates_tau(perm):
    reference = [f"f{i}" for i in range(7)]
    predicted = [reference[i] for i in perm]
    assert kendall_tau(predicted[::-1], reference) == pytest.approx(
        -kendall_tau(predicted, reference)
    )


def test_tau_best_takes_maximum_over_variants():
    pred = ["a", "b", "c"]
    variants = [["c", "b", "a"], ["a", "c", "b"], ["b", "a", "c"]]
    expected = max(kendall_tau(pred, v) for v in variants)
    assert tau_best(pred, variants) == expected


def test_recall_at_k():
    ranked = ["a", "b", "c", "d"]
    assert recall_at_k(ranked, ["a", "d"], 2) == 0.5
    assert recall_at_k(ranked, ["a", "d"], 4) == 1.0
    assert recall_at_k(ranked, ["z"], 4) == 0.0
    assert recall_at_k([], ["z"], 4) == 0.0


def test_retrieve_order_score_perfect_oracle():
    gt = ["a", "b", "c", "d"]
    score = retrieve_and_order_score(gt, [gt], k=10)
    assert (score.recall, score.tau, score.recall * score.tau) == (1.0, 1.0, 1.0)


def test_retrieve_order_product_bounded_by_recall():
    rng = np.random.default_rng(1)
    universe = [f"f{i}" for i in range(40)]
    for _ in range(200):
        m = int(rng.integers(3, 12))
        gt = list(rng.choice(universe, size=m, replace=False))
        k = int(rng.integers(1, 25))
        n_pred = int(rng.integers(0, k + 1))
        pred = list(rng.choice(universe, size=n_pred, replace=False))
        score = retrieve_and_order_score(pred, [gt], k=k)
        assert score.recall * score.tau <= score.recall + 1e-12


def test_retrieve_order_rejects_duplicates_and_overflow():
    gt = ["a", "b", "c", "d"]
    with pytest.raises(ValueError):
        retrieve_and_order_score(["a", "a"], [gt], k=3)
    with pytest.raises(ValueError):
        retrieve_and_order_score(["a", "b", "c"], [gt], k=2)


def test_retrieve_order_few_hits_gets_neutral_tau():
    gt = ["a", "b", "c", "d"]
    score = retrieve_and_order_score(["a", "x", "y"], [gt], k=3)
    assert score.recall == 0.25
    assert score.tau == 1.0


def test_retrieve_order_tau_restricted_to_hits():
    gt = ["a", "b", "c", "d", "e"]
    # Hits c then a within top k: inverted relative to gt.
    score = retrieve_and_order_score(["c", "x", "a"], [gt], k=3)
    assert score.tau == -1.0
    assert score.recall == pytest.approx(2 / 5)


def test_bucket_report_splits_by_length():
    lengths = [3, 4, 5, 6, 7, 11]
    values = [1.0, 0.0, 0.5, 1.0, 0.0, 0.5]
    report = bucket_report(lengths, values)
    assert report["3-5"]["mean"] == pytest.approx(0.5)
    assert report["3-5"]["count"] == 3
    assert report["6-11"]["mean"] == pytest.approx(0.5)
    assert report["6-11"]["count"] == 3
