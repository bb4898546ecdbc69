import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from openset.core import InvalidInputError, ScoreMatrix
from openset.evaluation import (
    EvalConfig,
    ThresholdPolicy,
    cmc_curve,
    dir_at,
    dir_at_far,
    dir_curve,
    far_at,
    rank_of,
    roc_curve,
    select_threshold,
    threshold_for_far,
)
from openset.protocol import ProtocolPartition

import oracles
from helpers import to_package


def partition_for(known=(), ku=(), uu=(), subjects=("a", "b", "c")):
    return ProtocolPartition(
        frozenset(),
        {s: (1, 2, 3) for s in subjects},
        frozenset(known),
        frozenset(ku),
        frozenset(uu),
    )


def test_rank_examples():
    assert rank_of([0.9, 0.1, 0.2], "abc", "a") == 1
    assert rank_of([0.9, 0.9, 0.2], "abc", "a") == 2
    assert rank_of([0.9, 0.9, 0.2], "abc", "b") == 2
    assert rank_of([0.1, 0.2, 0.3], "abc", "a") == 3
    with pytest.raises(InvalidInputError):
        rank_of([0.1, 0.2, 0.3], "abc", "z")


def test_rank_random_row_against_oracle():
    rng = np.random.default_rng(5)
    subjects = [f"s{i}" for i in range(7)]
    for _ in range(50):
        row = list(rng.integers(0, 4, 7) / 3)
        correct = subjects[rng.integers(7)]
        assert rank_of(row, subjects, correct) == oracles.rank(row, subjects, correct)


def test_cmc_hand_built():
    # Ranks {1, 2, 2}.
    keys = (("a", 4), ("b", 4), ("c", 4))
    m = ScoreMatrix(keys, ("a", "b", "c"), [[0.9, 0.1, 0.2], [0.8, 0.7, 0.1], [0.1, 0.9, 0.5]])
    p = partition_for(known=keys)
    assert [pt.y for pt in cmc_curve(m, p)] == [1 / 3, 1.0, 1.0]
    assert [pt.x for pt in cmc_curve(m, p)] == [1.0, 2.0, 3.0]


def test_far_examples():
    keys = tuple((f"u{i}", 1) for i in range(4))
    m = ScoreMatrix(keys, ("a", "b"), [[0.9, 0.0], [0.5, 0.1], [0.2, 0.5], [0.1, 0.05]])
    assert far_at(m, keys, 0.5) == 3 / 4
    assert far_at(m, keys, -1.0) == 1.0
    assert far_at(m, keys, 0.91) == 0.0
    with pytest.raises(InvalidInputError):
        far_at(m, (), 0.5)


def test_dir_hand_built():
    # Ranks {1, 1, 2}; genuine scores {0.9, 0.4, 0.8}.
    keys = (("a", 4), ("b", 4), ("c", 4))
    m = ScoreMatrix(keys, ("a", "b", "c"), [[0.9, 0.1, 0.2], [0.3, 0.4, 0.1], [0.1, 0.85, 0.8]])
    p = partition_for(known=keys)
    assert dir_at(m, p, 0.5, 1) == 1 / 3
    assert dir_at(m, p, -math.inf, 1) == cmc_curve(m, p)[0].y
    assert dir_at(m, p, 0.95, 1) == 0.0
    with pytest.raises(InvalidInputError):
        dir_at(m, p, 0.5, 0)


def test_threshold_examples():
    scores = np.array([0.9, 0.8, 0.7, 0.6])
    assert select_threshold(scores, 0.25) == 0.9
    keys = tuple((f"u{i}", 1) for i in range(4))
    m = ScoreMatrix(keys, ("a",), scores[:, None])
    theta = threshold_for_far(m, keys, 0.25)
    assert far_at(m, keys, theta) == 1 / 4
    # Index 0 is the maximum: nothing lies above it.
    assert select_threshold(scores, 0.2) is None
    assert select_threshold(scores, 0.2, "above_max") == math.nextafter(0.9, math.inf)
    # far = 1 clamps to the last index: theta' = 0.6, theta = 0.7.
    assert select_threshold(scores, 1.0) == 0.7


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5, math.nan])
def test_threshold_rejects_bad_target(bad):
    with pytest.raises(InvalidInputError):
        select_threshold(np.array([0.5, 0.4]), bad)


def test_eval_config():
    assert EvalConfig().threshold_policy is ThresholdPolicy.STRICT
    with pytest.raises(InvalidInputError):
        EvalConfig(far_targets=(0.1, 0.01))
    with pytest.raises(InvalidInputError):
        EvalConfig(far_targets=(0.0,))
    with pytest.raises(InvalidInputError):
        EvalConfig(rank=0)


def test_dir_curve_hand_built():
    # 5 known probes, 4 unknown ones.
    known = tuple((s, 4) for s in "abcde")
    unknown = tuple((f"u{i}", 1) for i in range(4))
    rows = [
        [0.9, 0.1, 0.0, 0.0, 0.0],
        [0.2, 0.6, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.4, 0.5, 0.0],
        [0.0, 0.0, 0.0, 0.7, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.3],
        [0.8, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.0, 0.0],
        [0.2, 0.0, 0.0, 0.0, 0.0],
    ]
    m = ScoreMatrix(known + unknown, tuple("abcde"), rows)
    p = partition_for(known=known, uu=unknown, subjects=tuple("abcde"))
    curve = dir_curve(m, p, "O2")
    got = [(c.x, c.y, c.threshold) for c in curve]
    assert got == [
        (0.25, 0.2, 0.8),
        (0.75, 0.6, 0.5),
        (1.0, 0.8, 0.2),
        (1.0, 0.8, -math.inf),
    ]
    instance = ([k for k in known + unknown], list("abcde"), rows)
    assert got == oracles.dir_curve(instance, set(known), set(unknown), 1)
    assert dir_at_far(curve, 0.5) == 0.2
    assert dir_at_far(curve, 0.1) == 0.0


def test_dir_curve_needs_unknowns():
    keys = (("a", 4),)
    m = ScoreMatrix(keys, ("a",), [[0.5]])
    with pytest.raises(InvalidInputError):
        dir_curve(m, partition_for(known=keys, subjects=("a",)), "C")


def test_roc_examples():
    # Perfect separation passes through (0, 1).
    keys = (("a", 4), ("b", 4))
    m = ScoreMatrix(keys, ("a", "b"), [[0.9, 0.2], [0.1, 0.8]])
    p = partition_for(known=keys, subjects=("a", "b"))
    curve = [(c.x, c.y) for c in roc_curve(m, p)]
    assert (0.0, 1.0) in curve
    assert curve[0] == (0.0, 0.0) and curve[-1] == (1.0, 1.0)
    instance = (list(keys), ["a", "b"], [[0.9, 0.2], [0.1, 0.8]])
    assert [(c.x, c.y, c.threshold) for c in roc_curve(m, p)] == oracles.roc(instance, set(keys))


def test_roc_chance_is_diagonal():
    rng = np.random.default_rng(0)
    n, subjects = 400, ("a", "b")
    keys = tuple((subjects[i % 2], 4 + i) for i in range(n))
    m = ScoreMatrix(keys, subjects, rng.random((n, 2)))
    curve = roc_curve(m, partition_for(known=keys, subjects=subjects))
    assert max(abs(c.x - c.y) for c in curve) < 0.1


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 8), st.sampled_from(["strict", "above_max"]))
def test_metrics_match_oracle(seed, r, policy):
    matrix, known, ku, uu = oracles.random_instance(seed)
    scores, partition = to_package(matrix, known, ku, uu)
    r = min(r, len(matrix[1]))
    assert [p.y for p in cmc_curve(scores, partition)] == oracles.cmc(matrix, known)
    assert [(p.x, p.y, p.threshold) for p in roc_curve(scores, partition)] == oracles.roc(
        matrix, known
    )
    for theta in (-math.inf, 0.0, 0.3, 0.5, 10 / 11, 1.0):
        assert dir_at(scores, partition, theta, r) == oracles.dir_(matrix, known, theta, r)
    unknown = ku | uu
    if unknown:
        for theta in (0.0, 0.3, 0.5, 10 / 11, 1.0):
            assert far_at(scores, unknown, theta) == oracles.far(matrix, unknown, theta)
        curve = dir_curve(scores, partition, "O3", r, policy)
        assert [(p.x, p.y, p.threshold) for p in curve] == oracles.dir_curve(
            matrix, known, unknown, r, policy
        )
        maxima = oracles.unknown_maxima(matrix, unknown)
        for target in (0.001, 0.05, 0.25, 0.5, 1.0):
            assert threshold_for_far(scores, unknown, target, policy) == oracles.threshold(
                maxima, target, policy
            )


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_metric_invariants(seed):
    matrix, known, ku, uu = oracles.random_instance(seed)
    scores, partition = to_package(matrix, known, ku, uu)
    cmc = [p.y for p in cmc_curve(scores, partition)]
    assert all(a <= b for a, b in zip(cmc, cmc[1:])) and cmc[-1] == 1.0
    for r in range(1, len(cmc) + 1):
        assert dir_at(scores, partition, -math.inf, r) == cmc[r - 1]
    unknown = ku | uu
    if not unknown:
        return
    curve = dir_curve(scores, partition, "O3")
    assert all(a.x <= b.x and a.y <= b.y for a, b in zip(curve, curve[1:]))
    assert curve[-1].x == 1.0 and curve[-1].y == cmc[0]
    for target in (0.01, 0.1, 0.3, 1.0):
        theta = threshold_for_far(scores, unknown, target)
        if theta is not None:
            assert far_at(scores, unknown, theta) <= target
