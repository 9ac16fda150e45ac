from __future__ import annotations

import numpy as np
from hypothesis import given, settings, strategies as st

from timecl.evaluation import ranks
from timecl.scenario.core import TaskSpec, TaskView
from timecl.scenario.views import left_pad, split, split_sizes
from timecl.transfer import (AugmentConfig, augment_mask, augment_substitute, rate_from_cosines,
                             sample_count, sample_negatives)

FAST = settings(max_examples=150, deadline=None)
seqs = st.lists(st.integers(1, 50), min_size=0, max_size=20)


def _view(users) -> TaskView:
    users = np.array(sorted(users), dtype=np.int64)
    return TaskView(TaskSpec(1, "item", "click", 10), 10, users,
                    np.zeros((len(users), 4), dtype=np.int64), np.ones(len(users), dtype=np.int64),
                    np.array([1, 2], dtype=np.int64))


@FAST
@given(st.sets(st.integers(0, 10_000), min_size=3, max_size=300), st.integers(0, 5))
def test_split_is_a_disjoint_partition(users, seed):
    tr, va, te = split(_view(users), seed)
    parts = [set(v.users.tolist()) for v in (tr, va, te)]
    assert set().union(*parts) == set(users)
    assert sum(len(p) for p in parts) == len(users)
    assert (len(tr), len(va), len(te)) == split_sizes(len(users))
    assert len(va) >= 1 and len(te) >= 1


@FAST
@given(seqs, st.integers(1, 12))
def test_left_pad_keeps_most_recent_suffix(items, n):
    out = left_pad(np.array(items, dtype=np.int64), n)
    kept = items[-n:] if items else []
    assert out.shape == (n,)
    assert out[n - len(kept):].tolist() == kept
    assert not out[:n - len(kept)].any()


@FAST
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=6), st.floats(0.01, 20))
def test_rate_bounds_and_monotone_in_similarity(cos, c):
    rho = rate_from_cosines(cos, c)
    assert 0.0 < rho < 1.0
    lower = [x - 0.1 for x in cos]
    assert rate_from_cosines(lower, c) >= rho
    if all(x > 0 for x in cos):
        assert rho <= 0.5


@FAST
@given(st.floats(0, 1), st.integers(1, 5000))
def test_sample_count_clamped(rho, total):
    S = sample_count(rho, total)
    assert 1 <= S <= total
    assert S == max(1, min(total, int(np.floor(rho * total))))


@FAST
@given(seqs, st.floats(0, 0.99), st.integers(0, 100))
def test_augmentations_touch_only_nonpad(items, ratio, seed):
    seq = left_pad(np.array(items, dtype=np.int64), 12)
    cfg = AugmentConfig(mask_ratio=ratio, substitute_ratio=ratio)
    rng = np.random.default_rng(seed)
    masked = augment_mask(seq, cfg, rng, mask_token=99)
    sub = augment_substitute(seq, cfg, np.arange(1, 60), rng)
    for out in (masked, sub):
        assert out.shape == seq.shape
        assert np.array_equal(out == 0, seq == 0)
    nonpad = int((seq != 0).sum())
    assert int((masked == 99).sum()) == min(nonpad, int(np.ceil(ratio * nonpad - 1e-9)))
    assert set(sub[sub != 0].tolist()) <= set(range(1, 60))


@FAST
@given(st.sets(st.integers(1, 200), min_size=2, max_size=40), st.integers(0, 50))
def test_negatives_in_space_and_distinct(space, seed):
    space = np.array(sorted(space))
    rng = np.random.default_rng(seed)
    pos = rng.choice(space, size=30)
    neg = sample_negatives(rng, space, pos)
    assert np.isin(neg, space).all()
    assert not (neg == pos).any()


@FAST
@given(st.lists(st.integers(0, 3), min_size=1, max_size=20), st.data())
def test_rank_is_a_permutation(scores, data):
    scores = np.array(scores, dtype=float)
    cands = np.array(data.draw(st.permutations(range(len(scores)))))
    got = sorted(ranks(scores, i, cands) for i in range(len(scores)))
    assert got == list(range(1, len(scores) + 1))
