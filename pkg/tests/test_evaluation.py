from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from timecl.evaluation import (MetricResult, RunReport, accuracy, evaluate_all, infer, knowledge_transfer,
                               mrr_at_k, pseudo_label_quality, ranks)
from timecl.model import ArchConfig
from timecl.trainer import TrainConfig, run_continual

ARCH = ArchConfig(f=8, n=8, K=2)
FAST = TrainConfig(epochs=1, batch_size=32, c=1.0, seed=2)


@pytest.fixture(scope="module")
def trained(small_bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    art = run_continual(small_bundle, FAST, ARCH, out)
    return art, out


def test_mrr_examples():
    scores = np.array([0.9, 0.5, 0.7, 0.1, 0.3, 0.2, 0.0])
    assert mrr_at_k(scores, 0) == 1.0
    assert mrr_at_k(scores, 1) == pytest.approx(1 / 3)
    assert mrr_at_k(scores, 3) == 0.0  # rank 6
    with pytest.raises(ValueError):
        mrr_at_k(scores, 42)


def test_mrr_tie_break_by_item_id():
    scores = np.array([1.0, 1.0, 1.0])
    cands = np.array([30, 10, 20])
    assert mrr_at_k(scores, 10, candidates=cands) == 1.0
    assert mrr_at_k(scores, 20, candidates=cands) == 0.5
    assert mrr_at_k(scores, 30, candidates=cands) == pytest.approx(1 / 3)


def test_mrr_matches_full_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        C = int(rng.integers(1, 21))
        cands = rng.choice(100, size=C, replace=False)
        scores = rng.integers(0, 4, size=C).astype(float)  # many ties
        label = int(rng.choice(cands))
        order = sorted(range(C), key=lambda j: (-scores[j], cands[j]))
        rank = [int(cands[j]) for j in order].index(label) + 1
        want = 1 / rank if rank <= 5 else 0.0
        assert mrr_at_k(scores, label, candidates=cands) == want


def test_accuracy_examples():
    assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75
    assert accuracy([1, 1], [1, 1]) == 1.0
    assert accuracy([0, 0], [1, 1]) == 0.0
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])


def test_knowledge_transfer_values():
    assert knowledge_transfer(0.6102, 0.3002) == pytest.approx(103.26, abs=0.01)
    assert knowledge_transfer(0.3698, 0.3002) == pytest.approx(23.18, abs=0.01)
    assert knowledge_transfer(0.3, 0.3) == 0.0
    with pytest.raises(ValueError):
        knowledge_transfer(0.5, 0.0)


def test_metric_range():
    with pytest.raises(ValueError):
        MetricResult(1, "MRR@5", 1.5, 3)


def test_infer_shapes_and_cutoff(small_bundle, trained):
    art, _ = trained
    pred = infer(art.model, small_bundle, 2, FAST.seed)
    space = small_bundle.store.items_at(small_bundle.eval_ts, "cart")
    assert pred.scores.shape == (len(pred.users), len(space))
    assert np.array_equal(pred.candidates, space)
    late = small_bundle.store.first_seen_by_channel["cart"]
    assert np.all(late[pred.candidates] <= small_bundle.eval_ts)
    again = infer(art.model, small_bundle, 2, FAST.seed)
    assert np.array_equal(pred.scores, again.scores)
    prof = infer(art.model, small_bundle, 4, FAST.seed)
    assert prof.classes.shape == prof.labels.shape
    with pytest.raises(KeyError):
        infer(art.model, small_bundle, 9)


def test_evaluate_all_report(small_bundle, trained, tmp_path):
    art, _ = trained
    before = art.model.checksum()
    base = {1: 0.1, 2: MetricResult(2, "MRR@5", 0.2, 5)}
    rep = evaluate_all(art.model, small_bundle, base, FAST.seed)
    assert art.model.checksum() == before
    assert sorted(rep.results) == [1, 2, 3, 4]
    assert [rep.results[i].kind for i in (1, 2, 3, 4)] == ["MRR@5"] * 3 + ["Accuracy"]
    assert sorted(rep.kt) == [1, 2] and sorted(rep.baseline) == [1, 2]
    again = evaluate_all(art.model, small_bundle, base, FAST.seed)
    assert rep.to_json() == again.to_json()
    js, md = rep.write(tmp_path)
    assert RunReport.from_dict(__import__("json").loads(js.read_text())).to_json() == rep.to_json()
    assert "| T1 | MRR@5 |" in md.read_text()


def test_pseudo_label_quality(small_bundle, trained):
    from timecl.model import load_checkpoint

    _, out = trained
    ckpts = {k: load_checkpoint(out / f"task_{k}.ckpt") for k in (1, 2, 3, 4)}
    for k in (1, 2):
        a = pseudo_label_quality(ckpts, small_bundle, k, "sampled", c=1.0, seed=FAST.seed)
        b = pseudo_label_quality(ckpts, small_bundle, k, "random", c=1.0, seed=FAST.seed)
        assert a.users == b.users > 0
        assert -1.0 <= a.mean_cosine <= 1.0 and -1.0 <= b.mean_cosine <= 1.0
    with pytest.raises(ValueError):
        pseudo_label_quality(ckpts, small_bundle, 4, "sampled")
    with pytest.raises(ValueError):
        pseudo_label_quality(ckpts, small_bundle, 1, "other")
