"""Acceptance criteria, one PASS/FAIL line each (collected in the terminal summary).

Run with ``pytest tests/test_acceptance.py -v``. The directional experiment
(criterion 7) trains 20 models on the default scenario and takes a few
minutes on one CPU core.
"""
from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from conftest import perturbed_model, random_tokens
from fdcheck import max_relative_error, objectives
from timecl import transfer
from timecl.evaluation import RunReport, evaluate_all, knowledge_transfer, pseudo_label_quality
from timecl.model import (ArchConfig, bpr_loss, contrastive_loss, forward, gradients, item_task_loss,
                          load_checkpoint, snapshot, task_gates)
from timecl.model.objectives import autoregressive_loss
from timecl.scenario import GenConfig, TaskView, generate_synthetic, materialize, split
from timecl.scenario.views import history, new_item_stats, split_sizes, task_intervals
from timecl.trainer import TrainConfig, run_continual

SEEDS = range(5)
# default synthetic scenario; training uses lr 3e-3 (see README, "Acceptance")
ACCEPT_TRAIN = dict(lr=3e-3, c=1.0)
VARIANTS = {
    "full": {},
    "fkt_only": dict(bkt1=False, bkt2=False),
    "none": dict(fkt=False, bkt1=False, bkt2=False),
    "random": dict(random_sampling=True),
}


def record(n: int, ok: bool, what: str, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n}: {what}" + (f" ({detail})" if detail else "")
    conftest.ACCEPTANCE[n] = line
    print(line)
    assert ok, line


# ---- 1 -----------------------------------------------------------------------

def test_1_gradient_suite():
    arch = ArchConfig(f=8, n=6, K=2, kernel_width=3, dilations=(1, 2))
    t0 = time.perf_counter()
    model = perturbed_model(arch, num_items=10, seed=1)
    errors = {name: max_relative_error(model, obj)[0] for name, obj in objectives(model, seed=2).items()}
    elapsed = time.perf_counter() - t0
    worst = max(errors.values())
    record(1, worst < 1e-4 and elapsed < 60, "analytic gradients match central differences",
           f"{len(errors)} objectives, max rel err {worst:.1e}, {elapsed:.0f}s")


# ---- 2 -----------------------------------------------------------------------

def _arch_case(rng) -> ArchConfig:
    K = int(rng.integers(1, 4))
    return ArchConfig(f=int(rng.integers(3, 9)), n=int(rng.integers(3, 9)), K=K,
                      kernel_width=int(rng.integers(2, 4)),
                      dilations=tuple(int(d) for d in rng.choice([1, 2, 4], size=K)),
                      mask_per_layer=bool(rng.integers(0, 2)))


def test_2_architecture_invariants():
    rng = np.random.default_rng(2024)
    failures = []
    for case in range(200):
        arch = _arch_case(rng)
        m = perturbed_model(arch, num_items=15, seed=case)
        task = int(rng.integers(1, 5))
        tok = random_tokens(rng, 3, arch.n, 15)
        r = int(rng.integers(0, arch.n - 1))
        other = tok.copy()
        other[:, r + 1:] = rng.integers(1, 16, size=(3, arch.n - r - 1))
        a, b = forward(m, tok, task), forward(m, other, task)
        causal = all(np.array_equal(x[:, :r + 1], y[:, :r + 1]) for x, y in zip(a.layers, b.layers))

        gates = task_gates(m, task).copy()
        j = int(rng.integers(0, arch.K))
        gates[j] = 0.0
        hs = forward(m, tok, task, gates=gates)
        identity = np.array_equal(hs.layers[j + 1], hs.layers[j])

        g = task_gates(m, task)
        in_range = bool(np.all((g > 0) & (g < 1)))

        if task == 4:
            grads = gradients(m, lambda mm: autoregressive_loss(
                mm, tok, rng_fixed_negs(tok, case)))
        else:
            grads = gradients(m, lambda mm: item_task_loss(
                mm, task, tok, np.arange(1, 4), np.arange(4, 7)))
        pad_zero = bool(np.all(grads["item_emb"][0] == 0))
        if not (causal and identity and in_range and pad_zero):
            failures.append((case, causal, identity, in_range, pad_zero))
    record(2, not failures, "causality, zero-gate identity, gate range, pad-row gradient",
           f"{200 - len(failures)}/200 cases")


def rng_fixed_negs(tok, seed):
    return np.random.default_rng(seed).integers(1, 16, size=(tok.shape[0], tok.shape[1] - 1))


# ---- 3 -----------------------------------------------------------------------

def _oracle(users, keys, S, largest):
    pairs = sorted(zip(users, keys), key=lambda p: ((-p[1] if largest else p[1]), p[0]))
    return [u for u, _ in pairs[:min(S, len(users))]]


def _cos(a, b):
    return float(np.dot(a, b) / (math.sqrt(float(np.dot(a, a))) * math.sqrt(float(np.dot(b, b)))))


def test_3_sampler_oracles(small_bundle):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    arch = ArchConfig(f=4, n=5, K=1, dilations=(1,))
    m = perturbed_model(arch, num_items=12, seed=5)
    for k in (1, 2, 3):
        m.task_means[k] = rng.normal(size=4)
    frozen = snapshot(m)
    counts_by_task = {}
    for i in (2, 3, 4):
        users = materialize(small_bundle, i, small_bundle.task(i).train_ts).users
        counts_by_task[i] = dict(zip(users.tolist(),
                                     transfer.new_item_counts(small_bundle, i, users.tolist()).tolist()))
    bad = 0
    for _ in range(500):
        U = int(rng.integers(1, 101))
        S = int(rng.integers(1, U + 3))
        k = int(rng.integers(1, 4))
        users = rng.choice(10_000, size=U, replace=False)
        # rows drawn from a small pool so that exact ties occur
        pool = rng.normal(size=(int(rng.integers(1, 12)), 4))
        reps = pool[rng.integers(0, len(pool), size=U)]
        view = TaskView(frozen.task(k), 0, users.astype(np.int64), np.ones((U, 5), dtype=np.int64),
            np.ones(U, dtype=np.int64), np.arange(1, 5))
        w, bias = frozen.params[f"proj{k}.w"], frozen.params[f"proj{k}.b"]
        keys = [_cos(r @ w + bias, frozen.task_means[k]) for r in reps]
        ok = transfer.fkt_sample(frozen, view, k, S, reps=reps) == _oracle(users.tolist(), keys, S, True)
        ok &= transfer.bkt2_sample(frozen, view, k, S, reps=reps) == _oracle(users.tolist(), keys, S, False)

        i = int(rng.integers(2, 5))
        table = counts_by_task[i]
        cand = rng.choice(sorted(table), size=min(U, len(table)), replace=False).tolist()
        want = _oracle(cand, [table[u] for u in cand], S, True)
        ok &= transfer.bkt1_sample(small_bundle, i, S, candidates=cand) == want
        bad += not ok
    elapsed = time.perf_counter() - t0
    record(3, bad == 0 and elapsed < 60, "samplers equal brute-force selection",
           f"{500 - bad}/500 instances, {elapsed:.0f}s")


# ---- 4 -----------------------------------------------------------------------

def test_4_formula_checks():
    checks = {
        "KT 103.26": abs(knowledge_transfer(0.6102, 0.3002) - 103.26) <= 0.01,
        "KT 23.18": abs(knowledge_transfer(0.3698, 0.3002) - 23.18) <= 0.01,
        "rate 0.5": transfer.rate_from_cosines([0.0, 0.0, 0.0], 10.0) == 0.5,
        "contrastive ln3": abs(contrastive_loss(np.ones((2, 3)), np.ones((2, 3))) - math.log(3)) <= 1e-9,
        "bpr ln2": abs(bpr_loss(np.ones(1), np.array([0.4]), np.array([0.4])) - math.log(2)) <= 1e-9,
    }
    failed = [k for k, v in checks.items() if not v]
    record(4, not failed, "formula checks", ", ".join(failed) or f"{len(checks)} checks")


# ---- 6 -----------------------------------------------------------------------

def _random_gen(rng) -> GenConfig:
    return GenConfig(users=int(rng.integers(40, 140)), initial_items=int(rng.integers(20, 60)),
                     new_items=tuple(int(x) for x in rng.integers(0, 25, size=3)),
                     n=int(rng.integers(4, 11)), activity=float(rng.uniform(10, 16)),
                     event_rate=float(rng.uniform(0.25, 0.5)), categories=int(rng.integers(2, 6)),
                     novelty=float(rng.uniform(0, 0.6)), drift=float(rng.uniform(0, 0.3)))


def _scenario_ok(b, seed) -> bool:
    stamps = [t.train_ts for t in b.tasks]
    item_sets = [set(b.store.items_at(t).tolist()) for t in stamps]
    ok = all(a <= c for a, c in zip(item_sets, item_sets[1:]))
    for user in b.store.user_ids:
        lengths = [len(history(b, user, t)) for t in stamps]
        ok &= lengths == sorted(lengths)
    for task in b.tasks:
        for at in stamps[task.id - 1:]:
            v = materialize(b, task.id, at)
            nz = v.sequences != 0
            first = np.where(nz.any(axis=1), nz.argmax(axis=1), nz.shape[1])
            ok &= bool(np.all(nz == (np.arange(nz.shape[1])[None, :] >= first[:, None])))
            if task.is_item:
                ok &= bool(np.isin(v.labels, v.label_space).all())
                ok &= set(v.label_space.tolist()) <= set(b.store.items_at(at, task.target).tolist())
            parts = split(v, seed)
            ok &= tuple(len(p) for p in parts) == split_sizes(len(v))
            ok &= sorted(np.concatenate([p.users for p in parts]).tolist()) == v.users.tolist()
    stats = new_item_stats(b, task_intervals(b))
    ok &= stats.given["click"] == b.ledger["given"]
    ok &= list(stats.counts["click"]) == list(b.ledger["new_items"])
    return bool(ok)


def test_6_scenario_invariants():
    rng = np.random.default_rng(66)
    passed = sum(_scenario_ok(generate_synthetic(_random_gen(rng), s), s) for s in range(50))
    record(6, passed == 50, "scenario invariants and stats == generator ledger", f"{passed}/50 configs")


# ---- 7, 5, 8, 9 share the default-scenario runs ------------------------------

@pytest.fixture(scope="module")
def directional(tmp_path_factory):
    root = tmp_path_factory.mktemp("directional")
    t0 = time.perf_counter()
    bundles, means, runs = {}, {v: [] for v in VARIANTS}, {}
    for seed in SEEDS:
        bundle = generate_synthetic(GenConfig(), seed)
        bundles[seed] = bundle
        for name, flags in VARIANTS.items():
            cfg = TrainConfig(seed=seed, **ACCEPT_TRAIN, **flags)
            out = root / f"{name}_{seed}" if name == "full" else None
            art = run_continual(bundle, cfg, None, out)
            report = evaluate_all(art.model, bundle, seed=seed)
            means[name].append(float(np.mean([report.results[i].value for i in (1, 2, 3)])))
            if name == "full":
                report.write(out / "report")
                runs[seed] = (out, art)
    return dict(bundles=bundles, means=means, runs=runs, seconds=time.perf_counter() - t0, root=root)


def test_7_directional(directional):
    m = {k: np.array(v) for k, v in directional["means"].items()}
    wins = int(np.sum((m["full"] >= m["fkt_only"]) & (m["full"] >= m["none"])))
    rand_ok = m["random"].mean() <= m["full"].mean()
    secs = directional["seconds"]
    detail = (f"wins {wins}/5; mean MRR@5 full {m['full'].mean():.4f}, fkt-only {m['fkt_only'].mean():.4f}, "
              f"none {m['none'].mean():.4f}, random {m['random'].mean():.4f}; {secs:.0f}s")
    record(7, wins >= 4 and rand_ok and secs < 600, "full >= ablations, random <= distribution-aware", detail)


def test_5_fkt_fixed_point(directional):
    worst, checked, engaged = 0.0, 0, True
    for seed, (_, art) in directional["runs"].items():
        for i in (2, 3, 4):
            rows = [r for r in art.losses if r["task"] == i]
            steps = sum(1 for r in rows if r["epoch"] == rows[0]["epoch"])
            first = [p for p in art.plans if p["task_i"] == i and p["epoch"] == rows[0]["epoch"]]
            # every first-step chunk holds at least one user when S >= steps
            engaged &= bool(first) and all(p["S"] >= steps for p in first)
            worst = max(worst, rows[0]["fkt"])
            checked += 1
    record(5, worst <= 1e-10 and engaged, "FKT loss is zero at the first step of every task i > 1",
           f"{checked} task starts, max {worst:.1e}")


def test_8_reproducibility(directional, tmp_path):
    seed = 0
    first, _ = directional["runs"][seed]
    bundle = directional["bundles"][seed]
    art = run_continual(bundle, TrainConfig(seed=seed, **ACCEPT_TRAIN), None, tmp_path)
    evaluate_all(art.model, bundle, seed=seed).write(tmp_path / "report")
    names = sorted(p.relative_to(first).as_posix() for p in first.rglob("*") if p.is_file())
    same = all((first / n).read_bytes() == (tmp_path / n).read_bytes() for n in names)
    same &= names == sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file())
    record(8, same, "identical config and seed give byte-identical checkpoints and reports",
           f"{len(names)} files compared")


def test_9_pseudo_label_diagnostic(directional):
    rows, ok = [], True
    for seed, (out, _) in directional["runs"].items():
        ckpts = {k: load_checkpoint(Path(out) / f"task_{k}.ckpt") for k in (1, 2, 3, 4)}
        bundle = directional["bundles"][seed]
        for k in (1, 2):
            a = pseudo_label_quality(ckpts, bundle, k, "sampled", c=ACCEPT_TRAIN["c"], seed=seed)
            b = pseudo_label_quality(ckpts, bundle, k, "random", c=ACCEPT_TRAIN["c"], seed=seed)
            ok &= a.users == b.users > 0
            ok &= all(-1.0 <= q.mean_cosine <= 1.0 and math.isfinite(q.mean_cosine) for q in (a, b))
            rows.append((seed, k, a.mean_cosine, b.mean_cosine))
    for seed, k, s, r in rows:
        print(f"seed {seed} T{k}->T{k + 1}: sampled {s:.4f} random {r:.4f}")
    sampled = np.mean([r[2] for r in rows])
    rand = np.mean([r[3] for r in rows])
    record(9, ok, "pseudo-label quality emitted for sampled and random users",
           f"{len(rows)} pairs, mean cosine sampled {sampled:.4f} random {rand:.4f}")
