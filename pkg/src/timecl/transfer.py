"""Distribution-aware user sampling and the forward/backward transfer losses.

Forward transfer regresses the live model onto a frozen snapshot's outputs
for users whose pseudo-representation sits close to the mean item embedding
of an earlier task.  Backward transfer replays the autoregressive base task
on users heavy in newly emerged items, and runs a contrastive objective
under earlier item-task masks on the users that drifted furthest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from timecl.model.arch import FrozenModel, ModelState, sigmoid, task_gates
from timecl.model.network import Grads, project, represent
from timecl.model.objectives import autoregressive_loss, contrastive_views, representation_mse
from timecl.scenario.core import PAD, ScenarioBundle, TaskView
from timecl.scenario.views import new_item_counts


@dataclass(frozen=True)
class AugmentConfig:
    mask_ratio: float = 0.2
    substitute_ratio: float = 0.2
    mask_token: int | None = None

    def __post_init__(self):
        for name in ("mask_ratio", "substitute_ratio"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")


@dataclass
class PlanEntry:
    task_k: int
    rho: float
    count: int
    fkt_users: list[int] = field(default_factory=list)
    bkt2_users: list[int] = field(default_factory=list)


@dataclass
class SamplePlan:
    task_i: int
    epoch: int
    entries: dict[int, PlanEntry] = field(default_factory=dict)
    bkt1_users: list[int] = field(default_factory=list)

    def records(self) -> list[dict]:
        out = []
        for k in sorted(self.entries):
            e = self.entries[k]
            rec = {"task_i": self.task_i, "epoch": self.epoch, "task_k": k, "rho": e.rho,
                   "S": e.count, "fkt_users": list(e.fkt_users),
                   "bkt2_users": list(e.bkt2_users)}
            if k == 1:
                rec["bkt1_users"] = list(self.bkt1_users)
            out.append(rec)
        return out


def task_mean_embedding(model: ModelState, task_k: int, label_space) -> np.ndarray:
    """Mean item embedding over a task's label space; stored in ``model.task_means``."""
    items = np.asarray(label_space, dtype=np.int64)
    if not len(items):
        raise ValueError(f"task {task_k} has an empty label space")
    mean = model.params["item_emb"][items].mean(axis=0)
    model.task_means[task_k] = mean
    return mean


def _cos(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    denom = na * nb
    dot = np.sum(a * b, axis=-1)
    return np.where(denom > 0, dot / np.where(denom > 0, denom, 1.0), 0.0)


def mask_cosines(model: ModelState, frozen: ModelState, task_i: int, task_k: int) -> np.ndarray:
    """Per-block cosine between the live gates of ``task_i`` and frozen gates of ``task_k``."""
    live = task_gates(model, task_i)
    old = task_gates(frozen, task_k)
    K = live.shape[0]
    return _cos(live.reshape(K, -1), old.reshape(K, -1))


def rate_from_cosines(cosines: Sequence[float], c: float) -> float:
    cos = np.asarray(cosines, dtype=np.float64)
    return float(1.0 - sigmoid(c * cos).mean())


def sampling_rate(model: ModelState, frozen: ModelState, task_i: int, task_k: int,
                  c: float = 1.0) -> float:
    """``1 - mean_d sigmoid(c * cos(gate_i[d], frozen_gate_k[d]))`` over blocks ``d``."""
    return rate_from_cosines(mask_cosines(model, frozen, task_i, task_k), c)


def sample_count(rho: float, total: int) -> int:
    if total < 1:
        return 0
    return int(min(max(math.floor(rho * total), 1), total))


def pseudo_labels(frozen: ModelState, tokens, task_k: int) -> np.ndarray:
    return represent(frozen, tokens, task_k)


def mean_similarity(reps: np.ndarray, frozen: ModelState, task_k: int,
                    mean_task: int | None = None) -> np.ndarray:
    """Cosine between each user's prediction under task k and a stored mean item embedding.

    For item tasks the representation is first mapped through the task's
    projector, which is where it is compared with item embeddings when
    scoring; profile-task representations are used as they are.
    """
    anchor = task_k if mean_task is None else mean_task
    if anchor not in frozen.task_means:
        raise KeyError(f"no stored mean item embedding for task {anchor}")
    if frozen.task(task_k).is_item:
        reps = project(frozen, task_k, reps)
    return _cos(reps, frozen.task_means[anchor][None, :])


def _top(users: np.ndarray, key: np.ndarray, S: int) -> list[int]:
    # descending key, ascending user id among ties
    order = np.lexsort((users, -key))
    return users[order[:min(S, len(users))]].tolist()


def fkt_sample(frozen: ModelState, candidates: TaskView, task_k: int, S: int, *,
               reps: np.ndarray | None = None, mean_task: int | None = None) -> list[int]:
    """The ``S`` users whose frozen representation is most aligned with the task-k item mean."""
    if reps is None:
        reps = pseudo_labels(frozen, candidates.sequences, task_k)
    sim = mean_similarity(reps, frozen, task_k, mean_task)
    return _top(np.asarray(candidates.users), sim, S)


def bkt2_sample(frozen: ModelState, candidates: TaskView, task_k: int, S: int, *,
                reps: np.ndarray | None = None, mean_task: int | None = None) -> list[int]:
    """The ``S`` users least aligned with the task-k item mean (ties: ascending id)."""
    if reps is None:
        reps = pseudo_labels(frozen, candidates.sequences, task_k)
    sim = mean_similarity(reps, frozen, task_k, mean_task)
    return _top(np.asarray(candidates.users), -sim, S)


def bkt1_sample(bundle: ScenarioBundle, task_i: int, S: int,
                candidates: Sequence[int] | None = None) -> list[int]:
    """Top-``S`` users by count of items that emerged since the previous task."""
    if candidates is None:
        from timecl.scenario.views import materialize

        task = bundle.task(task_i)
        candidates = materialize(bundle, task_i, task.train_ts).users
    users = np.asarray(candidates, dtype=np.int64)
    counts = new_item_counts(bundle, task_i, users.tolist())
    return _top(users, counts.astype(np.float64), S)


def random_sample(rng: np.random.Generator, users: Sequence[int], S: int) -> list[int]:
    users = np.asarray(users, dtype=np.int64)
    S = min(S, len(users))
    return np.sort(rng.choice(users, size=S, replace=False)).tolist()


def _aug_count(ratio: float, nonpad: int) -> int:
    return min(nonpad, math.ceil(ratio * nonpad - 1e-9))


def augment_mask(seq, cfg: AugmentConfig, rng: np.random.Generator,
                 mask_token: int | None = None) -> np.ndarray:
    """Replace ceil(ratio * non-pad) distinct non-pad positions with the mask token."""
    token = mask_token if mask_token is not None else cfg.mask_token
    if token is None:
        raise ValueError("a mask token id is required")
    out = np.array(seq, dtype=np.int64, copy=True)
    positions = np.flatnonzero(out != PAD)
    k = _aug_count(cfg.mask_ratio, len(positions))
    if k:
        out[rng.choice(positions, size=k, replace=False)] = token
    return out


def augment_substitute(seq, cfg: AugmentConfig, vocab, rng: np.random.Generator) -> np.ndarray:
    """Replace ceil(ratio * non-pad) distinct non-pad positions with uniform draws from ``vocab``."""
    vocab = np.asarray(vocab, dtype=np.int64)
    if not len(vocab):
        raise ValueError("substitution vocabulary is empty")
    out = np.array(seq, dtype=np.int64, copy=True)
    positions = np.flatnonzero(out != PAD)
    k = _aug_count(cfg.substitute_ratio, len(positions))
    if k:
        out[rng.choice(positions, size=k, replace=False)] = vocab[rng.integers(0, len(vocab), k)]
    return out


def sample_negatives(rng: np.random.Generator, label_space, positives) -> np.ndarray:
    """One uniform negative per positive from ``label_space`` excluding that positive."""
    space = np.asarray(label_space, dtype=np.int64)
    positives = np.asarray(positives, dtype=np.int64)
    L = len(space)
    if L < 2:
        raise ValueError("label space has fewer than 2 items; no negative available")
    pos_idx = np.searchsorted(space, positives)
    inside = (pos_idx < L) & (space[np.minimum(pos_idx, L - 1)] == positives)
    draw = rng.integers(0, L - 1, size=positives.shape)
    draw = np.where(inside & (draw >= pos_idx), draw + 1, draw)
    # positives outside the space cannot collide, so draw over the whole space
    full = rng.integers(0, L, size=positives.shape) if (~inside).any() else draw
    return space[np.where(inside, draw, full)]


def fkt_objective(model: ModelState, groups):
    """Mean over tasks of representation MSE; ``groups`` is ``[(task_k, tokens, targets)]``."""
    groups = [g for g in groups if len(g[1])]
    if not groups:
        return 0.0, Grads()
    total, grads = 0.0, Grads()
    for task_k, tokens, targets in groups:
        loss, g = representation_mse(model, task_k, tokens, targets)
        total += loss
        grads.merge(g, 1.0 / len(groups))
    return total / len(groups), grads


def fkt_loss(model: ModelState, frozen: ModelState, plan: SamplePlan, view: TaskView):
    """Forward-transfer loss for every previous task in ``plan`` (returns loss, grads)."""
    rows = view.row_of()
    groups = []
    for k in sorted(plan.entries):
        users = plan.entries[k].fkt_users
        idx = np.array([rows[u] for u in users], dtype=np.int64)
        tokens = view.sequences[idx]
        groups.append((k, tokens, pseudo_labels(frozen, tokens, k)))
    return fkt_objective(model, groups)


def bkt1_loss(model: ModelState, users: Sequence[int], view: TaskView, label_space,
              neg_seed: int, chunk_stride: int = 1):
    """Autoregressive BPR replay of the base task on the given users' current sequences."""
    if len(np.asarray(label_space)) < 2:
        raise ValueError("label space has fewer than 2 items; no negative available")
    rows = view.row_of()
    tokens = view.sequences[[rows[u] for u in users]] if len(users) else \
        np.zeros((0, view.sequences.shape[1]), dtype=np.int64)
    return bkt1_tokens_loss(model, tokens, label_space, np.random.default_rng(neg_seed),
                            chunk_stride)


def bkt1_tokens_loss(model: ModelState, tokens: np.ndarray, label_space,
                     rng: np.random.Generator, chunk_stride: int = 1):
    if not len(tokens):
        return 0.0, Grads()
    negs = sample_negatives(rng, label_space, tokens[:, 1:])
    return autoregressive_loss(model, tokens, negs, chunk_stride, task_id=1)


def previous_item_tasks(model: ModelState, task_i: int) -> list[int]:
    return [k for k in range(2, task_i) if model.task(k).is_item]


def bkt2_objective(model: ModelState, groups, cfg: AugmentConfig, vocab,
                   rng: np.random.Generator, batch_size: int = 32):
    """``groups`` is ``[(task_k, tokens)]``; mean over tasks of batch-averaged contrastive loss."""
    if batch_size < 2:
        raise ValueError("contrastive batch size must be >= 2")
    mask_token = cfg.mask_token if cfg.mask_token is not None else model.mask_token
    parts = []
    for task_k, tokens in groups:
        if not model.task(task_k).is_item or task_k < 2:
            continue
        if len(tokens) < 2:
            continue
        a1 = np.stack([augment_mask(s, cfg, rng, mask_token) for s in tokens])
        a2 = np.stack([augment_substitute(s, cfg, vocab, rng) for s in tokens])
        parts.append(contrastive_views(model, task_k, a1, a2, batch_size))
    if not parts:
        return 0.0, Grads()
    grads = Grads()
    for _, g in parts:
        grads.merge(g, 1.0 / len(parts))
    return sum(p[0] for p in parts) / len(parts), grads


def bkt2_loss(model: ModelState, plan: SamplePlan, view: TaskView,
              prev_item_tasks: Sequence[int], cfg: AugmentConfig, vocab,
              rng: np.random.Generator, batch_size: int = 32):
    """Contrastive backward transfer under each earlier item-task mask (returns loss, grads)."""
    if batch_size < 2:
        raise ValueError("contrastive batch size must be >= 2")
    rows = view.row_of()
    groups = []
    for k in prev_item_tasks:
        if k not in plan.entries:
            continue
        idx = [rows[u] for u in plan.entries[k].bkt2_users]
        groups.append((k, view.sequences[idx]))
    return bkt2_objective(model, groups, cfg, vocab, rng, batch_size)


def build_plan(model: ModelState, frozen: FrozenModel, bundle: ScenarioBundle, view: TaskView,
               task_i: int, epoch: int, c: float, pseudo: dict[int, np.ndarray],
               rng: np.random.Generator | None = None, random_sampling: bool = False,
               with_bkt2: bool = True, with_bkt1: bool = True) -> SamplePlan:
    """Rates, counts and user sets for every earlier task, from the current masks.

    ``pseudo`` caches frozen representations of ``view`` users per task (rows
    aligned with ``view.users``) and is filled on demand.
    """
    plan = SamplePlan(task_i, epoch)
    users = view.users
    for k in range(1, task_i):
        rho = sampling_rate(model, frozen, task_i, k, c)
        S = sample_count(rho, len(users))
        entry = PlanEntry(k, rho, S)
        if k not in pseudo:
            pseudo[k] = pseudo_labels(frozen, view.sequences, k)
        if random_sampling:
            entry.fkt_users = random_sample(rng, users, S)
        else:
            anchor = k if k in frozen.task_means else 1
            entry.fkt_users = fkt_sample(frozen, view, k, S, reps=pseudo[k], mean_task=anchor)
        if with_bkt2 and k >= 2 and model.task(k).is_item:
            if random_sampling:
                entry.bkt2_users = random_sample(rng, users, S)
            else:
                entry.bkt2_users = bkt2_sample(frozen, view, k, S, reps=pseudo[k],
                                               mean_task=k)
        plan.entries[k] = entry
        if k == 1 and with_bkt1:
            if random_sampling:
                plan.bkt1_users = random_sample(rng, users, S)
            else:
                plan.bkt1_users = bkt1_sample(bundle, task_i, S, candidates=users)
    return plan
