"""Sequential continual training over a scenario's task list."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from timecl.errors import ConfigError, NumericalError
from timecl.model.arch import ArchConfig, FrozenModel, ModelState, init_model, save_checkpoint, snapshot
from timecl.model.network import Grads, represent
from timecl.model.objectives import autoregressive_loss, item_task_loss, profile_task_loss
from timecl.model.optim import Adam
from timecl.scenario.core import ScenarioBundle, TaskView
from timecl.scenario.views import materialize, split
from timecl import transfer

log = logging.getLogger(__name__)

# stream tags for independent random streams
_SHUFFLE, _NEG, _PLAN, _AUX, _BKT1, _BKT2 = range(6)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    c: float = 1.0
    chunk_stride: int = 1
    contrastive_batch: int = 32
    mask_ratio: float = 0.2
    substitute_ratio: float = 0.2
    fkt: bool = True
    bkt1: bool = True
    bkt2: bool = True
    random_sampling: bool = False
    refresh_task_means: bool = False
    early_stopping: bool = False
    patience: int = 3
    seed: int = 0

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", name)
        for name in ("epochs", "batch_size", "chunk_stride", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", name)
        if self.contrastive_batch < 2:
            raise ConfigError("contrastive_batch must be >= 2", "contrastive_batch")
        if self.lr <= 0:
            raise ConfigError("lr must be positive", "lr")
        for name in ("mask_ratio", "substitute_ratio"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)", name)

    @property
    def weights(self) -> tuple[float, float, float]:
        """Effective (alpha, beta, gamma); a disabled module contributes exactly 0."""
        return (self.alpha if self.fkt else 0.0,
                self.beta if self.bkt1 else 0.0,
                self.gamma if self.bkt2 else 0.0)


@dataclass
class RunArtifacts:
    model: ModelState
    checkpoints: list[Path] = field(default_factory=list)
    losses: list[dict] = field(default_factory=list)
    plans: list[dict] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def _rng(cfg: TrainConfig, task: int, epoch: int, tag: int, step: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, task, epoch, tag, step])


def _optimizer(cfg: TrainConfig) -> Adam:
    return Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def _check_finite(record: dict) -> None:
    bad = {k: v for k, v in record.items() if isinstance(v, float) and not math.isfinite(v)}
    if bad:
        raise NumericalError(f"non-finite loss at task {record['task']} epoch "
                             f"{record['epoch']} step {record['step']}: {bad}")


def _check_grads(grads: Grads, record: dict) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name} at task {record['task']} "
                                 f"epoch {record['epoch']} step {record['step']}")


def _batches(n_rows: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n_rows)
    return [order[s:s + batch_size] for s in range(0, n_rows, batch_size)]


def _chunks(users: list[int], pieces: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle ``users`` and deal them into ``pieces`` near-equal consecutive chunks."""
    if not users:
        return [[] for _ in range(pieces)]
    shuffled = np.asarray(users)[rng.permutation(len(users))]
    return [c.tolist() for c in np.array_split(shuffled, pieces)]


def base_sequences(view: TaskView) -> np.ndarray:
    """History followed by the label, keeping the most recent ``n`` tokens."""
    full = np.concatenate([view.sequences, view.labels[:, None]], axis=1)
    return np.ascontiguousarray(full[:, 1:])


def _val_metric(model: ModelState, bundle: ScenarioBundle, view: TaskView) -> float:
    from timecl.evaluation import score_view

    return score_view(model, view)


def _apply_early_stopping(model, history, cfg):
    """Returns True if training should stop; keeps best parameters in ``history``."""
    value, params = history["last"]
    if value > history.get("best", -np.inf):
        history["best"] = value
        history["best_params"] = params
        history["bad"] = 0
    else:
        history["bad"] = history.get("bad", 0) + 1
    return history["bad"] >= cfg.patience


def train_first_task(model: ModelState, view: TaskView, cfg: TrainConfig,
                     losses: list | None = None, val_view: TaskView | None = None) -> ModelState:
    """Autoregressive next-item training of the base task on the train split ``view``."""
    cfg.validate()
    task = model.task(1)
    if view.task.id != 1:
        raise ValueError("train_first_task expects a view of task 1")
    if len(view.label_space) < 2:
        raise ValueError("label space has fewer than 2 items; no negative available")
    tokens_all = base_sequences(view)
    opt = _optimizer(cfg)
    losses = losses if losses is not None else []
    history: dict = {}
    for epoch in range(1, cfg.epochs + 1):
        batches = _batches(len(tokens_all), cfg.batch_size, _rng(cfg, 1, epoch, _SHUFFLE))
        neg_rng = _rng(cfg, 1, epoch, _NEG)
        for step, rows in enumerate(batches, 1):
            tokens = tokens_all[rows]
            negs = transfer.sample_negatives(neg_rng, view.label_space, tokens[:, 1:])
            loss, grads = autoregressive_loss(model, tokens, negs, 1, task_id=1)
            record = {"task": 1, "epoch": epoch, "step": step, "main": loss, "fkt": 0.0,
                      "bkt1": 0.0, "bkt2": 0.0, "total": loss}
            _check_finite(record)
            _check_grads(grads, record)
            opt.step(model.params, grads, {"item_emb": 0})
            losses.append(record)
        if cfg.early_stopping and val_view is not None:
            history["last"] = (_val_metric(model, None, val_view),
                               {k: v.copy() for k, v in model.params.items()})
            if _apply_early_stopping(model, history, cfg):
                break
    if cfg.early_stopping and "best_params" in history:
        model.params.update(history["best_params"])
    transfer.task_mean_embedding(model, 1, view.label_space)
    log.info("task 1 (%s) trained: %d steps", task.target, len(batches) * cfg.epochs)
    return model


def _main_loss(model, task_id, view, rows, neg_rng):
    tokens = view.sequences[rows]
    labels = view.labels[rows]
    if model.task(task_id).is_item:
        negs = transfer.sample_negatives(neg_rng, view.label_space, labels)
        return item_task_loss(model, task_id, tokens, labels, negs)
    return profile_task_loss(model, task_id, tokens, labels)


def train_task(model: ModelState, bundle: ScenarioBundle, task_i: int, cfg: TrainConfig,
               losses: list | None = None, plans: list | None = None,
               main_only: bool = False) -> ModelState:
    """Train task ``task_i`` >= 2 with the composite objective.

    ``main_only`` trains the task loss alone (used for from-scratch baselines).
    """
    cfg.validate()
    if task_i < 2:
        raise ValueError("train_task handles tasks >= 2; use train_first_task for task 1")
    task = bundle.task(task_i)
    if not main_only:
        missing = [k for k in range(1, task_i) if bundle.task(k).is_item and k not in model.task_means]
        if missing:
            raise ValueError(f"missing predecessor state: no task mean for tasks {missing}")
    losses = losses if losses is not None else []
    plans = plans if plans is not None else []
    view = materialize(bundle, task_i, task.train_ts)
    train_view, val_view, _ = split(view, cfg.seed)
    base_space = materialize(bundle, 1, task.train_ts).label_space
    vocab = bundle.store.items_at(task.train_ts)
    alpha, beta, gamma = (0.0, 0.0, 0.0) if main_only else cfg.weights
    prev_items = transfer.previous_item_tasks(model, task_i)
    if not task.is_item:
        gamma_active = False  # contrastive term targets item-task masks only
    else:
        gamma_active = gamma > 0 and bool(prev_items)
    aug = transfer.AugmentConfig(cfg.mask_ratio, cfg.substitute_ratio, model.mask_token)
    any_aux = alpha > 0 or beta > 0 or gamma_active

    frozen: FrozenModel = snapshot(model)
    opt = _optimizer(cfg)
    pseudo: dict[int, np.ndarray] = {}
    history: dict = {}
    for epoch in range(1, cfg.epochs + 1):
        batches = _batches(len(train_view.users), cfg.batch_size,
                           _rng(cfg, task_i, epoch, _SHUFFLE))
        neg_rng = _rng(cfg, task_i, epoch, _NEG)
        plan = None
        if any_aux:
            plan = transfer.build_plan(model, frozen, bundle, train_view, task_i, epoch, cfg.c,
                                       pseudo, _rng(cfg, task_i, epoch, _PLAN),
                                       cfg.random_sampling, with_bkt2=gamma_active,
                                       with_bkt1=beta > 0)
            plans.extend(plan.records())
            aux_rng = _rng(cfg, task_i, epoch, _AUX)
            pieces = len(batches)
            fkt_chunks = {k: _chunks(e.fkt_users, pieces, aux_rng) for k, e in plan.entries.items()}
            bkt2_chunks = {k: _chunks(e.bkt2_users, pieces, aux_rng)
                           for k, e in plan.entries.items() if e.bkt2_users}
            bkt1_chunks = _chunks(plan.bkt1_users, pieces, aux_rng)
            rows_of = train_view.row_of()
        bkt1_rng = _rng(cfg, task_i, epoch, _BKT1)
        bkt2_rng = _rng(cfg, task_i, epoch, _BKT2)
        for step, rows in enumerate(batches, 1):
            main, grads = _main_loss(model, task_i, train_view, rows, neg_rng)
            fkt_val = bkt1_val = bkt2_val = 0.0
            if alpha > 0:
                groups = []
                for k in sorted(fkt_chunks):
                    idx = np.array([rows_of[u] for u in fkt_chunks[k][step - 1]], dtype=np.int64)
                    groups.append((k, train_view.sequences[idx], pseudo[k][idx]))
                fkt_val, g = transfer.fkt_objective(model, groups)
                grads.merge(g, alpha)
            if beta > 0:
                idx = [rows_of[u] for u in bkt1_chunks[step - 1]]
                bkt1_val, g = transfer.bkt1_tokens_loss(model, train_view.sequences[idx],
                                                        base_space, bkt1_rng, cfg.chunk_stride)
                grads.merge(g, beta)
            if gamma_active:
                groups = [(k, train_view.sequences[[rows_of[u] for u in bkt2_chunks[k][step - 1]]])
                          for k in prev_items if k in bkt2_chunks]
                bkt2_val, g = transfer.bkt2_objective(model, groups, aug, vocab, bkt2_rng,
                                                      cfg.contrastive_batch)
                grads.merge(g, gamma)
            total = main + alpha * fkt_val + beta * bkt1_val + gamma * bkt2_val
            record = {"task": task_i, "epoch": epoch, "step": step, "main": main,
                      "fkt": fkt_val, "bkt1": bkt1_val, "bkt2": bkt2_val, "total": total}
            _check_finite(record)
            _check_grads(grads, record)
            opt.step(model.params, grads, {"item_emb": 0})
            losses.append(record)
        if cfg.early_stopping:
            history["last"] = (_val_metric(model, bundle, val_view),
                               {k: v.copy() for k, v in model.params.items()})
            if _apply_early_stopping(model, history, cfg):
                break
    if cfg.early_stopping and "best_params" in history:
        model.params.update(history["best_params"])
    if task.is_item:
        transfer.task_mean_embedding(model, task_i, view.label_space)
    if cfg.refresh_task_means and not main_only:
        for k in range(1, task_i):
            if k in model.task_means:
                ts = bundle.task(k).train_ts
                transfer.task_mean_embedding(model, k, materialize(bundle, k, ts).label_space)
    log.info("task %d (%s) trained", task_i, task.target)
    return model


def new_model(bundle: ScenarioBundle, arch: ArchConfig, seed: int) -> ModelState:
    if arch.n != bundle.n:
        raise ConfigError(f"model sequence length {arch.n} != scenario length {bundle.n}", "n")
    return init_model(arch, bundle.num_items, bundle.tasks, seed,
                      bundle.store.attribute_classes)


def _first_task_views(bundle: ScenarioBundle, cfg: TrainConfig):
    view = materialize(bundle, 1, bundle.task(1).train_ts)
    train_view, val_view, _ = split(view, cfg.seed)
    return train_view, val_view


def run_manifest(bundle: ScenarioBundle, arch: ArchConfig, cfg: TrainConfig) -> dict:
    return {
        "scenario_digest": bundle.digest(),
        "arch": asdict(arch),
        "train": asdict(cfg),
        "seed": cfg.seed,
        "task_order": [t.id for t in bundle.tasks],
        "tasks": [asdict(t) for t in bundle.tasks],
    }


def _dump_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def run_continual(bundle: ScenarioBundle, cfg: TrainConfig, arch: ArchConfig | None = None,
                  out_dir=None) -> RunArtifacts:
    """Train tasks 1..M in manifest order with one model; checkpoint after every task."""
    cfg.validate()
    arch = arch or ArchConfig(n=bundle.n)
    model = new_model(bundle, arch, cfg.seed)
    art = RunArtifacts(model, manifest=run_manifest(bundle, arch, cfg))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_view, val_view = _first_task_views(bundle, cfg)
    train_first_task(model, train_view, cfg, art.losses, val_view)
    if out is not None:
        art.checkpoints.append(save_checkpoint(model, out / "task_1.ckpt"))
    for i in range(2, bundle.num_tasks + 1):
        train_task(model, bundle, i, cfg, art.losses, art.plans)
        if out is not None:
            art.checkpoints.append(save_checkpoint(model, out / f"task_{i}.ckpt"))
    if out is not None:
        _dump_jsonl(out / "losses.jsonl", art.losses)
        _dump_jsonl(out / "plans.jsonl", art.plans)
        (out / "manifest.json").write_text(json.dumps(art.manifest, indent=2, sort_keys=True) + "\n")
    return art


def run_sinmo_baseline(bundle: ScenarioBundle, cfg: TrainConfig, arch: ArchConfig | None = None,
                       out_dir=None) -> dict[int, "object"]:
    """One freshly initialised model per task, trained on that task alone and tested at eval time."""
    from timecl.evaluation import evaluate_task

    cfg.validate()
    arch = arch or ArchConfig(n=bundle.n)
    results = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for i in range(1, bundle.num_tasks + 1):
        model = new_model(bundle, arch, cfg.seed)
        if i == 1:
            train_view, val_view = _first_task_views(bundle, cfg)
            train_first_task(model, train_view, cfg, None, val_view)
        else:
            train_task(model, bundle, i, cfg, main_only=True)
        results[i] = evaluate_task(model, bundle, i, cfg.seed)
        if out is not None:
            save_checkpoint(model, out / f"sinmo_{i}.ckpt")
    if out is not None:
        payload = {str(i): asdict(r) for i, r in results.items()}
        (out / "baseline.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return results
