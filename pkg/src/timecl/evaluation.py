"""Inference at the evaluation timestamp, ranking/classification metrics and reports."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from timecl.model.arch import ModelState
from timecl.model.network import project, represent
from timecl.scenario.core import ScenarioBundle, TaskView
from timecl.scenario.views import materialize, split

MRR = "MRR@5"
ACC = "Accuracy"


@dataclass
class MetricResult:
    task: int
    kind: str
    value: float
    users: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value {self.value} outside [0, 1]")


@dataclass
class Predictions:
    task: int
    users: np.ndarray
    labels: np.ndarray
    candidates: np.ndarray | None = None  # item tasks: label space at eval time
    scores: np.ndarray | None = None      # item tasks: (users, candidates)
    classes: np.ndarray | None = None     # profile tasks: argmax class


@dataclass
class RunReport:
    results: dict[int, MetricResult]
    baseline: dict[int, float] = field(default_factory=dict)
    kt: dict[int, float] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "results": {str(k): asdict(v) for k, v in sorted(self.results.items())},
            "baseline": {str(k): v for k, v in sorted(self.baseline.items())},
            "kt": {str(k): v for k, v in sorted(self.kt.items())},
            "diagnostics": self.diagnostics,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls({int(k): MetricResult(**v) for k, v in data["results"].items()},
                   {int(k): v for k, v in data.get("baseline", {}).items()},
                   {int(k): v for k, v in data.get("kt", {}).items()},
                   data.get("diagnostics", {}), data.get("config", {}))

    def to_markdown(self) -> str:
        lines = ["| Task | Metric | Users | Continual | Single-task | KT (%) |",
                 "|---|---|---|---|---|---|"]
        for k in sorted(self.results):
            r = self.results[k]
            base = f"{self.baseline[k]:.4f}" if k in self.baseline else "-"
            kt = f"{self.kt[k]:.2f}" if k in self.kt else "-"
            lines.append(f"| T{k} | {r.kind} | {r.users} | {r.value:.4f} | {base} | {kt} |")
        return "\n".join(lines) + "\n"

    def write(self, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        js = directory / "report.json"
        md = directory / "report.md"
        js.write_text(self.to_json())
        md.write_text(self.to_markdown())
        return js, md


def ranks(scores: np.ndarray, true_index: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """1-based rank of each row's true candidate; equal scores rank smaller item ids first."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    true_index = np.atleast_1d(np.asarray(true_index))
    rows = np.arange(len(scores))
    true_score = scores[rows, true_index][:, None]
    higher = (scores > true_score).sum(axis=1)
    true_id = np.asarray(candidates)[true_index][:, None]
    ties = ((scores == true_score) & (np.asarray(candidates)[None, :] < true_id)).sum(axis=1)
    return 1 + higher + ties


def mrr_at_k(scores, true_label, k: int = 5, candidates=None) -> float:
    """Reciprocal rank of ``true_label`` truncated at ``k``.

    ``candidates`` gives the item id of each score; by default the ids are
    the score positions.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if candidates is None:
        candidates = np.arange(len(scores))
    candidates = np.asarray(candidates)
    where = np.flatnonzero(candidates == true_label)
    if not len(where):
        raise ValueError(f"label {true_label} is not among the candidates")
    r = int(ranks(scores[None, :], where[:1], candidates)[0])
    return 1.0 / r if r <= k else 0.0


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if len(preds) != len(labels):
        raise ValueError("predictions and labels differ in length")
    if not len(preds):
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == labels))


def knowledge_transfer(r_final: float, r_sinmo: float) -> float:
    """Signed relative improvement over the single-task baseline, in percent."""
    if r_sinmo == 0:
        raise ValueError("knowledge transfer undefined for a zero baseline")
    return (r_final - r_sinmo) / r_sinmo * 100.0


def predict_view(model: ModelState, view: TaskView) -> Predictions:
    task_id = view.task.id
    model.task(task_id)
    rep = represent(model, view.sequences, task_id)
    out = project(model, task_id, rep)
    if model.task(task_id).is_item:
        cands = np.asarray(view.label_space)
        scores = out @ model.params["item_emb"][cands].T
        return Predictions(task_id, view.users, view.labels, cands, scores)
    return Predictions(task_id, view.users, view.labels, classes=np.argmax(out, axis=1))


def _metric(pred: Predictions, k: int = 5) -> tuple[str, float]:
    if pred.scores is not None:
        if not len(pred.labels):
            return MRR, 0.0
        idx = np.searchsorted(pred.candidates, pred.labels)
        if np.any(idx >= len(pred.candidates)) or np.any(pred.candidates[np.minimum(idx, len(pred.candidates) - 1)] != pred.labels):
            raise ValueError("a test label is missing from the candidate set")
        r = ranks(pred.scores, idx, pred.candidates)
        return MRR, float(np.where(r <= k, 1.0 / r, 0.0).mean())
    return ACC, accuracy(pred.classes, pred.labels)


def score_view(model: ModelState, view: TaskView) -> float:
    return _metric(predict_view(model, view))[1]


def test_view(bundle: ScenarioBundle, task_i: int, seed: int) -> TaskView:
    view = materialize(bundle, task_i, bundle.eval_ts)
    return split(view, seed)[2]


def infer(model: ModelState, bundle: ScenarioBundle, task_i: int, seed: int = 0) -> Predictions:
    """Scores (item task) or argmax classes (profile task) for the test split at eval time."""
    model.task(task_i)
    return predict_view(model, test_view(bundle, task_i, seed))


def evaluate_task(model: ModelState, bundle: ScenarioBundle, task_i: int, seed: int = 0) -> MetricResult:
    pred = infer(model, bundle, task_i, seed)
    kind, value = _metric(pred)
    return MetricResult(task_i, kind, value, int(len(pred.users)))


def evaluate_all(model: ModelState, bundle: ScenarioBundle,
                 baseline_results: Mapping[int, object] | None = None, seed: int = 0,
                 config: dict | None = None, diagnostics: dict | None = None) -> RunReport:
    """Metric for every task on its test split at eval time, plus KT where a baseline exists."""
    results = {i: evaluate_task(model, bundle, i, seed) for i in range(1, bundle.num_tasks + 1)}
    baseline: dict[int, float] = {}
    kt: dict[int, float] = {}
    for i, b in (baseline_results or {}).items():
        value = b.value if isinstance(b, MetricResult) else float(b)
        baseline[int(i)] = value
        if value > 0 and int(i) in results:
            kt[int(i)] = knowledge_transfer(results[int(i)].value, value)
    return RunReport(results, baseline, kt, dict(diagnostics or {}), dict(config or {}))


def _cos_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    denom = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return np.where(denom > 0, np.sum(a * b, axis=1) / np.where(denom > 0, denom, 1.0), 0.0)


@dataclass
class PseudoLabelQuality:
    task_k: int
    task_i: int
    mode: str
    mean_cosine: float
    users: int


def pseudo_label_quality(model_ckpts: Mapping[int, ModelState], bundle: ScenarioBundle,
                         task_k: int, mode: str = "sampled", c: float = 1.0, seed: int = 0,
                         task_i: int | None = None) -> PseudoLabelQuality:
    """Cosine between projected pseudo-labels and actual task-k label embeddings.

    The frozen model is the checkpoint after task ``k``; users come from the
    next task's train split at its timestamp ``t_i``, restricted to those with a
    task-k label at ``t_i``.  ``sampled`` picks them with the forward sampler,
    ``random`` picks the same number uniformly.  The count follows the rate
    between the checkpoint after task ``i`` (mask i) and the frozen model.
    """
    from timecl import transfer

    if mode not in ("sampled", "random"):
        raise ValueError("mode must be 'sampled' or 'random'")
    task_i = task_k + 1 if task_i is None else task_i
    if not bundle.task(task_k).is_item:
        raise ValueError(f"task {task_k} is not an item task")
    frozen = model_ckpts[task_k]
    live = model_ckpts.get(task_i, frozen)
    t_i = bundle.task(task_i).train_ts
    cand_view = split(materialize(bundle, task_i, t_i), seed)[0]
    label_view = materialize(bundle, task_k, t_i)
    label_rows = label_view.row_of()
    keep = [r for r, u in enumerate(cand_view.users) if u in label_rows]
    cand = cand_view.subset(keep)
    S = transfer.sample_count(transfer.sampling_rate(live, frozen, task_i, task_k, c),
                              len(cand.users))
    reps = transfer.pseudo_labels(frozen, cand.sequences, task_k)
    if mode == "sampled":
        users = transfer.fkt_sample(frozen, cand, task_k, S, reps=reps)
    else:
        users = transfer.random_sample(np.random.default_rng([seed, task_k, 7]), cand.users, S)
    rows = cand.row_of()
    idx = np.array([rows[u] for u in users], dtype=np.int64)
    labels = label_view.labels[[label_rows[u] for u in users]]
    # compare in item space: item-task representations are scored through their projector
    cos = _cos_rows(project(frozen, task_k, reps[idx]), frozen.params["item_emb"][labels])
    value = float(np.clip(cos.mean(), -1.0, 1.0)) if len(cos) else 0.0
    return PseudoLabelQuality(task_k, task_i, mode, value, len(users))


def load_baseline(path) -> dict[int, MetricResult]:
    data = json.loads(Path(path).read_text())
    return {int(k): MetricResult(**v) for k, v in data.items()}
