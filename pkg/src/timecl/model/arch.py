"""Architecture config, parameter state, snapshots and checkpoints."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from timecl.errors import ConfigError, DataError
from timecl.scenario.core import TaskSpec

CKPT_VERSION = 1
CKPT_MAGIC = b"TIMECL-CKPT"


@dataclass(frozen=True)
class ArchConfig:
    f: int = 16
    n: int = 20
    K: int = 2
    kernel_width: int = 3
    dilations: tuple[int, ...] = (1, 2)
    gate_scale: float = 10.0
    # one gate per conv layer instead of one shared gate per residual block
    mask_per_layer: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("f", "K", "kernel_width", "n"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", name)
        if len(self.dilations) != self.K:
            raise ConfigError(f"need {self.K} dilation factors", "dilations")
        if any(d < 1 for d in self.dilations):
            raise ConfigError("must be >= 1", "dilations")
        if self.gate_scale <= 0:
            raise ConfigError("must be > 0", "gate_scale")

    @property
    def layers_per_mask(self) -> int:
        return 2 if self.mask_per_layer else 1

    @property
    def receptive_field(self) -> int:
        return 1 + sum(2 * (self.kernel_width - 1) * d for d in self.dilations)


def param_shapes(arch: ArchConfig, num_items: int, tasks: Sequence[TaskSpec],
                 profile_classes: Mapping[str, int]) -> dict[str, tuple[int, ...]]:
    """Ordered parameter layout. Row 0 of ``item_emb`` is the pad, the last row the mask token."""
    f, kw = arch.f, arch.kernel_width
    shapes: dict[str, tuple[int, ...]] = {"item_emb": (num_items + 2, f)}
    for k in range(arch.K):
        for layer in (1, 2):
            shapes[f"block{k}.ln{layer}.g"] = (f,)
            shapes[f"block{k}.ln{layer}.b"] = (f,)
            shapes[f"block{k}.conv{layer}.w"] = (kw, f, f)
            shapes[f"block{k}.conv{layer}.b"] = (f,)
    shapes["mask_emb"] = (len(tasks), arch.K, arch.layers_per_mask, f)
    for task in tasks:
        out = f if task.is_item else profile_classes[task.target]
        shapes[f"proj{task.id}.w"] = (f, out)
        shapes[f"proj{task.id}.b"] = (out,)
    return shapes


@dataclass
class ModelState:
    arch: ArchConfig
    num_items: int
    tasks: tuple[TaskSpec, ...]
    profile_classes: dict[str, int]
    params: dict[str, np.ndarray]
    task_means: dict[int, np.ndarray] = field(default_factory=dict)
    seed: int = 0

    @property
    def mask_token(self) -> int:
        return self.num_items + 1

    @property
    def vocab_size(self) -> int:
        return self.num_items + 2

    def task(self, task_id: int) -> TaskSpec:
        if not 1 <= task_id <= len(self.tasks):
            raise KeyError(f"unknown task {task_id}")
        return self.tasks[task_id - 1]

    def copy(self) -> "ModelState":
        return ModelState(self.arch, self.num_items, self.tasks, dict(self.profile_classes),
                          {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.task_means.items()}, self.seed)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        for k in sorted(self.task_means):
            h.update(str(k).encode())
            h.update(self.task_means[k].tobytes())
        return h.hexdigest()


class FrozenModel(ModelState):
    """Write-protected deep copy of a :class:`ModelState`."""

    def __setattr__(self, name, value):
        if getattr(self, "_sealed", False):
            raise AttributeError("FrozenModel is immutable")
        super().__setattr__(name, value)

    def seal(self) -> "FrozenModel":
        for arr in list(self.params.values()) + list(self.task_means.values()):
            arr.setflags(write=False)
        self.params = _ReadOnlyDict(self.params)
        self.task_means = _ReadOnlyDict(self.task_means)
        self._sealed = True
        return self


class _ReadOnlyDict(dict):
    def _blocked(self, *args, **kwargs):
        raise TypeError("read-only mapping")

    __setitem__ = __delitem__ = update = pop = popitem = clear = setdefault = _blocked


def init_model(arch: ArchConfig, num_items: int, tasks: Sequence[TaskSpec], seed: int,
               profile_classes: Mapping[str, int] | None = None) -> ModelState:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; zero masks, unit LN gains."""
    if num_items < 1:
        raise ConfigError("need at least one item", "num_items")
    profile_classes = dict(profile_classes or {})
    for task in tasks:
        if not task.is_item and task.target not in profile_classes:
            raise ConfigError(f"class count for attribute {task.target!r} missing",
                              "profile_classes")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(arch, num_items, tasks, profile_classes).items():
        if name == "mask_emb":
            params[name] = np.zeros(shape)
        elif ".ln" in name:
            params[name] = np.ones(shape) if name.endswith(".g") else np.zeros(shape)
        else:
            if name == "item_emb" or name.endswith(".b"):
                fan_in = arch.f
            elif ".conv" in name:
                fan_in = arch.kernel_width * arch.f
            else:
                fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    params["item_emb"][0] = 0.0
    return ModelState(arch, num_items, tuple(tasks), profile_classes, params, {}, seed)


def gated_mask(model: ModelState, task_id: int, block_k: int) -> np.ndarray:
    """Gate values in (0, 1) for one task and residual block (layer rows stacked if per-layer)."""
    if not 1 <= task_id <= len(model.tasks):
        raise KeyError(f"unknown task {task_id}")
    e = model.params["mask_emb"][task_id - 1, block_k]
    g = sigmoid(model.arch.gate_scale * e)
    return g[0] if g.shape[0] == 1 else g


def task_gates(model: ModelState, task_id: int) -> np.ndarray:
    """All gates of a task, shape ``(K, layers_per_mask, f)``."""
    if not 1 <= task_id <= len(model.tasks):
        raise KeyError(f"unknown task {task_id}")
    return sigmoid(model.arch.gate_scale * model.params["mask_emb"][task_id - 1])


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def snapshot(model: ModelState) -> FrozenModel:
    frozen = FrozenModel.__new__(FrozenModel)
    ModelState.__init__(frozen, model.arch, model.num_items, model.tasks,
                        copy.deepcopy(model.profile_classes),
                        {k: v.copy() for k, v in model.params.items()},
                        {k: v.copy() for k, v in model.task_means.items()}, model.seed)
    return frozen.seal()


def _header(model: ModelState) -> dict:
    return {
        "version": CKPT_VERSION,
        "arch": asdict(model.arch),
        "num_items": model.num_items,
        "seed": model.seed,
        "tasks": [asdict(t) for t in model.tasks],
        "profile_classes": dict(sorted(model.profile_classes.items())),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
        "task_means": sorted(model.task_means),
    }


def save_checkpoint(model: ModelState, path) -> Path:
    path = Path(path)
    header = json.dumps(_header(model), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + b"\n")
        fh.write(header + b"\n")
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for k in sorted(model.task_means):
            fh.write(np.ascontiguousarray(model.task_means[k], dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> ModelState:
    path = Path(path)
    data = path.read_bytes()
    try:
        magic, header_raw, body = data.split(b"\n", 2)
    except ValueError:
        raise DataError("truncated checkpoint", str(path)) from None
    if magic != CKPT_MAGIC:
        raise DataError("not a checkpoint file", str(path))
    header = json.loads(header_raw)
    if header.get("version") != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {header.get('version')}", str(path))
    arch_raw = dict(header["arch"])
    arch_raw["dilations"] = tuple(arch_raw["dilations"])
    arch = ArchConfig(**arch_raw)
    tasks = tuple(TaskSpec(**t) for t in header["tasks"])
    classes = dict(header["profile_classes"])
    expected = param_shapes(arch, header["num_items"], tasks, classes)
    listed = {p["name"]: tuple(p["shape"]) for p in header["params"]}
    if listed != expected or [p["name"] for p in header["params"]] != list(expected):
        raise DataError("parameter shapes do not match the declared architecture", str(path))
    params, offset = {}, 0
    view = memoryview(body)
    for name, shape in expected.items():
        size = int(np.prod(shape)) * 8
        if offset + size > len(body):
            raise DataError("truncated checkpoint body", str(path))
        params[name] = np.frombuffer(view[offset:offset + size], dtype="<f8").reshape(shape).copy()
        offset += size
    means = {}
    for k in header["task_means"]:
        size = arch.f * 8
        if offset + size > len(body):
            raise DataError("truncated checkpoint body", str(path))
        means[int(k)] = np.frombuffer(view[offset:offset + size], dtype="<f8").copy()
        offset += size
    if offset != len(body):
        raise DataError("trailing bytes after checkpoint body", str(path))
    return ModelState(arch, header["num_items"], tasks, classes, params, means, header["seed"])
