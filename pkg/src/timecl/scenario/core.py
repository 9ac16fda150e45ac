"""Scenario data types: interaction store, task specs, bundles and views."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from timecl.errors import ConfigError, DataError

PAD = 0
ITEM_TASK = "item"
PROFILE_TASK = "profile"
NEVER = np.iinfo(np.int64).max


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    channel: str
    ts: int

    def __post_init__(self):
        if self.item == PAD:
            raise DataError("reserved pad token", field="item")
        if self.ts < 0:
            raise DataError("negative timestamp", field="ts")


@dataclass(frozen=True)
class ProfileRecord:
    user: int
    attributes: Mapping[str, int]


@dataclass(frozen=True)
class TaskSpec:
    id: int
    kind: str
    target: str
    train_ts: int

    def __post_init__(self):
        if self.kind not in (ITEM_TASK, PROFILE_TASK):
            raise ConfigError(f"unknown task kind {self.kind!r}", f"task.{self.id}.kind")

    @property
    def is_item(self) -> bool:
        return self.kind == ITEM_TASK


class InteractionStore:
    """Immutable, user-sorted interaction log plus profile attributes.

    Records are kept ordered by ``(user, ts, arrival order)``.  Per-user and
    per-(user, channel) slices are built once and shared by all views.
    """

    def __init__(self, users, items, channels, ts, channel_names: Sequence[str],
                 profiles: Mapping[str, Mapping[int, int]] | None = None,
                 attribute_classes: Mapping[str, int] | None = None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        channels = np.asarray(channels, dtype=np.int64)
        ts = np.asarray(ts, dtype=np.int64)
        if not (len(users) == len(items) == len(channels) == len(ts)):
            raise DataError("interaction columns differ in length")
        if len(items) and items.min() <= PAD:
            raise DataError("reserved pad token", field="item")
        if len(ts) and ts.min() < 0:
            raise DataError("negative timestamp", field="ts")
        order = np.lexsort((np.arange(len(users)), ts, users))
        self.users = users[order]
        self.items = items[order]
        self.channels = channels[order]
        self.ts = ts[order]
        for a in (self.users, self.items, self.channels, self.ts):
            a.setflags(write=False)
        self.channel_names = tuple(channel_names)
        self.attribute_classes = dict(attribute_classes or {})
        self.profiles = {a: dict(v) for a, v in (profiles or {}).items()}
        for attr, table in self.profiles.items():
            if attr not in self.attribute_classes:
                raise ConfigError("profile attribute without declared class count", attr)
            limit = self.attribute_classes[attr]
            for user, cls in table.items():
                if not 0 <= cls < limit:
                    raise DataError(f"class index {cls} out of range [0, {limit})",
                                    field=attr)
        self.num_items = int(self.items.max()) if len(self.items) else 0
        self._slices: dict[int, tuple[int, int]] = {}
        if len(self.users):
            bounds = np.flatnonzero(np.diff(self.users)) + 1
            starts = np.concatenate([[0], bounds])
            ends = np.concatenate([bounds, [len(self.users)]])
            for s, e in zip(starts.tolist(), ends.tolist()):
                self._slices[int(self.users[s])] = (s, e)
        self._channel_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        # first appearance timestamps, indexed by item id
        self.first_seen = np.full(self.num_items + 1, NEVER, dtype=np.int64)
        np.minimum.at(self.first_seen, self.items, self.ts)
        self.first_seen_by_channel = {}
        for code, name in enumerate(self.channel_names):
            arr = np.full(self.num_items + 1, NEVER, dtype=np.int64)
            sel = self.channels == code
            np.minimum.at(arr, self.items[sel], self.ts[sel])
            self.first_seen_by_channel[name] = arr

    def __len__(self) -> int:
        return len(self.users)

    @property
    def user_ids(self) -> list[int]:
        return sorted(self._slices)

    def channel_code(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown channel {name!r}", "channel") from None

    def stream(self, user: int, channel: str) -> tuple[np.ndarray, np.ndarray]:
        """(timestamps, items) of one user's interactions on one channel, time-ordered."""
        code = self.channel_code(channel)
        key = (user, code)
        hit = self._channel_cache.get(key)
        if hit is None:
            s, e = self._slices.get(user, (0, 0))
            sel = self.channels[s:e] == code
            hit = (self.ts[s:e][sel], self.items[s:e][sel])
            self._channel_cache[key] = hit
        return hit

    def items_at(self, at_ts: int, channel: str | None = None) -> np.ndarray:
        """Sorted ids of items with an interaction at or before ``at_ts``."""
        first = self.first_seen if channel is None else self.first_seen_by_channel[channel]
        return np.flatnonzero(first <= at_ts).astype(np.int64)

    def records(self) -> Iterable[Interaction]:
        for u, i, c, t in zip(self.users.tolist(), self.items.tolist(),
                              self.channels.tolist(), self.ts.tolist()):
            yield Interaction(u, i, self.channel_names[c], t)


@dataclass(frozen=True)
class ScenarioBundle:
    store: InteractionStore
    tasks: tuple[TaskSpec, ...]
    n: int
    source_channel: str
    eval_ts: int
    # emergence ledger recorded by the synthetic generator (None for ingested logs)
    ledger: Mapping[str, object] | None = field(default=None, compare=False)

    def __post_init__(self):
        validate_tasks(self.tasks, self.source_channel, self.eval_ts)
        if self.n < 1:
            raise ConfigError("sequence length must be >= 1", "n")
        if self.source_channel not in self.store.channel_names:
            raise ConfigError(f"unknown channel {self.source_channel!r}", "source_channel")
        for task in self.tasks:
            if task.is_item and task.target not in self.store.channel_names:
                raise ConfigError(f"unknown channel {task.target!r}", f"task.{task.id}.target")
            if not task.is_item and task.target not in self.store.attribute_classes:
                raise ConfigError(f"unknown attribute {task.target!r}",
                                  f"task.{task.id}.target")

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def num_items(self) -> int:
        return self.store.num_items

    def task(self, task_id: int) -> TaskSpec:
        if not 1 <= task_id <= len(self.tasks):
            raise ConfigError(f"task id {task_id} out of range 1..{len(self.tasks)}", "task")
        return self.tasks[task_id - 1]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.store.users, self.store.items, self.store.channels, self.store.ts):
            h.update(np.ascontiguousarray(a).astype("<i8").tobytes())
        h.update(repr((self.store.channel_names, sorted(self.store.attribute_classes.items()),
                       sorted((k, sorted(v.items())) for k, v in self.store.profiles.items()),
                       self.tasks, self.n, self.source_channel, self.eval_ts)).encode())
        return h.hexdigest()


def validate_tasks(tasks: Sequence[TaskSpec], source_channel: str, eval_ts: int) -> None:
    if not tasks:
        raise ConfigError("at least one task is required", "tasks")
    for pos, task in enumerate(tasks, start=1):
        if task.id != pos:
            raise ConfigError(f"task ids must be 1..M in order, got {task.id} at {pos}",
                              "tasks")
    first = tasks[0]
    if not (first.is_item and first.target == source_channel):
        raise ConfigError("task 1 must be an item task over the source channel", "task.1")
    stamps = [t.train_ts for t in tasks]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise ConfigError("non-increasing timestamps", "train_ts")
    if stamps[0] < 0:
        raise ConfigError("negative timestamp", "train_ts")
    if eval_ts < stamps[-1]:
        raise ConfigError("eval_ts precedes the last task timestamp", "eval_ts")


@dataclass(frozen=True)
class TaskView:
    """One task materialized at one timestamp.

    ``sequences`` is a ``(users, n)`` array of left-padded item ids; row ``r``
    belongs to ``users[r]`` and is labeled ``labels[r]``.
    """

    task: TaskSpec
    at_ts: int
    users: np.ndarray
    sequences: np.ndarray
    labels: np.ndarray
    label_space: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    def subset(self, rows) -> "TaskView":
        rows = np.asarray(rows, dtype=np.int64)
        return TaskView(self.task, self.at_ts, self.users[rows], self.sequences[rows],
                        self.labels[rows], self.label_space)

    def row_of(self) -> dict[int, int]:
        return {int(u): r for r, u in enumerate(self.users.tolist())}
