"""Materialization of task views, splits and item-emergence statistics."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from timecl.errors import ConfigError
from timecl.scenario.core import PAD, ScenarioBundle, TaskView

SPLIT_FRACTIONS = (0.80, 0.05, 0.15)


def left_pad(items: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n, dtype=np.int64)
    tail = items[-n:] if len(items) else items
    if len(tail):
        out[n - len(tail):] = tail
    return out


def history(bundle: ScenarioBundle, user: int, at_ts: int, *, strict: bool = False) -> np.ndarray:
    """Source-channel items of ``user`` at or before ``at_ts`` (before it if ``strict``)."""
    ts, items = bundle.store.stream(user, bundle.source_channel)
    cut = np.searchsorted(ts, at_ts, side="left" if strict else "right")
    return items[:cut]


def materialize(bundle: ScenarioBundle, task_id: int, at_ts: int) -> TaskView:
    """Build the (user, sequence, label) table of a task as seen at ``at_ts``.

    Item tasks label each user with their latest target-channel interaction at
    or before ``at_ts``; the input is the source history strictly before that
    interaction.  Profile tasks use the whole source history up to ``at_ts``.
    Users without a label or without any prior history are left out.
    """
    task = bundle.task(task_id)
    if at_ts < bundle.tasks[0].train_ts:
        raise ConfigError(f"at_ts {at_ts} precedes the first task timestamp", "at_ts")
    store, n = bundle.store, bundle.n
    users, seqs, labels = [], [], []
    if task.is_item:
        for user in store.user_ids:
            tts, titems = store.stream(user, task.target)
            idx = int(np.searchsorted(tts, at_ts, side="right")) - 1
            if idx < 0:
                continue
            hist = history(bundle, user, int(tts[idx]), strict=True)
            if not len(hist):
                continue
            users.append(user)
            seqs.append(left_pad(hist, n))
            labels.append(int(titems[idx]))
        label_space = store.items_at(at_ts, task.target)
    else:
        table = store.profiles.get(task.target, {})
        for user in store.user_ids:
            if user not in table:
                continue
            hist = history(bundle, user, at_ts)
            if not len(hist):
                continue
            users.append(user)
            seqs.append(left_pad(hist, n))
            labels.append(int(table[user]))
        label_space = np.arange(store.attribute_classes[task.target], dtype=np.int64)
    seq_arr = np.array(seqs, dtype=np.int64).reshape(len(seqs), n)
    view = TaskView(task, int(at_ts), np.array(users, dtype=np.int64), seq_arr,
                    np.array(labels, dtype=np.int64), label_space)
    for a in (view.users, view.sequences, view.labels, view.label_space):
        a.setflags(write=False)
    return view


def _split_key(seed: int, user: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{user}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def split_sizes(total: int) -> tuple[int, int, int]:
    if total < 3:
        raise ValueError(f"cannot split {total} users into train/val/test")
    val = max(1, int(np.floor(SPLIT_FRACTIONS[1] * total + 1e-9)))
    test = max(1, int(np.floor(SPLIT_FRACTIONS[2] * total + 1e-9)))
    return total - val - test, val, test


def split(view: TaskView, seed: int) -> tuple[TaskView, TaskView, TaskView]:
    """User-disjoint 80/5/15 split.

    Users are ordered by a seeded hash of their id, so a user lands on the same
    side of the split in every view of the same seed (up to boundary effects).
    """
    n_train, n_val, n_test = split_sizes(len(view))
    keys = np.array([_split_key(seed, u) for u in view.users.tolist()], dtype=np.uint64)
    order = np.lexsort((view.users, keys))
    test = np.sort(order[:n_test])
    val = np.sort(order[n_test:n_test + n_val])
    train = np.sort(order[n_test + n_val:])
    return view.subset(train), view.subset(val), view.subset(test)


@dataclass(frozen=True)
class StatsTable:
    channels: tuple[str, ...]
    intervals: tuple[tuple[int, int], ...]
    given: dict[str, int]
    counts: dict[str, tuple[int, ...]]

    def as_dict(self) -> dict:
        return {
            "intervals": [list(iv) for iv in self.intervals],
            "given": dict(self.given),
            "new": {c: list(v) for c, v in self.counts.items()},
        }

    def to_text(self) -> str:
        head = ["channel", f"given@{self.intervals[0][0]}" if self.intervals else "given"]
        head += [f"{a}~{b}" for a, b in self.intervals]
        rows = [head]
        for c in self.channels:
            rows.append([c, str(self.given[c])] + [str(x) for x in self.counts[c]])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows)


def new_item_stats(bundle: ScenarioBundle, intervals: Sequence[tuple[int, int]]) -> StatsTable:
    """Per channel, items whose first interaction there falls in each ``(start, end]``."""
    ivs = tuple((int(a), int(b)) for a, b in intervals)
    for (a, b), nxt in zip(ivs, ivs[1:] + ((None, None),)):
        if b < a or (nxt[0] is not None and nxt[0] < b):
            raise ValueError("intervals must be ordered and non-overlapping")
    store = bundle.store
    given, counts = {}, {}
    for channel in store.channel_names:
        first = store.first_seen_by_channel[channel][1:]
        start = ivs[0][0] if ivs else bundle.eval_ts
        given[channel] = int(np.count_nonzero(first <= start))
        counts[channel] = tuple(int(np.count_nonzero((first > a) & (first <= b))) for a, b in ivs)
    return StatsTable(store.channel_names, ivs, given, counts)


def task_intervals(bundle: ScenarioBundle) -> list[tuple[int, int]]:
    stamps = [t.train_ts for t in bundle.tasks]
    return list(zip(stamps, stamps[1:]))


def new_item_counts(bundle: ScenarioBundle, task_id: int, users: Sequence[int]) -> np.ndarray:
    """Distinct items born in ``(t_{i-1}, t_i]`` inside each user's last-n history at ``t_i``."""
    if task_id < 2:
        raise ValueError("new-item counts need a predecessor task (task_id >= 2)")
    task = bundle.task(task_id)
    lo, hi = bundle.task(task_id - 1).train_ts, task.train_ts
    born = bundle.store.first_seen
    out = np.zeros(len(users), dtype=np.int64)
    for r, user in enumerate(users):
        seq = history(bundle, int(user), hi)[-bundle.n:]
        uniq = np.unique(seq[seq != PAD])
        b = born[uniq]
        out[r] = int(np.count_nonzero((b > lo) & (b <= hi)))
    return out


def new_items_per_user(bundle: ScenarioBundle, task_id: int, user: int) -> int:
    return int(new_item_counts(bundle, task_id, [user])[0])
