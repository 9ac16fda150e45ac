"""Synthetic time-aware scenarios with emerging items and Zipf popularity.

The world is a set of item categories.  Every item has a fixed Zipf
popularity weight (new items take random ranks) and a short list of
successor items.  When an item is born it is wired into the successor
lists of a few same-category items, so transition patterns learned early
go stale as time passes.  Each user clicks at their own Poisson rate,
either following a successor link, staying in the current category, or
jumping to a category drawn from a (possibly drifting) preference vector.
Non-source channels (cart, buy, ...) fire on a fraction of clicks.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from timecl.errors import ConfigError
from timecl.scenario.core import (ITEM_TASK, PROFILE_TASK, InteractionStore, ScenarioBundle,
                                  TaskSpec, validate_tasks)


@dataclass(frozen=True)
class GenConfig:
    users: int = 2000
    initial_items: int = 500
    new_items: tuple[int, ...] = (100, 100, 100)
    timestamps: tuple[int, ...] = (1000, 2000, 3000, 4000)
    tasks: tuple[str, ...] = ("item:click", "item:cart", "item:buy", "profile:age")
    source_channel: str = "click"
    n: int = 20
    eval_ts: int | None = None
    zipf_s: float = 1.1
    activity: float = 12.0
    activity_spread: float = 0.5
    drift: float = 0.0
    noisy_tasks: tuple[int, ...] = ()
    categories: int = 20
    successors: int = 3
    rewire: int = 3
    follow_prob: float = 0.5
    stay_prob: float = 0.3
    event_rate: float = 0.12
    copy_prob: float = 0.3
    successor_prob: float = 0.4
    profile_signal: float = 0.75
    novelty: float = 0.3
    novelty_window: int = 1000
    attribute_classes: tuple[str, ...] = ("age:6", "gender:2")

    def parsed_tasks(self) -> list[tuple[str, str]]:
        out = []
        for pos, raw in enumerate(self.tasks, start=1):
            kind, sep, target = raw.partition(":")
            if not sep or kind not in (ITEM_TASK, PROFILE_TASK) or not target:
                raise ConfigError(f"expected 'item:<channel>' or 'profile:<attr>', got {raw!r}",
                                  f"tasks[{pos}]")
            out.append((kind, target))
        return out

    def classes(self) -> dict[str, int]:
        out = {}
        for raw in self.attribute_classes:
            name, sep, count = raw.partition(":")
            try:
                out[name] = int(count)
            except ValueError:
                raise ConfigError(f"expected 'name:count', got {raw!r}",
                                  "attribute_classes") from None
            if not sep or out[name] < 2:
                raise ConfigError(f"attribute {name!r} needs >= 2 classes", "attribute_classes")
        return out

    def validate(self) -> None:
        if self.users < 1:
            raise ConfigError("must be >= 1", "users")
        if self.initial_items < 1:
            raise ConfigError("must be >= 1", "initial_items")
        stamps = self.timestamps
        if any(b <= a for a, b in zip(stamps, stamps[1:])) or (stamps and stamps[0] < 1):
            raise ConfigError("non-increasing timestamps", "timestamps")
        if len(self.new_items) != len(stamps) - 1:
            raise ConfigError(f"expected {len(stamps) - 1} entries (one per task interval)",
                              "new_items")
        if any(k < 0 for k in self.new_items):
            raise ConfigError("counts must be >= 0", "new_items")
        tasks = self.parsed_tasks()
        if len(tasks) != len(stamps):
            raise ConfigError(f"{len(tasks)} tasks but {len(stamps)} timestamps", "tasks")
        classes = self.classes()
        for pos, (kind, target) in enumerate(tasks, start=1):
            if kind == PROFILE_TASK and target not in classes:
                raise ConfigError(f"profile task over undeclared attribute {target!r}",
                                  f"tasks[{pos}]")
        for pos in self.noisy_tasks:
            if not 2 <= pos <= len(tasks):
                raise ConfigError(f"noisy task {pos} must be in 2..{len(tasks)}", "noisy_tasks")
        if self.eval_ts is not None and self.eval_ts < stamps[-1]:
            raise ConfigError("eval_ts precedes the last timestamp", "eval_ts")
        if self.n < 1:
            raise ConfigError("must be >= 1", "n")
        if self.categories < 1:
            raise ConfigError("must be >= 1", "categories")
        for name in ("follow_prob", "stay_prob", "event_rate", "copy_prob",
                     "successor_prob", "profile_signal", "drift", "novelty"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must lie in [0, 1]", name)
        if self.novelty_window < 1:
            raise ConfigError("must be >= 1", "novelty_window")
        if self.follow_prob + self.stay_prob > 1 or self.copy_prob + self.successor_prob > 1:
            raise ConfigError("mixture probabilities exceed 1", "follow_prob")


class _Pool:
    """Born items of one category with cumulative popularity weights."""

    def __init__(self):
        self.items: list[int] = []
        self.cum: list[float] = []

    def add(self, item: int, weight: float) -> None:
        self.items.append(item)
        self.cum.append((self.cum[-1] if self.cum else 0.0) + weight)

    def draw(self, u: float) -> int:
        return self.items[min(bisect.bisect_right(self.cum, u * self.cum[-1]),
                              len(self.items) - 1)]


@dataclass
class _Emitter:
    users: list = field(default_factory=list)
    items: list = field(default_factory=list)
    channels: list = field(default_factory=list)
    ts: list = field(default_factory=list)

    def __call__(self, user, item, channel, ts):
        self.users.append(user)
        self.items.append(item)
        self.channels.append(channel)
        self.ts.append(ts)


def generate_synthetic(cfg: GenConfig, seed: int) -> ScenarioBundle:
    """Generate a scenario bundle; a pure function of ``(cfg, seed)``."""
    cfg.validate()
    tasks_raw = cfg.parsed_tasks()
    classes = cfg.classes()
    stamps = list(cfg.timestamps)
    eval_ts = cfg.eval_ts if cfg.eval_ts is not None else stamps[-1]
    rng = np.random.default_rng(seed)

    channel_names = [cfg.source_channel]
    for kind, target in tasks_raw:
        if kind == ITEM_TASK and target not in channel_names:
            channel_names.append(target)
    noisy_channels = {tasks_raw[p - 1][1] for p in cfg.noisy_tasks
                      if tasks_raw[p - 1][0] == ITEM_TASK}
    noisy_attrs = {tasks_raw[p - 1][1] for p in cfg.noisy_tasks
                   if tasks_raw[p - 1][0] == PROFILE_TASK}
    if tasks_raw[0] != (ITEM_TASK, cfg.source_channel):
        raise ConfigError("task 1 must be an item task over the source channel", "tasks[1]")

    # item births: initial items early in the first interval, then per-interval batches
    births = [np.sort(rng.integers(0, max(1, stamps[0] // 4) + 1, size=cfg.initial_items))]
    for j, count in enumerate(cfg.new_items):
        births.append(np.sort(rng.integers(stamps[j] + 1, stamps[j + 1] + 1, size=count)))
    birth_ts = np.concatenate(births)
    num_items = len(birth_ts)
    item_cat = rng.integers(0, cfg.categories, size=num_items)
    ranks = rng.permutation(num_items) + 1
    weight = ranks.astype(np.float64) ** (-cfg.zipf_s)

    # users: activity, preferences, click times
    activity = rng.lognormal(0.0, cfg.activity_spread, size=cfg.users)
    activity *= cfg.activity / 1000.0 / activity.mean()
    pref0 = rng.dirichlet(np.full(cfg.categories, 0.3), size=cfg.users)
    pref1 = rng.dirichlet(np.full(cfg.categories, 0.3), size=cfg.users)
    # U-shaped propensity to pick recently born items: a minority of early adopters
    if 0.0 < cfg.novelty < 1.0:
        novelty = rng.beta(0.5, 0.5 * (1.0 - cfg.novelty) / cfg.novelty, size=cfg.users)
    else:
        novelty = np.full(cfg.users, cfg.novelty)
    click_counts = rng.poisson(activity * eval_ts)
    click_user = np.repeat(np.arange(cfg.users), click_counts)
    click_ts = rng.integers(0, eval_ts + 1, size=len(click_user))
    birth_user = rng.choice(cfg.users, size=num_items, p=activity / activity.sum())

    # chronological event list: births sort before clicks at the same tick
    kind = np.concatenate([np.zeros(num_items, np.int64), np.ones(len(click_user), np.int64)])
    when = np.concatenate([birth_ts, click_ts])
    payload = np.concatenate([np.arange(num_items), click_user])
    order = np.lexsort((kind, when))
    draws = rng.random((len(order), 6))

    pools = [_Pool() for _ in range(cfg.categories)]
    cat_births: list[list[int]] = [[] for _ in range(cfg.categories)]
    everyone = _Pool()
    succ: list[list[int]] = [[] for _ in range(num_items)]
    last = np.full(cfg.users, -1, dtype=np.int64)
    emit = _Emitter()
    src = 0
    other_channels = [(code, name) for code, name in enumerate(channel_names) if code != src]

    def side_events(user: int, item: int, ts: int, u: np.ndarray) -> None:
        if ts + 1 > eval_ts:
            return
        for code, name in other_channels:
            if rng.random() >= cfg.event_rate:
                continue
            if name in noisy_channels:
                target = everyone.items[int(rng.integers(len(everyone.items)))]
            else:
                r = rng.random()
                if r < cfg.copy_prob:
                    target = item
                elif r < cfg.copy_prob + cfg.successor_prob and succ[item]:
                    target = succ[item][int(rng.integers(len(succ[item])))]
                else:
                    target = pools[item_cat[item]].draw(rng.random())
            emit(user, target + 1, code, ts + 1)

    def click(user: int, item: int, ts: int, u: np.ndarray) -> None:
        emit(user, item + 1, src, ts)
        last[user] = item
        side_events(user, item, ts, u)

    for pos, ev in enumerate(order.tolist()):
        ts = int(when[ev])
        u = draws[pos]
        if kind[ev] == 0:
            item = int(payload[ev])
            cat = item_cat[item]
            pool = pools[cat]
            if pool.items:
                members = np.array(pool.items)
                w = weight[members] / weight[members].sum()
                k = min(cfg.successors, len(members))
                succ[item] = rng.choice(members, size=k, replace=False, p=w).tolist()
                for host in rng.choice(members, size=min(cfg.rewire, len(members)),
                                       replace=False, p=w).tolist():
                    if len(succ[host]) < cfg.successors:
                        succ[host].append(item)
                    else:
                        succ[host][int(rng.integers(cfg.successors))] = item
            pool.add(item, float(weight[item]))
            cat_births[cat].append(ts)
            everyone.add(item, float(weight[item]))
            click(int(birth_user[item]), item, ts, u)
            continue
        user = int(payload[ev])
        if not everyone.items:
            continue
        prev = int(last[user])
        if prev >= 0 and u[0] < cfg.follow_prob and succ[prev]:
            item = succ[prev][min(int(u[1] * len(succ[prev])), len(succ[prev]) - 1)]
        else:
            if prev >= 0 and u[0] < cfg.follow_prob + cfg.stay_prob:
                cat = item_cat[prev]
            else:
                mix = min(1.0, cfg.drift * ts / max(eval_ts, 1))
                p = (1.0 - mix) * pref0[user] + mix * pref1[user]
                cat = min(int(np.searchsorted(np.cumsum(p), u[2] * p.sum())), cfg.categories - 1)
            pool = pools[cat] if pools[cat].items else everyone
            fresh = bisect.bisect_right(cat_births[cat], ts - cfg.novelty_window)
            if u[4] < novelty[user] and fresh < len(cat_births[cat]):
                recent = pools[cat].items[fresh:]
                item = recent[min(int(u[5] * len(recent)), len(recent) - 1)]
            else:
                item = pool.draw(u[3])
        click(user, item, ts, u)

    profiles = {}
    dominant = pref0.argmax(axis=1)
    for attr_pos, (attr, count) in enumerate(sorted(classes.items())):
        if not any(k == PROFILE_TASK and t == attr for k, t in tasks_raw):
            continue
        signal = (dominant * 7 + attr_pos * 3) % count
        noise = rng.integers(0, count, size=cfg.users)
        keep = rng.random(cfg.users) < cfg.profile_signal
        if attr in noisy_attrs:
            keep[:] = False
        profiles[attr] = {u: int(c) for u, c in enumerate(np.where(keep, signal, noise).tolist())}

    store = InteractionStore(emit.users, emit.items, emit.channels, emit.ts, channel_names,
                             profiles, {a: classes[a] for a in profiles})
    specs = tuple(TaskSpec(i, k, t, stamps[i - 1]) for i, (k, t) in enumerate(tasks_raw, start=1))
    validate_tasks(specs, cfg.source_channel, eval_ts)
    counts_at = np.cumsum([cfg.initial_items, *cfg.new_items]).tolist()
    ledger = {
        "given": cfg.initial_items,
        "new_items": list(cfg.new_items),
        "intervals": [(stamps[j], stamps[j + 1]) for j in range(len(stamps) - 1)],
        "item_counts_at": dict(zip(stamps, counts_at)),
    }
    bundle = ScenarioBundle(store, specs, cfg.n, cfg.source_channel, eval_ts, ledger)
    _check_labeled(bundle)
    return bundle


def _check_labeled(bundle: ScenarioBundle) -> None:
    from timecl.scenario.views import materialize

    for task in bundle.tasks:
        if not len(materialize(bundle, task.id, task.train_ts)):
            raise ConfigError(f"task {task.id} has no labeled users at its timestamp; "
                              "raise users/activity/event_rate", "tasks")
