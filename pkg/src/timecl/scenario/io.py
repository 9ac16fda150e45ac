"""Line-oriented log ingestion and bundle serialization."""
from __future__ import annotations

import csv
from pathlib import Path

from timecl.config import read_sections, write_sections
from timecl.errors import ConfigError, DataError
from timecl.scenario.core import PAD, InteractionStore, ScenarioBundle, TaskSpec

BUNDLE_VERSION = "timecl-bundle 1"
INTERACTIONS = "interactions.csv"
PROFILES = "profiles.csv"
MANIFEST = "manifest.cfg"
VERSION = "VERSION"


def _int_field(raw: str, path: Path, line: int, name: str) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise DataError(f"expected integer, got {raw!r}", str(path), line, name) from None


def _rows(path: Path, header: list[str]):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [h.strip() for h in first] != header:
            raise DataError(f"header must be {','.join(header)}", str(path), 1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", str(path),
                                line_no)
            yield line_no, [c.strip() for c in row]


def read_manifest(path: Path) -> dict:
    sections = read_sections(Path(path))
    if "scenario" not in sections:
        raise ConfigError("missing [scenario] section", "manifest")
    head = sections["scenario"]
    allowed = {"n", "source_channel", "eval_ts", "channels"}
    for key in head:
        if key not in allowed:
            raise ConfigError("unknown key", f"scenario.{key}")
    for key in ("n", "source_channel", "eval_ts"):
        if key not in head:
            raise ConfigError("missing key", f"scenario.{key}")
    try:
        n, eval_ts = int(head["n"]), int(head["eval_ts"])
    except ValueError as exc:
        raise ConfigError(str(exc), "scenario") from None
    channels = [c.strip() for c in head.get("channels", "").split(",") if c.strip()]
    classes, tasks = {}, []
    for name, body in sections.items():
        if name.startswith("attribute."):
            attr = name[len("attribute."):]
            if set(body) != {"classes"}:
                raise ConfigError("expected exactly 'classes'", name)
            classes[attr] = int(body["classes"])
        elif name.startswith("task."):
            if set(body) != {"kind", "target", "train_ts"}:
                raise ConfigError("expected kind, target, train_ts", name)
            try:
                tid = int(name[len("task."):])
                tasks.append(TaskSpec(tid, body["kind"], body["target"], int(body["train_ts"])))
            except ValueError as exc:
                raise ConfigError(str(exc), name) from None
        elif name != "scenario":
            raise ConfigError("unknown section", name)
    tasks.sort(key=lambda t: t.id)
    return {"n": n, "source_channel": head["source_channel"], "eval_ts": eval_ts,
            "channels": channels, "classes": classes, "tasks": tuple(tasks)}


def ingest_logs(interactions_path, profiles_path, manifest_path) -> ScenarioBundle:
    """Parse interaction/profile logs and a manifest into a bundle.

    Malformed lines raise :class:`DataError` naming file, line and field.
    """
    interactions_path, manifest_path = Path(interactions_path), Path(manifest_path)
    man = read_manifest(manifest_path)
    channels = list(man["channels"])
    fixed = bool(channels)
    users, items, codes, stamps = [], [], [], []
    for line, (u, i, c, t) in _rows(interactions_path, ["user", "item", "channel", "ts"]):
        user = _int_field(u, interactions_path, line, "user")
        item = _int_field(i, interactions_path, line, "item")
        ts = _int_field(t, interactions_path, line, "ts")
        if item == PAD:
            raise DataError("reserved pad token", str(interactions_path), line, "item")
        if item < 0:
            raise DataError("item ids must be positive", str(interactions_path), line, "item")
        if ts < 0:
            raise DataError("negative timestamp", str(interactions_path), line, "ts")
        if not c:
            raise DataError("empty channel", str(interactions_path), line, "channel")
        if c not in channels:
            if fixed:
                raise DataError(f"channel {c!r} not declared in manifest",
                                str(interactions_path), line, "channel")
            channels.append(c)
        users.append(user)
        items.append(item)
        codes.append(channels.index(c))
        stamps.append(ts)
    profiles: dict[str, dict[int, int]] = {}
    if profiles_path is not None and Path(profiles_path).exists():
        profiles_path = Path(profiles_path)
        for line, (u, a, k) in _rows(profiles_path, ["user", "attribute", "class_index"]):
            user = _int_field(u, profiles_path, line, "user")
            cls = _int_field(k, profiles_path, line, "class_index")
            if a not in man["classes"]:
                raise ConfigError(f"attribute {a!r} not declared in manifest", "attribute")
            if not 0 <= cls < man["classes"][a]:
                raise DataError(f"class index {cls} out of range", str(profiles_path), line,
                                "class_index")
            profiles.setdefault(a, {})[user] = cls
    if man["source_channel"] not in channels:
        raise ConfigError(f"unknown channel {man['source_channel']!r}", "scenario.source_channel")
    store = InteractionStore(users, items, codes, stamps, channels, profiles, man["classes"])
    return ScenarioBundle(store, man["tasks"], man["n"], man["source_channel"], man["eval_ts"])


def manifest_text(bundle: ScenarioBundle) -> str:
    sections: dict[str, dict] = {"scenario": {
        "n": bundle.n,
        "source_channel": bundle.source_channel,
        "eval_ts": bundle.eval_ts,
        "channels": list(bundle.store.channel_names),
    }}
    for attr, count in sorted(bundle.store.attribute_classes.items()):
        sections[f"attribute.{attr}"] = {"classes": count}
    for task in bundle.tasks:
        sections[f"task.{task.id}"] = {"kind": task.kind, "target": task.target,
                                       "train_ts": task.train_ts}
    return write_sections(sections)


def save_bundle(bundle: ScenarioBundle, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    store = bundle.store
    lines = ["user,item,channel,ts"]
    for u, i, c, t in zip(store.users.tolist(), store.items.tolist(), store.channels.tolist(),
                          store.ts.tolist()):
        lines.append(f"{u},{i},{store.channel_names[c]},{t}")
    (out / INTERACTIONS).write_text("\n".join(lines) + "\n", encoding="utf-8")
    plines = ["user,attribute,class_index"]
    for attr in sorted(store.profiles):
        for user, cls in sorted(store.profiles[attr].items()):
            plines.append(f"{user},{attr},{cls}")
    (out / PROFILES).write_text("\n".join(plines) + "\n", encoding="utf-8")
    (out / MANIFEST).write_text(manifest_text(bundle), encoding="utf-8")
    (out / VERSION).write_text(BUNDLE_VERSION + "\n", encoding="utf-8")
    return out


def load_bundle(directory) -> ScenarioBundle:
    d = Path(directory)
    version_file = d / VERSION
    if not version_file.exists():
        raise DataError("not a scenario bundle (missing VERSION)", str(d))
    stamp = version_file.read_text(encoding="utf-8").strip()
    if stamp != BUNDLE_VERSION:
        raise DataError(f"unsupported bundle version {stamp!r}", str(version_file))
    return ingest_logs(d / INTERACTIONS, d / PROFILES, d / MANIFEST)
