"""Command-line entry point: ``timecl <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from timecl import config as cfgmod
from timecl.errors import ConfigError, DataError, NumericalError, TimeclError
from timecl.model.arch import ArchConfig, load_checkpoint
from timecl.scenario.generate import GenConfig, generate_synthetic
from timecl.scenario.io import ingest_logs, load_bundle, save_bundle
from timecl.scenario.views import new_item_stats, task_intervals
from timecl.trainer import TrainConfig, run_continual, run_sinmo_baseline

log = logging.getLogger("timecl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# (label, flag overrides) in the order of the ablation table
ABLATION_ROWS = [
    ("none", dict(fkt=False, bkt1=False, bkt2=False)),
    ("fkt", dict(fkt=True, bkt1=False, bkt2=False)),
    ("bkt1+bkt2", dict(fkt=False, bkt1=True, bkt2=True)),
    ("fkt+bkt1", dict(fkt=True, bkt1=True, bkt2=False)),
    ("fkt+bkt2", dict(fkt=True, bkt1=False, bkt2=True)),
    ("fkt+bkt1+bkt2 random", dict(fkt=True, bkt1=True, bkt2=True, random_sampling=True)),
    ("fkt+bkt1+bkt2", dict(fkt=True, bkt1=True, bkt2=True)),
]


@dataclass
class EvalConfig:
    diagnostics: bool = True


@dataclass
class CliConfig:
    scenario: GenConfig
    model: ArchConfig
    train: TrainConfig
    eval: EvalConfig

    def to_sections(self) -> dict:
        return {name: cfgmod.to_mapping(getattr(self, name))
                for name in ("scenario", "model", "train", "eval")}


_SECTIONS = {"scenario": GenConfig, "model": ArchConfig, "train": TrainConfig, "eval": EvalConfig}


def load_config(path: str | None, overrides: list[str] | None = None) -> CliConfig:
    """Defaults, then the config file, then ``section.key=value`` overrides."""
    raw: dict[str, dict[str, str]] = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} not found", "--config")
        raw = cfgmod.read_sections(p)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"expected section.key=value, got {item!r}", "--set")
        raw.setdefault(section, {})[name] = value
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError("unknown section", unknown[0])
    parts = {name: cfgmod.from_mapping(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()}
    cfg = CliConfig(**parts)
    cfg.scenario.validate()
    cfg.train.validate()
    return cfg


def _arch_for(cfg: CliConfig, n: int) -> ArchConfig:
    if cfg.model.n != n:
        return replace(cfg.model, n=n)
    return cfg.model


def _write_effective(cfg: CliConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfgmod.write_sections(cfg.to_sections()))


def cmd_generate(args, cfg: CliConfig) -> int:
    bundle = generate_synthetic(cfg.scenario, args.seed)
    out = save_bundle(bundle, args.out)
    (Path(out) / "generator.cfg").write_text(
        cfgmod.write_sections({"scenario": cfgmod.to_mapping(cfg.scenario)}))
    (Path(out) / "ledger.json").write_text(json.dumps(bundle.ledger, indent=2, sort_keys=True) + "\n")
    print(f"wrote scenario to {out} ({len(bundle.store.user_ids)} users, "
          f"{bundle.num_items} items, digest {bundle.digest()[:12]})")
    return EXIT_OK


def cmd_ingest(args, cfg: CliConfig) -> int:
    bundle = ingest_logs(args.interactions, args.profiles, args.manifest)
    out = save_bundle(bundle, args.out)
    print(f"wrote scenario to {out} (digest {bundle.digest()[:12]})")
    return EXIT_OK


def cmd_stats(args, cfg: CliConfig) -> int:
    bundle = load_bundle(args.scenario)
    table = new_item_stats(bundle, task_intervals(bundle))
    if args.json:
        print(json.dumps(table.as_dict(), indent=2, sort_keys=True))
    else:
        print(table.to_text())
    return EXIT_OK


def _train_into(bundle, cfg: CliConfig, out: Path, scenario_path: str, train: TrainConfig):
    arch = _arch_for(cfg, bundle.n)
    art = run_continual(bundle, train, arch, out)
    art.manifest["scenario_path"] = str(Path(scenario_path).resolve())
    (out / "manifest.json").write_text(json.dumps(art.manifest, indent=2, sort_keys=True) + "\n")
    _write_effective(replace(cfg, train=train, model=arch), out)
    return art


def cmd_train(args, cfg: CliConfig) -> int:
    bundle = load_bundle(args.scenario)
    out = Path(args.out)
    t0 = time.perf_counter()
    art = _train_into(bundle, cfg, out, args.scenario, cfg.train)
    print(f"trained {bundle.num_tasks} tasks in {time.perf_counter() - t0:.1f}s; "
          f"checkpoints in {out}")
    if args.curves:
        _write_curves(art.losses, out / "curves")
    return EXIT_OK


def _write_curves(losses: list[dict], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for key in ("main", "fkt", "bkt1", "bkt2", "total"):
        with open(directory / f"{key}.tsv", "w") as fh:
            fh.write("step\tvalue\n")
            for i, rec in enumerate(losses, 1):
                fh.write(f"{i}\t{rec[key]!r}\n")


def cmd_baseline(args, cfg: CliConfig) -> int:
    bundle = load_bundle(args.scenario)
    out = Path(args.out)
    results = run_sinmo_baseline(bundle, cfg.train, _arch_for(cfg, bundle.n), out)
    _write_effective(cfg, out)
    for i, r in results.items():
        print(f"T{i} {r.kind} {r.value:.4f}")
    return EXIT_OK


def _evaluate_run(run_dir: Path, scenario: str | None, baseline: str | None, diagnostics: bool):
    from timecl.evaluation import evaluate_all, load_baseline, pseudo_label_quality

    manifest = json.loads((run_dir / "manifest.json").read_text())
    bundle = load_bundle(scenario or manifest["scenario_path"])
    if bundle.digest() != manifest["scenario_digest"]:
        raise DataError("scenario does not match the run manifest digest", str(run_dir))
    M = bundle.num_tasks
    model = load_checkpoint(run_dir / f"task_{M}.ckpt")
    seed = manifest["seed"]
    base = load_baseline(Path(baseline) / "baseline.json") if baseline else None
    diag = {}
    if diagnostics:
        ckpts = {k: load_checkpoint(run_dir / f"task_{k}.ckpt") for k in range(1, M + 1)}
        c = manifest["train"]["c"]
        for k in range(1, M):
            if not bundle.task(k).is_item:
                continue
            row = {}
            for mode in ("sampled", "random"):
                q = pseudo_label_quality(ckpts, bundle, k, mode, c=c, seed=seed)
                row[mode] = {"mean_cosine": q.mean_cosine, "users": q.users}
            diag[f"pseudo_label_quality.T{k}"] = row
    return evaluate_all(model, bundle, base, seed, config=manifest, diagnostics=diag)


def cmd_eval(args, cfg: CliConfig) -> int:
    report = _evaluate_run(Path(args.run), args.scenario, args.baseline, cfg.eval.diagnostics)
    js, md = report.write(args.report)
    print(report.to_markdown(), end="")
    print(f"report written to {js} and {md}")
    return EXIT_OK


def cmd_ablate(args, cfg: CliConfig) -> int:
    from timecl.evaluation import evaluate_all

    bundle = load_bundle(args.scenario)
    out = Path(args.out)
    rows = []
    for label, flags in ABLATION_ROWS:
        train = replace(cfg.train, **flags)
        run_dir = out / label.replace("+", "_").replace(" ", "_")
        art = _train_into(bundle, cfg, run_dir, args.scenario, train)
        report = evaluate_all(art.model, bundle, None, train.seed)
        report.write(run_dir / "report")
        rows.append((label, report))
        log.info("ablation row %s done", label)
    text = ablation_table(rows)
    (out / "ablation.md").write_text(text)
    (out / "ablation.json").write_text(json.dumps(
        {label: {str(k): v.value for k, v in r.results.items()} for label, r in rows},
        indent=2, sort_keys=True) + "\n")
    print(text, end="")
    return EXIT_OK


def ablation_table(rows) -> str:
    tasks = sorted(rows[0][1].results)
    head = "| Row | " + " | ".join(f"T{k} ({rows[0][1].results[k].kind})" for k in tasks) + " |"
    lines = [head, "|" + "---|" * (len(tasks) + 1)]
    for label, report in rows:
        lines.append(f"| {label} | " + " | ".join(f"{report.results[k].value:.4f}" for k in tasks) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args, cfg: CliConfig) -> int:
    """Re-render stored report JSON files as markdown (several runs: mean and stddev)."""
    import numpy as np
    from timecl.evaluation import RunReport

    reports = [RunReport.from_dict(json.loads((Path(p) / "report.json").read_text()))
               for p in args.reports]
    if len(reports) == 1:
        print(reports[0].to_markdown(), end="")
        return EXIT_OK
    tasks = sorted(reports[0].results)
    lines = ["| Task | Metric | Mean | Std | Runs |", "|---|---|---|---|---|"]
    for k in tasks:
        vals = np.array([r.results[k].value for r in reports])
        lines.append(f"| T{k} | {reports[0].results[k].kind} | {vals.mean():.4f} | "
                     f"{vals.std(ddof=1):.4f} | {len(vals)} |")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="timecl", description="Time-aware continual user representation learning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_text, func):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="sectioned key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.set_defaults(func=func)
        return p

    p = add("generate", "generate a synthetic scenario", cmd_generate)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = add("ingest", "build a scenario from interaction/profile logs", cmd_ingest)
    p.add_argument("--interactions", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("stats", "print the item-emergence table", cmd_stats)
    p.add_argument("--scenario", required=True)
    p.add_argument("--json", action="store_true")

    p = add("train", "run continual training over all tasks", cmd_train)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curves", action="store_true", help="also write per-component loss curves")

    p = add("baseline", "train one model per task from scratch", cmd_baseline)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", "evaluate a trained run at the final timestamp", cmd_eval)
    p.add_argument("--run", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--baseline")
    p.add_argument("--scenario", help="defaults to the path recorded in the run manifest")

    p = add("ablate", "train and evaluate the transfer-module ablation grid", cmd_ablate)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)

    p = add("report", "render one or more stored reports", cmd_report)
    p.add_argument("reports", nargs="+", help="report directories")
    p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, TimeclError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
