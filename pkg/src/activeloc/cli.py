"""Command line entry point: ``activeloc <command> --config cfg.json --seed N --run-dir DIR``.

Exit codes: 0 success, 2 configuration or usage error, 3 generation or training failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import sklearn

from . import __version__
from .errors import BalancingError, ConfigError, GenerationError, TrainingError
from .harness.config import ExperimentConfig, load_config
from .harness.dataset import SHARD_VERSION, build_bundle, gen_dataset, load_split
from .harness.evaluate import EvalReport, evaluate_table, parse_policy
from .harness.report import FORMATS, render_cdf_csv, render_report
from .harness.training import train_models
from .learn.estimators import MLPScorer, VPTScorer
from .learn.train import STORE_VERSION

logger = logging.getLogger("activeloc")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3
SPLIT_CHOICES = ("train", "test", "both")
REPORT_EXT = {"markdown": "md", "csv": "csv", "json": "json"}


def versions():
    return {"activeloc": __version__, "numpy": np.__version__, "scikit-learn": sklearn.__version__,
            "python": platform.python_version(), "shard_format": SHARD_VERSION, "param_format": STORE_VERSION}


def _splits(arg):
    return ("train", "test") if arg == "both" else (arg,)


def _scene_count(cfg, split):
    return cfg.train_scenes if split == "train" else cfg.test_scenes


def update_manifest(run_dir: Path, cfg: ExperimentConfig, seed, command, outputs):
    """Record the command in the run manifest; a run dir belongs to one config and seed."""
    path = run_dir / "manifest.json"
    if path.exists():
        man = json.loads(path.read_text())
        if man["config_hash"] != cfg.hash() or man["master_seed"] != seed:
            raise ConfigError(f"{run_dir} was created with config {man['config_hash']} and seed "
                              f"{man['master_seed']}; use a fresh run directory")
    else:
        man = {"config_hash": cfg.hash(), "master_seed": seed, "commands": {}}
    man["versions"] = versions()
    man["commands"][command] = {"config_hash": cfg.hash(), "seed": seed,
                                "outputs": sorted(str(Path(o).relative_to(run_dir)) for o in outputs)}
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json() + "\n")
    path.write_text(json.dumps(man, sort_keys=True, indent=1) + "\n")


def check_run_dir(run_dir: Path, cfg, seed):
    path = run_dir / "manifest.json"
    if path.exists():
        man = json.loads(path.read_text())
        if man["config_hash"] != cfg.hash() or man["master_seed"] != seed:
            raise ConfigError(f"{run_dir} belongs to a different config or seed")


def cmd_gen_scene(args, cfg, run_dir):
    out = []
    for split in _splits(args.split):
        for i in range(_scene_count(cfg, split)):
            b = build_bundle(cfg, args.seed, split, i)
            p = run_dir / "scenes" / f"{split}_{i:03d}.json"
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(b.scene.to_json())
            out.append(p)
    return out


def cmd_map(args, cfg, run_dir):
    out = []
    for split in _splits(args.split):
        for i in range(_scene_count(cfg, split)):
            b = build_bundle(cfg, args.seed, split, i)
            p = run_dir / "maps" / f"{split}_{i:03d}.json"
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(b.lmap.to_json())
            out.append(p)
            logger.info("%s scene %d: %d mapped landmarks", split, i, len(b.lmap))
    return out


def cmd_gen_data(args, cfg, run_dir):
    data = run_dir / "data"
    for split in _splits(args.split):
        gen_dataset(cfg, args.seed, split, data, resume=not args.no_resume)
    return sorted(data.glob("*.shard*"))


def _load(run_dir, split):
    try:
        return load_split(run_dir / "data", split)
    except FileNotFoundError as e:
        raise ConfigError(f"{e}; run gen-data first") from e


def cmd_train(args, cfg, run_dir):
    table = _load(run_dir, "train")
    models = train_models(table, cfg, args.seed, kinds=tuple(args.models))
    out = []
    for kind, m in models.items():
        p = run_dir / "models" / f"{kind}.bin"
        p.parent.mkdir(parents=True, exist_ok=True)
        m.save(p)
        out += [p, p.with_suffix(".json")]
    return out


def load_models(run_dir, names):
    models = {}
    for kind, cls in (("mlp", MLPScorer), ("vpt", VPTScorer)):
        if any(n.partition("+")[0] == kind for n in names):
            p = run_dir / "models" / f"{kind}.bin"
            if not p.exists():
                raise ConfigError(f"policy {kind} needs {p}; run train first")
            models[kind] = cls.load(p)
    return models


def cmd_eval(args, cfg, run_dir):
    table = _load(run_dir, "test")
    names = list(args.policies or cfg.policies)
    models = load_models(run_dir, names)
    try:
        policies = [parse_policy(n, models) for n in names]
    except ValueError as e:
        raise ConfigError(str(e)) from e
    report = evaluate_table(table, policies, cfg.camera, args.seed, cfg.thresholds)
    rdir = run_dir / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    out = []
    for fmt in FORMATS:
        p = rdir / f"report.{REPORT_EXT[fmt]}"
        p.write_text(render_report(report, fmt))
        out.append(p)
    p = rdir / "cdf.csv"
    p.write_text(render_cdf_csv(report))
    out.append(p)
    # wall-clock numbers live apart from the reproducible outputs
    p = rdir / "timing.json"
    p.write_text(json.dumps(report.timing, sort_keys=True, indent=1) + "\n")
    out.append(p)
    print(render_report(report, "markdown"), end="")
    return out


def cmd_report(args, cfg, run_dir):
    src = run_dir / "reports" / "report.json"
    if not src.exists():
        raise ConfigError(f"{src} not found; run eval first")
    report = EvalReport.from_dict(json.loads(src.read_text()))
    text = render_report(report, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return []


COMMANDS = {"gen-scene": cmd_gen_scene, "map": cmd_map, "gen-data": cmd_gen_data, "train": cmd_train,
            "eval": cmd_eval, "report": cmd_report}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="activeloc", description="Viewpoint selection for visual localization experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
        s.add_argument("--seed", type=int, default=0, help="master seed")
        s.add_argument("--run-dir", default="runs/default", help="output directory")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("gen-scene", "map", "gen-data"):
            s.add_argument("--split", choices=SPLIT_CHOICES, default="both")
        if name == "gen-data":
            s.add_argument("--no-resume", action="store_true", help="regenerate shards that already exist")
        if name == "train":
            s.add_argument("--models", nargs="+", choices=("mlp", "vpt"), default=["mlp", "vpt"])
        if name == "eval":
            s.add_argument("--policies", nargs="+", help="policy names, e.g. max+occl vpt+occl best")
        if name == "report":
            s.add_argument("--format", default="markdown", help="markdown, csv or json")
            s.add_argument("--output", help="write here instead of stdout")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run_dir = Path(args.run_dir)
    try:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        check_run_dir(run_dir, cfg, args.seed)
        outputs = COMMANDS[args.command](args, cfg, run_dir)
        if args.command != "report":
            update_manifest(run_dir, cfg, args.seed, args.command, outputs)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (GenerationError, TrainingError, BalancingError) as e:
        print(f"{args.command} failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
