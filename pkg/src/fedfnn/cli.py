"""Command-line front end: run, ablation, datagen, eval-only, report.

Exit codes: 0 on success, 2 for configuration errors, 3 for data errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, ExperimentConfig, config_from_dict
from .data import DataError, write_interactions
from .datagen import GenParams, generate
from .engine import load_source, prepare_data, run_experiment
from .gmf import GmfModel
from .metrics import MetricsLog, evaluate

log = logging.getLogger("fedfnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
ABLATION_STRATEGIES = ("wcu", "fedfast", "fedfnn")
ABLATION_ITEMS = ("w0", "w1", "w2")
ABLATION_CHECKPOINTS = (100, 300, 500)


def build_id() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "" if math.isnan(value) else repr(float(value))


def cell_name(cfg: ExperimentConfig, seed: int) -> str:
    return f"{cfg.client_strategy}_{cfg.item_strategy}_seed{seed}_{cfg.hash()[:8]}"


def write_wide(log_: MetricsLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(log_.columns)
        for row in log_.rows:
            writer.writerow([_fmt(row[c]) for c in log_.columns])


def write_long(log_: MetricsLog, path) -> None:
    """One observation per line, for tools that want tidy data."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["strategy", "item_strategy", "seed", "round", "metric", "value"])
        for row in log_.rows:
            for c in log_.columns[1:]:
                writer.writerow([log_.strategy, log_.item_strategy, log_.seed, row["round"], c, _fmt(row[c])])


def save_model(model: GmfModel, path, cfg_hash: str) -> None:
    np.savez(path, user_emb=model.user_emb, item_emb=model.item_emb, score_w=model.score_w, score_b=np.array([model.score_b]), config_hash=np.array(cfg_hash))


def load_model(path) -> tuple[GmfModel, str]:
    with np.load(path) as z:
        return GmfModel(z["user_emb"], z["item_emb"], z["score_w"], float(z["score_b"][0])), str(z["config_hash"])


def _run_cell(cfg_dict: dict, seed: int, out_dir: str, emit: str, keep_model: bool) -> dict:
    """Run one (strategy, seed) cell and write its files. Top level so it pickles."""
    cfg = config_from_dict(cfg_dict)
    name = cell_name(cfg, seed)
    out = Path(out_dir)
    log_ = run_experiment(cfg, seed)
    files = [f"{name}.csv"]
    write_wide(log_, out / files[0])
    if emit == "long":
        files.append(f"{name}.long.csv")
        write_long(log_, out / files[-1])
    if keep_model:
        files.append(f"{name}.model.npz")
        save_model(log_.final_model, out / files[-1], cfg.hash())
    return {
        "cell": name,
        "strategy": cfg.client_strategy,
        "item_strategy": cfg.item_strategy,
        "seed": seed,
        "config_hash": cfg.hash(),
        "files": files,
        "wall_clock_s": round(log_.wall_clock, 3),
        "skipped_rounds": log_.skipped_rounds,
        "final": {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in log_.final.items()},
    }


def run_cells(cells: list[tuple[ExperimentConfig, int]], out_dir: Path, emit: str, threads: int, keep_model: bool = False) -> list[dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(c.to_dict(), s, str(out_dir), emit, keep_model) for c, s in cells]
    if threads <= 1 or len(jobs) == 1:
        results = []
        for job in jobs:
            results.append(_run_cell(*job))
            log.info("finished %s in %.1fs", results[-1]["cell"], results[-1]["wall_clock_s"])
        return results
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_cell, *zip(*jobs)))


def write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig, cells: list[dict], started: float, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "build_id": build_id(),
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "cells": cells,
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


# argument handling -----------------------------------------------------------


def _parse_value(text: str):
    return yaml.safe_load(text)


def apply_overrides(raw: dict, pairs: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides (values parsed as YAML scalars) to a config mapping."""
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError("--set", f"expected key=value, got {pair!r}")
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot set a field inside a non-mapping value")
        node[parts[-1]] = _parse_value(value)
    return raw


def resolve_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config", "a config file is required")
    try:
        raw = yaml.safe_load(Path(args.config).read_text()) or {}
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "expected a mapping at the top level")
    overrides = list(getattr(args, "set", None) or [])
    for flag, key in (("rounds", "rounds"), ("strategy", "client_strategy"), ("item_strategy", "item_strategy")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    cfg = config_from_dict(apply_overrides(raw, overrides))
    if getattr(args, "seed", None):
        cfg.seeds = list(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out_dir) if args.out_dir else Path("runs") / cfg.name


def cmd_run(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    load_source(cfg)  # fail fast on unreadable data, before any work
    cells = run_cells([(cfg, s) for s in cfg.seeds], out, args.emit, args.threads, keep_model=args.save_model)
    write_manifest(out, "run", cfg, cells, started)
    if args.plot:
        _plot(out)
    for c in cells:
        print(f"{c['cell']}: hr={c['final']['hr']:.4f} ndcg={c['final']['ndcg']:.4f} ({c['wall_clock_s']:.1f}s)")
    return EXIT_OK


def ablation_summary(cells: list[dict], out_dir: Path, checkpoints=ABLATION_CHECKPOINTS) -> Path:
    """Median over seeds of HR/nDCG at each checkpoint, one row per (strategy, item strategy)."""
    cols = [f"{m}@{c}" for c in checkpoints for m in ("hr", "ndcg")]
    grouped: dict[tuple[str, str], list[dict]] = {}
    for cell in cells:
        grouped.setdefault((cell["strategy"], cell["item_strategy"]), []).append(cell)
    path = out_dir / "summary.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["strategy", "item_strategy", *cols])
        for strategy in ABLATION_STRATEGIES:
            for item in ABLATION_ITEMS:
                runs = grouped.get((strategy, item), [])
                values = []
                for c in checkpoints:
                    per_seed = []
                    for cell in runs:
                        rows = {int(r["round"]): r for r in _read_rows(out_dir / cell["files"][0])}
                        if c in rows:
                            per_seed.append(rows[c])
                    for m in ("hr", "ndcg"):
                        vals = [r[m] for r in per_seed]
                        values.append(_fmt(float(np.median(vals))) if vals else "")
                writer.writerow([strategy, item, *values])
    return path


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) if v else math.nan for k, v in row.items()} for row in csv.DictReader(fh)]


def cmd_ablation(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    cfg.checkpoints = sorted(set(cfg.checkpoints) | set(ABLATION_CHECKPOINTS))
    out = _out_dir(args, cfg)
    load_source(cfg)
    cells = []
    for strategy in ABLATION_STRATEGIES:
        for item in ABLATION_ITEMS:
            cell_cfg = cfg.with_overrides(client_strategy=strategy, item_strategy=item)
            cells.extend((cell_cfg, s) for s in cfg.seeds)
    results = run_cells(cells, out, args.emit, args.threads)
    summary = ablation_summary(results, out)
    write_manifest(out, "ablation", cfg, results, started, {"summary": summary.name})
    if args.plot:
        _plot(out)
    print(summary.read_text(), end="")
    return EXIT_OK


def gen_params_from_args(args) -> GenParams:
    values = {}
    if args.config:
        cfg = resolve_config(args)
        if cfg.dataset.synthetic is None:
            raise ConfigError("dataset.synthetic", "datagen needs a synthetic dataset section")
        values.update(cfg.dataset.synthetic)
    for flag, key in (("users", "num_users"), ("items", "num_items"), ("groups", "num_groups"), ("sparsity", "sparsity"), ("eta", "eta"), ("gen_seed", "seed")):
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    missing = [k for k in ("num_users", "num_items", "num_groups") if k not in values]
    if missing:
        raise ConfigError(missing[0], "required for datagen (flag or dataset.synthetic)")
    try:
        return GenParams(**values)
    except TypeError as exc:
        raise ConfigError("dataset.synthetic", str(exc)) from None
    except ValueError as exc:
        raise ConfigError("dataset.synthetic", str(exc)) from None


def cmd_datagen(args) -> int:
    started = time.perf_counter()
    params = gen_params_from_args(args)
    out = Path(args.out_dir or "data/synthetic")
    out.mkdir(parents=True, exist_ok=True)
    dataset, groups, _ = generate(params)
    write_interactions(dataset, out / "interactions.tsv")
    group_map = {
        "num_groups": params.num_groups,
        "user_group": groups.user_group.tolist(),
        "item_group": groups.item_group.tolist(),
    }
    (out / "groups.json").write_text(json.dumps(group_map))
    manifest = {
        "command": "datagen",
        "build_id": build_id(),
        "params": params.__dict__,
        "summary": dataset.summary(),
        "files": ["interactions.tsv", "groups.json"],
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(json.dumps(dataset.summary()))
    return EXIT_OK


def cmd_eval_only(args) -> int:
    cfg = resolve_config(args)
    model, saved_hash = load_model(args.model)
    if saved_hash != cfg.hash():
        log.warning("model was trained under config %s, evaluating with %s", saved_hash, cfg.hash())
    seed = cfg.seeds[0]
    data = prepare_data(cfg, seed)
    if model.num_users != data.num_users or model.num_items != data.train.num_items:
        raise DataError(f"model shape {model.user_emb.shape[0]}x{model.item_emb.shape[0]} does not match the dataset")
    hr, ndcg = evaluate(model, data.split, cfg.k)
    print(json.dumps({"hr": hr, "ndcg": ndcg, "k": cfg.k, "users": len(data.split)}))
    return EXIT_OK


def _plot(out: Path) -> None:
    from .report import render_dir

    for p in render_dir(out):
        log.info("wrote %s", p)


def cmd_report(args) -> int:
    from .report import render_dir

    written = render_dir(args.dir)
    if not written:
        raise DataError(f"no metric CSVs in {args.dir}")
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedfnn", description="Federated GMF experiments with subordinate-embedding prediction.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="YAML experiment config")
        p.add_argument("--seed", type=int, action="append", help="seed to run (repeatable); overrides the config list")
        p.add_argument("--out-dir", help="output directory (default runs/<name>)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. gmf.lr=0.01")

    p = sub.add_parser("run", help="run one strategy for every configured seed")
    common(p)
    p.add_argument("--rounds", type=int)
    p.add_argument("--strategy")
    p.add_argument("--item-strategy")
    p.add_argument("--threads", type=int, default=1, help="cells to run in parallel")
    p.add_argument("--emit", choices=("wide", "long"), default="wide", help="also write a long-format CSV per cell")
    p.add_argument("--save-model", action="store_true", help="store the final model next to each CSV")
    p.add_argument("--plot", action="store_true", help="render PNG curves next to the CSVs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablation", help="client strategy x item strategy grid with a checkpoint summary")
    common(p)
    p.add_argument("--rounds", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--emit", choices=("wide", "long"), default="wide")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("datagen", help="write a synthetic grouped interaction set")
    p.add_argument("--config", help="config with a dataset.synthetic section")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, action="append", help=argparse.SUPPRESS)
    p.add_argument("--out-dir")
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--sparsity", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--gen-seed", type=int, help="generator seed")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("eval-only", help="score a saved model on the configured split")
    common(p)
    p.add_argument("--model", required=True, help=".model.npz written by run --save-model")
    p.set_defaults(func=cmd_eval_only)

    p = sub.add_parser("report", help="plot every metrics CSV in a run directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
