"""Command-line surface: ``synth``, ``index``, ``run`` and ``report``.

Set the ``ANCHORAL_LOG`` environment variable to a logging level name
(DEBUG, INFO, ...) to control verbosity. Errors exit with status 1 and a
single machine-parsable ``anchoral-error: <Type>: <message>`` line on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import (ConfigError, ExperimentConfig, FilterConfig, FILTER_TYPES,
                     effective_config_dict, effective_config_json, parse_config,
                     parse_config_dict)
from .index import ExactIndex, HnswIndex, IndexParams, build_index
from .runner import (ExperimentResult, RoundRecord, aggregate_runs, budget_matched,
                     read_rounds_csv, run_experiment, write_rounds_csv)

logger = logging.getLogger(__name__)

RESULT_FILE = "result.json"
ROUNDS_FILE = "rounds.csv"
EFFECTIVE_CONFIG_FILE = "effective-config.json"
INDEX_FILE = "index.aidx"


@dataclass(frozen=True)
class RunManifest:
    """What a single run consumed and where its artifacts go."""

    config_path: str | None
    dataset_dir: str
    out_dir: str
    dataset_hash: str


class CliError(ValueError):
    pass


# -- dataset / index resolution -----------------------------------------


def _load_dataset(cfg: ExperimentConfig, dataset_dir: str | None):
    ddir = dataset_dir or cfg.dataset.dir
    if ddir is None:
        raise CliError("no dataset directory: set dataset.dir in the config "
                       "or pass --dataset")
    ddir = Path(ddir)
    if not ddir.is_dir():
        raise CliError(f"dataset directory {ddir} does not exist")
    return str(ddir), data_mod.load_dataset_dir(ddir)


def _resolve_index(cfg: ExperimentConfig, dataset_dir: str, dataset,
                   build_if_missing: bool):
    if cfg.index.type == "exact":
        return ExactIndex(dataset.embeddings)
    path = Path(dataset_dir) / INDEX_FILE
    params = cfg.index.params()
    if not path.exists():
        if not build_if_missing:
            raise CliError(f"index file {path} not found; run `anchoral index` "
                           f"first or pass --build-index")
        logger.info("building index over %d instances", dataset.n)
        index = build_index(dataset.embeddings, params)
        index.save(path)
        return index
    index = HnswIndex.load(path, dataset.embeddings)
    stored = index.params
    if (stored.ef_construction, stored.max_connections, stored.seed) != (
            params.ef_construction, params.max_connections, params.seed):
        raise CliError(
            f"index file {path} was built with "
            f"(ef_construction={stored.ef_construction}, "
            f"max_connections={stored.max_connections}, seed={stored.seed}); "
            f"config asks for ({params.ef_construction}, "
            f"{params.max_connections}, {params.seed}). Rebuild or fix the config.")
    if stored.ef_search != params.ef_search:
        index.params = dataclasses.replace(stored, ef_search=params.ef_search)
    return index


# -- run execution --------------------------------------------------------


def _run_dir_name(cfg: ExperimentConfig, offset: int) -> str:
    return f"{cfg.filter.type}_{cfg.strategy.type}_s{offset}"


def _write_result(result: ExperimentResult, run_dir: Path, cfg: ExperimentConfig,
                  manifest: RunManifest, offset: int, majority_class: int) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    write_rounds_csv(result, run_dir / ROUNDS_FILE)
    (run_dir / EFFECTIVE_CONFIG_FILE).write_text(effective_config_json(cfg))
    payload = {
        "filter": cfg.filter.type,
        "strategy": cfg.strategy.type,
        "seed_offset": offset,
        "dataset_hash": manifest.dataset_hash,
        "majority_class": majority_class,
        "n_init": result.n_init,
        "n_rounds": result.n_rounds,
        "completed_budget": result.completed_budget,
        "auc_minority": result.auc_minority,
        "auc_majority": result.auc_majority,
        "total_selection_time": result.total_selection_time,
        "short_rounds": [r.round_index for r in result.rounds if r.short_round],
        "config": effective_config_dict(cfg),
    }
    (run_dir / RESULT_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _execute_run(payload: tuple) -> str:
    """Run one sweep member; standalone so process pools can pickle it."""
    cfg_dict, dataset_dir, out_dir, offset, config_path = payload
    cfg = parse_config_dict(cfg_dict)
    dataset_dir, dataset = _load_dataset(cfg, dataset_dir)
    index = _resolve_index(cfg, dataset_dir, dataset, build_if_missing=False)
    manifest = RunManifest(config_path, dataset_dir, out_dir,
                           data_mod.dataset_content_hash(dataset_dir))
    run_cfg = cfg.with_seed_offset(offset)
    result = run_experiment(run_cfg, dataset, index)
    run_dir = Path(out_dir) / _run_dir_name(run_cfg, offset)
    _write_result(result, run_dir, run_cfg, manifest, offset,
                  majority_class=dataset.labels.majority_class)
    return str(run_dir)


def cmd_run(args) -> int:
    cfg = parse_config(args.config) if args.config else parse_config_dict({})
    if args.time_limit is not None:
        cfg = dataclasses.replace(
            cfg, loop=dataclasses.replace(cfg.loop, time_limit=args.time_limit))

    filters = args.filter or [cfg.filter.type]
    for ftype in filters:
        if ftype not in FILTER_TYPES:
            raise CliError(f"unknown filter {ftype!r}; choose from {FILTER_TYPES}")

    dataset_dir, dataset = _load_dataset(cfg, args.dataset)
    # build the index once up front so sweep members only ever read it
    _resolve_index(cfg, dataset_dir, dataset, build_if_missing=args.build_index)

    out_dir = Path(args.out)
    jobs: list[tuple] = []
    for ftype in filters:
        fcfg = cfg.filter if ftype == cfg.filter.type else FilterConfig(type=ftype)
        member = dataclasses.replace(cfg, filter=fcfg)
        for offset in range(args.seeds):
            run_dir = out_dir / _run_dir_name(member, offset)
            if (run_dir / RESULT_FILE).exists() and not args.force:
                raise CliError(f"{run_dir} already holds a result; "
                               f"pass --force to overwrite")
            jobs.append((effective_config_dict(member), dataset_dir, str(out_dir),
                         offset, args.config))

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for run_dir in pool.map(_execute_run, jobs):
                logger.info("wrote %s", run_dir)
    else:
        for payload in jobs:
            logger.info("wrote %s", _execute_run(payload))
    return 0


# -- synth ----------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    if (out / data_mod.TRAIN_EMB_FILE).exists() and not args.force:
        raise CliError(f"{out} already holds a dataset; pass --force to overwrite")
    spec = data_mod.SyntheticSpec(
        n_total=args.n, d=args.d, minority_fraction=args.minority_fraction,
        n_minority_clusters=args.minority_clusters,
        n_majority_clusters=args.majority_clusters,
        cluster_sigma=args.sigma, cluster_center_scale=args.center_scale,
        seed=args.seed)
    dataset = data_mod.generate_synthetic_task(spec, n_test_majority=args.test_majority)
    data_mod.save_dataset_dir(dataset, out, spec=spec)
    logger.info("wrote dataset (%d train, %d test) to %s",
                dataset.n, dataset.test_labels.n, out)
    return 0


# -- index ----------------------------------------------------------------


def cmd_index(args) -> int:
    cfg = parse_config(args.config) if args.config else parse_config_dict({})
    dataset_dir, dataset = _load_dataset(cfg, args.dataset)
    out = Path(args.out) if args.out else Path(dataset_dir) / INDEX_FILE
    if out.exists() and not args.force:
        raise CliError(f"{out} already exists; pass --force to overwrite")
    index = build_index(dataset.embeddings, cfg.index.params())
    index.save(out)
    logger.info("wrote index over %d instances to %s", index.n, out)
    return 0


# -- report ---------------------------------------------------------------


def _discover_results(inputs) -> list[Path]:
    found: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_file() and p.name == RESULT_FILE:
            found.append(p)
        elif p.is_dir():
            found.extend(sorted(p.glob(f"**/{RESULT_FILE}")))
        else:
            raise CliError(f"{item} is neither a result file nor a directory")
    if not found:
        raise CliError("no result files found")
    return found


def _load_result(path: Path) -> tuple[dict, ExperimentResult]:
    meta = json.loads(path.read_text())
    rows = read_rounds_csv(path.parent / ROUNDS_FILE)
    rounds = []
    prev_total = meta["n_init"]
    for row in rows:
        rounds.append(RoundRecord(
            round_index=row["round"],
            labeled_total=row["labeled_total"],
            labeled_per_class=row["labeled_per_class"],
            per_class_f1=(),
            minority_f1=row["minority_f1"],
            majority_f1=row["majority_f1"],
            selection_time_s=row["selection_time_s"],
            subpool_size=row["subpool_size"],
            subpool_minority_frac=row["subpool_minority_frac"],
            new_minority=row["new_minority"],
            discovered_clusters=row["discovered_clusters"],
            new_labeled=row["labeled_total"] - prev_total,
            short_round=row["round"] in set(meta.get("short_rounds", ())),
        ))
        prev_total = row["labeled_total"]
    result = ExperimentResult(
        rounds=rounds,
        auc_minority=meta["auc_minority"],
        auc_majority=meta["auc_majority"],
        total_selection_time=meta["total_selection_time"],
        completed_budget=meta["completed_budget"],
        n_init=meta["n_init"],
        config=meta.get("config"),
        dataset_hash=meta.get("dataset_hash"),
    )
    return meta, result


_REPORT_METRICS = (
    ("completed_budget", "budget"),
    ("auc_majority", "auc_majority"),
    ("auc_minority", "auc_minority"),
    ("total_selection_time", "selection_time_s"),
)


def _summary_rows(results_by_method: dict, scope: str) -> list[dict]:
    rows = []
    for (ftype, stype), results in sorted(results_by_method.items()):
        summaries = aggregate_runs(list(results))
        row = {"filter": ftype, "strategy": stype, "scope": scope,
               "n_runs": len(results)}
        for attr, label in _REPORT_METRICS:
            if attr in summaries:
                row[f"{label}_median"] = summaries[attr].median
                row[f"{label}_iqr"] = summaries[attr].iqr
            else:
                row[f"{label}_median"] = ""
                row[f"{label}_iqr"] = ""
        rows.append(row)
    return rows


def _format_table(rows: list[dict]) -> str:
    if not rows:
        return "(no rows)\n"
    headers = list(rows[0].keys())
    cells = [[(f"{v:.4f}" if isinstance(v, float) else str(v)) for v in row.values()]
             for row in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for c in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(c, widths)))
    return "\n".join(lines) + "\n"


def _write_curves(results_by_method: dict, majority_by_method: dict,
                  out_dir: Path) -> None:
    """Per-round medians of labelled-minority proportion and subpool
    minority proportion, one row per (method, round)."""
    curves = {
        "curve_labeled_minority.csv": lambda r, majority: (
            (r.labeled_total - r.labeled_per_class[majority]) / r.labeled_total),
        "curve_subpool_minority.csv": lambda r, majority: r.subpool_minority_frac,
    }
    for fname, value_of in curves.items():
        with open(out_dir / fname, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["filter", "strategy", "round", "median", "q1", "q3"])
            for (ftype, stype), results in sorted(results_by_method.items()):
                majority = majority_by_method[(ftype, stype)]
                max_rounds = max(r.n_rounds for r in results)
                for t in range(max_rounds):
                    vals = [value_of(r.rounds[t], majority)
                            for r in results if t < r.n_rounds]
                    s = aggregate_runs(vals)
                    writer.writerow([ftype, stype, t,
                                     repr(s.median), repr(s.q1), repr(s.q3)])


def cmd_report(args) -> int:
    paths = _discover_results(args.results)
    loaded = [_load_result(p) for p in paths]
    hashes = {meta.get("dataset_hash") for meta, _ in loaded}
    if len(hashes) > 1:
        raise CliError(f"refusing to mix runs over different datasets: {sorted(map(str, hashes))}")
    results_by_method: dict[tuple[str, str], list[ExperimentResult]] = {}
    majority_by_method: dict[tuple[str, str], int] = {}
    for meta, result in loaded:
        key = (meta["filter"], meta["strategy"])
        results_by_method.setdefault(key, []).append(result)
        majority_by_method[key] = int(meta.get("majority_class", 0))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    overall_rows = _summary_rows(results_by_method, "overall")
    t_star, matched = budget_matched(results_by_method)
    matched_rows = _summary_rows(matched, "budget_matched")

    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(overall_rows[0].keys()))
        writer.writeheader()
        for row in overall_rows + matched_rows:
            writer.writerow(row)

    text = ["Overall", "=======", _format_table(overall_rows), "",
            f"Budget-Matched (common rounds: {t_star})",
            "==============", _format_table(matched_rows)]
    (out_dir / "summary.txt").write_text("\n".join(text))
    _write_curves(results_by_method, majority_by_method, out_dir)
    sys.stdout.write("\n".join(text))
    return 0


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anchoral",
        description="Anchored pool filtering simulator for active learning "
                    "on large, imbalanced pools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic imbalanced dataset")
    p_synth.add_argument("--out", required=True, help="output dataset directory")
    p_synth.add_argument("--n", type=int, default=10000)
    p_synth.add_argument("--d", type=int, default=32)
    p_synth.add_argument("--minority-fraction", type=float, default=0.01)
    p_synth.add_argument("--minority-clusters", type=int, default=4)
    p_synth.add_argument("--majority-clusters", type=int, default=8)
    p_synth.add_argument("--sigma", type=float, default=0.2)
    p_synth.add_argument("--center-scale", type=float, default=5.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--test-majority", type=int, default=5000)
    p_synth.add_argument("--force", action="store_true")
    p_synth.set_defaults(func=cmd_synth)

    p_index = sub.add_parser("index", help="build the retrieval index for a dataset")
    p_index.add_argument("--dataset", help="dataset directory (overrides config)")
    p_index.add_argument("--config", help="config JSON (index section is used)")
    p_index.add_argument("--out", help="output index path (default: <dataset>/index.aidx)")
    p_index.add_argument("--force", action="store_true")
    p_index.set_defaults(func=cmd_index)

    p_run = sub.add_parser("run", help="run annotation-loop experiments")
    p_run.add_argument("--config", help="config JSON path (defaults apply if omitted)")
    p_run.add_argument("--dataset", help="dataset directory (overrides config)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seeds", type=int, default=1,
                       help="sweep size: run i shifts every seed stream by i")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="run sweep members in N parallel processes")
    p_run.add_argument("--filter", action="append",
                       help="override the filter; repeat for comparative runs")
    p_run.add_argument("--time-limit", type=float, default=None,
                       help="wall-clock cap per run, seconds")
    p_run.add_argument("--build-index", action="store_true",
                       help="build the index if missing")
    p_run.add_argument("--force", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="summarise result files")
    p_report.add_argument("results", nargs="+",
                          help="result.json files or directories containing them")
    p_report.add_argument("--out", required=True, help="report output directory")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("ANCHORAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError, OSError) as exc:
        message = str(exc).replace("\n", "; ")
        print(f"anchoral-error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
