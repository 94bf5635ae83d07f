"""Command-line harness: collect, train, eval, generalize, oracle-check.

Every command writes into a run directory (``--run-dir``, default
``runs/<command>``) holding ``config.json``, the fully resolved configuration,
next to its outputs. Configuration comes from ``--config FILE`` plus any number
of dot-path overrides such as ``--search.n_sims=200``.

Exit codes: 0 success, 1 a check or acceptance test failed, 2 bad input
(usage, config, missing or malformed files).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import multiprocessing
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checks import oracle_check
from .config import RunConfig, load_config, make_domain
from .dataset import read_dataset, write_dataset
from .domains import make_model
from .errors import DataError, GammaZeroError, ZeroPosteriorError
from .evaluation import MODES, evaluate, make_agent
from .gnn import load_params, save_params
from .gnn.train import train
from .graph import D_EDGE, D_NODE
from .oracle import Dataset, Expert, run_expert_episode

log = logging.getLogger("gammazero")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


# ------------------------------------------------------------------ helpers


def prepare_run_dir(path, cfg: RunConfig) -> Path:
    run = Path(path)
    try:
        run.mkdir(parents=True, exist_ok=True)
        (run / "config.json").write_text(cfg.to_json() + "\n")
    except OSError as exc:
        raise DataError(f"cannot write run directory {run}: {exc}") from exc
    return run


def episode_model(spec: dict, seed: int, instance: int, episode: int, randomize: bool):
    """The instance for one collection episode; rock layouts vary per episode when asked."""
    spec = dict(spec)
    is_rs = str(spec.get("domain", "rocksample")).lower() == "rocksample"
    if randomize and is_rs and "rock_positions" not in spec:
        spec["placement_seed"] = int(np.random.default_rng([seed, instance, episode, 7]).integers(2**31))
    return make_domain(spec, make_model)


def _collect_one(job):
    cfg, idx, spec, ep = job
    model = episode_model(spec, cfg.seed, idx, ep, cfg.collect.randomize_placement)
    rng = np.random.default_rng([cfg.seed, idx, ep])
    try:
        samples = run_expert_episode(model, Expert(model, cfg.expert), rng, cfg.belief.n_particles, cfg.graph.tau)
    except (GammaZeroError, ZeroPosteriorError) as exc:
        return idx, ep, [], str(exc)
    return idx, ep, samples, None


def collect(cfg: RunConfig) -> Dataset:
    """Expert episodes over every configured instance, merged in (instance, episode) order."""
    if cfg.collect.episodes < 1:
        raise DataError("collect.episodes must be >= 1; an empty dataset is not written")
    if not cfg.collect.instances:
        raise DataError("collect.instances is empty")
    jobs = [(cfg, i, spec, ep) for i, spec in enumerate(cfg.collect.instances) for ep in range(cfg.collect.episodes)]
    if cfg.collect.workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=cfg.collect.workers, mp_context=ctx) as pool:
            results = list(pool.map(_collect_one, jobs))
    else:
        results = [_collect_one(j) for j in jobs]
    samples, discarded = [], []
    for idx, ep, got, err in results:
        if err is not None:
            log.warning("instance %d episode %d discarded: %s", idx, ep, err)
            discarded.append([idx, ep])
        samples += got
    if not samples:
        raise DataError("every expert episode failed; nothing to write")
    expert = Expert(make_domain(cfg.collect.instances[0], make_model), cfg.expert)
    provenance = {
        "instances": [dict(s) for s in cfg.collect.instances],
        "episodes_per_instance": cfg.collect.episodes,
        "randomize_placement": cfg.collect.randomize_placement,
        "expert": expert.name,
        "seed": cfg.seed,
        "n_particles": cfg.belief.n_particles,
        "tau": cfg.graph.tau,
        "discarded": discarded,
    }
    return Dataset(samples, provenance).check()


def load_checked_params(path):
    try:
        return load_params(path, D_NODE, D_EDGE)
    except OSError as exc:
        raise DataError(f"cannot read parameter file {path}: {exc}") from exc


def _report_row(report, spec: dict) -> dict:
    s = report.summary()
    return {
        "instance": json.dumps(spec, sort_keys=True),
        "grid_n": spec.get("grid_n", ""),
        "k": spec.get("k", len(spec.get("rock_positions", [])) or ""),
        "mode": s["mode"],
        "episodes": s["episodes"],
        "mean": repr(s["mean"]),
        "stderr": repr(s["stderr"]),
        "mean_planning_time": repr(s["mean_planning_time"]),
        "mean_length": repr(s["mean_length"]),
    }


# ----------------------------------------------------------------- commands


def cmd_collect(cfg: RunConfig, run: Path, args) -> int:
    out = Path(args.out) if args.out else run / "dataset.jsonl"
    t0 = time.perf_counter()
    dataset = collect(cfg)
    try:
        write_dataset(dataset, out)
    except OSError as exc:
        raise DataError(f"cannot write dataset {out}: {exc}") from exc
    print(f"wrote {len(dataset)} samples to {out} ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK


def cmd_train(cfg: RunConfig, run: Path, args) -> int:
    try:
        dataset = read_dataset(args.dataset)
    except OSError as exc:
        raise DataError(f"cannot read dataset {args.dataset}: {exc}") from exc
    if not dataset.samples:
        raise DataError(f"{args.dataset} holds no samples")
    out = Path(args.out) if args.out else run / "params.gz0"
    result = train(dataset.samples, cfg.training_config(), log_path=run / "train_log.csv")
    save_params(result.params, out)
    summary = {"samples": len(dataset), "best_epoch": result.best_epoch, "diverged": result.diverged}
    if result.log:
        best = result.log[max(result.best_epoch, 1) - 1]
        summary.update(val_accuracy=best.val_accuracy, val_value_mse=best.val_value_mse, val_loss=best.val_loss)
    (run / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    print(f"wrote parameters to {out}")
    return EXIT_FAILED if result.diverged else EXIT_OK


def _evaluate_instance(cfg: RunConfig, spec: dict, mode: str, params):
    model = make_domain(spec, make_model)
    agent = make_agent(mode, model, params, cfg.search_config(), cfg.expert, cfg.graph.tau)
    ev = cfg.evaluation
    return evaluate(model, agent, ev.episodes, ev.seed, cfg.belief.n_particles, mode=mode, workers=ev.workers)


def cmd_eval(cfg: RunConfig, run: Path, args) -> int:
    mode = args.mode or cfg.evaluation.mode
    params = load_checked_params(args.params) if args.params else None
    report = _evaluate_instance(cfg, cfg.domain, mode, params)
    report.write_csv(run / f"eval_{mode}.csv")
    summary = {k: v for k, v in report.summary().items() if k in cfg.evaluation.metrics or k in ("mode", "episodes")}
    summary["instance"] = report.instance
    (run / f"eval_{mode}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_generalize(cfg: RunConfig, run: Path, args) -> int:
    mode = args.mode or cfg.evaluation.mode
    params = load_checked_params(args.params) if args.params else None
    ladder = cfg.evaluation.ladder
    if not ladder:
        raise DataError("evaluation.ladder is empty")
    out = Path(args.out) if args.out else run / "generalize.csv"
    rows = []
    for spec in ladder:
        report = _evaluate_instance(cfg, spec, mode, params)
        rows.append(_report_row(report, spec))
        print(f"{rows[-1]['instance']}: mean {report.mean:.3f} +- {report.stderr:.3f}")
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_oracle_check(cfg: RunConfig, run: Path, args) -> int:
    results = oracle_check(seed=cfg.seed, quick=args.quick)
    for r in results:
        print(r.line())
    payload = [
        {"name": r.name, "passed": r.passed, "value": r.value, "threshold": r.threshold,
         "detail": r.detail, "seconds": r.seconds}
        for r in results
    ]
    (run / "oracle_check.json").write_text(json.dumps(payload, indent=2, default=float) + "\n")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAILED if failed else EXIT_OK


COMMANDS = {
    "collect": cmd_collect,
    "train": cmd_train,
    "eval": cmd_eval,
    "generalize": cmd_generalize,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gammazero",
        description="Belief-graph policy/value networks guiding POMDP tree search.",
        epilog="Any config leaf can be overridden as --section.key=value (value parsed as JSON).",
    )
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--run-dir", help="output directory (default runs/<command>)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="label expert episodes on the collection instances")
    p.add_argument("--out", help="dataset path (default <run-dir>/dataset.jsonl)")

    p = sub.add_parser("train", help="fit the network to a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="parameter file (default <run-dir>/params.gz0)")

    p = sub.add_parser("eval", help="evaluate one agent mode on the configured domain")
    p.add_argument("--params", help="parameter file (needed by raw_policy, raw_value, mcts)")
    p.add_argument("--mode", choices=MODES)

    p = sub.add_parser("generalize", help="evaluate one parameter file across the size ladder")
    p.add_argument("--params")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", help="CSV path (default <run-dir>/generalize.csv)")

    p = sub.add_parser("oracle-check", help="filter, gradient, equivariance, plug-in and invariant checks")
    p.add_argument("--quick", action="store_true", help="fewer traces and trials")
    return parser


def split_overrides(argv: list[str]) -> tuple[list[str], list[str]]:
    """Separate config overrides (``--a.b=v``, or ``--seed=3`` for top-level keys) from ordinary arguments."""
    top = {f.name for f in dataclasses.fields(RunConfig)}
    rest, overrides = [], []
    for item in argv:
        head = item[2:].split("=", 1)[0] if item.startswith("--") else ""
        if "=" in item and ("." in head or head in top):
            overrides.append(item)
        else:
            rest.append(item)
    return rest, overrides


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    rest, overrides = split_overrides(argv)
    args = build_parser().parse_args(rest)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, overrides)
        run = prepare_run_dir(args.run_dir or Path("runs") / args.command, cfg)
        return COMMANDS[args.command](cfg, run, args)
    except GammaZeroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
