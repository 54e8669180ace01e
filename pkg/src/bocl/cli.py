"""Command-line experiment runner.

    bocl run CONFIG.json [--alpha 0.1 --mode sn ...]
    bocl bo-bench --function branin --trials 40 --seeds 10 --method bo
    bocl report RUN_DIR [RUN_DIR ...]

Config files are flat JSON objects whose keys are listed in ``SCHEMA``;
unknown keys are rejected. Every key can be overridden by the flag of the
same name (underscores become dashes).

Outputs of ``run`` (inside ``output_dir``):

``config.json``
    the resolved configuration.
``trials.jsonl``
    one record per trial: ``task, trial, z, accuracy, penalty, reward,
    params_added, seconds``.
``summary.json``
    ``acc`` (lower-triangular test-accuracy matrix ``acc[i][j]``),
    ``average_accuracy``, ``total_params``, ``trial_counts``, ``seconds``,
    ``val_acc``, ``memory``, ``config_digest``, ``seed``, ``mode``.
"""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import data, engine
from .errors import ConfigError, MissingReport
from .network import TrainConfig, dense_spec

SCHEMA_VERSION = 1

# key -> (type, default)
SCHEMA: Dict[str, tuple] = {
    "schema_version": (int, SCHEMA_VERSION),
    "dataset": (str, "permutations"),
    "tasks": (int, 5),
    "train_size": (int, 3000),
    "val_size": (int, 1000),
    "test_size": (int, 1000),
    "hidden": (list, [64, 32]),
    "alpha": (float, 0.02),
    "n_trials": (int, 20),
    "patience": (int, 5),
    "warmstart": (int, 3),
    "z_max": (list, [30, 30]),
    "lr": (float, 0.1),
    "weight_decay": (float, 1e-4),
    "epochs": (int, 30),
    "batch_size": (int, 32),
    "seed": (int, 0),
    "mode": (str, "bocl"),
    "output_dir": (str, "runs/bocl"),
    "data_dir": (str, ""),
    "source": (str, ""),
}


def _coerce(key, value):
    kind = SCHEMA[key][0]
    try:
        if kind is list:
            if isinstance(value, str):
                value = [int(v) for v in value.replace(",", " ").split()]
            return [int(v) for v in value]
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {kind.__name__}") from None


def validate_config(raw: dict) -> dict:
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    for k, v in raw.items():
        cfg[k] = _coerce(k, v)
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"config key 'schema_version': unsupported version {cfg['schema_version']}")
    if cfg["dataset"] not in ("permutations", "mix"):
        raise ConfigError(f"config key 'dataset': expected 'permutations' or 'mix', got {cfg['dataset']!r}")
    if cfg["source"] not in ("",) + tuple(data.BUNDLED_SOURCES):
        raise ConfigError(f"config key 'source': expected one of {sorted(data.BUNDLED_SOURCES)} or empty, "
                          f"got {cfg['source']!r}")
    if cfg["mode"] not in engine.MODES:
        raise ConfigError(f"config key 'mode': expected one of {engine.MODES}, got {cfg['mode']!r}")
    for key in ("tasks", "train_size", "val_size", "test_size", "n_trials", "patience", "warmstart",
                "epochs", "batch_size"):
        if cfg[key] < 1:
            raise ConfigError(f"config key {key!r}: must be positive")
    if not cfg["hidden"] or any(h < 1 for h in cfg["hidden"]):
        raise ConfigError("config key 'hidden': needs at least one positive layer width")
    if len(cfg["z_max"]) == 1:
        cfg["z_max"] = cfg["z_max"] * len(cfg["hidden"])
    if len(cfg["z_max"]) != len(cfg["hidden"]) or any(z < 0 for z in cfg["z_max"]):
        raise ConfigError("config key 'z_max': needs one nonnegative bound per hidden layer")
    if cfg["n_trials"] < cfg["warmstart"]:
        raise ConfigError("config key 'n_trials': must be at least 'warmstart'")
    if cfg["alpha"] < 0 or cfg["lr"] <= 0 or cfg["weight_decay"] < 0:
        raise ConfigError("config key 'alpha'/'lr'/'weight_decay': out of range")
    return cfg


def config_digest(cfg: dict) -> str:
    payload = {k: v for k, v in cfg.items() if k not in ("output_dir",)}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path, overrides: Optional[dict] = None) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a flat JSON object")
    raw.update(overrides or {})
    return validate_config(raw)


class _Lock:
    def __init__(self, directory: Path):
        self.path = directory / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"{self.path.parent} is in use by another run (remove {self.path} if stale)")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def run(cfg: dict) -> dict:
    """Execute one configured experiment and write its outputs; returns the summary."""
    train_pool, test_pool, source = data.load_pools(cfg["data_dir"] or None, cfg["source"] or None)
    n_classes = max(train_pool.class_count, int(train_pool.labels.max()) + 1)
    sequence = data.build_sequence(
        cfg["dataset"], cfg["tasks"], train_pool, test_pool,
        cfg["train_size"], cfg["val_size"], cfg["test_size"], cfg["seed"],
    )
    spec = dense_spec(int(np.prod(train_pool.images.shape[1:])), cfg["hidden"], n_classes)
    reward_cfg = engine.RewardConfig(cfg["alpha"], tuple(cfg["z_max"]), cfg["n_trials"], cfg["patience"],
                                     cfg["warmstart"])
    train_cfg = TrainConfig(cfg["lr"], cfg["weight_decay"], cfg["epochs"], cfg["batch_size"])
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    with _Lock(out):
        (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        with open(out / "trials.jsonl", "w") as trials_file:
            def on_trial(rec):
                trials_file.write(json.dumps(rec.to_dict()) + "\n")
                trials_file.flush()

            res = engine.run_sequence(sequence, spec, reward_cfg, train_cfg, cfg["seed"], cfg["mode"],
                                      on_trial=on_trial)
        summary = {
            "schema_version": SCHEMA_VERSION,
            "mode": cfg["mode"],
            "dataset": cfg["dataset"],
            "source": source,
            "seed": cfg["seed"],
            "config_digest": config_digest(cfg),
            "acc": res.test_acc,
            "average_accuracy": res.average_accuracy,
            "average_accuracy_per_task": [float(np.mean(row)) for row in res.test_acc],
            "val_acc": res.val_acc,
            "total_params": res.total_params,
            "trial_counts": res.trial_counts,
            "seconds": res.seconds,
            "memory": [{"task": e.task, "meta_feature": e.meta_feature, "z": list(e.best_point)}
                       for e in res.memory],
            "task_digests": sequence.digests(),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# ---------------------------------------------------------------------------
# synthetic benchmarks

BRANIN_MIN = 0.397887357729739


def branin(x) -> float:
    x1, x2 = float(x[0]), float(x[1])
    b = 5.1 / (4 * math.pi**2)
    c = 5 / math.pi
    t = 1 / (8 * math.pi)
    return (x2 - b * x1**2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10


QUADRATIC_OPTIMUM = (7, 19)


def quadratic(z) -> float:
    return float(sum((float(a) - b) ** 2 for a, b in zip(z, QUADRATIC_OPTIMUM)))


BENCHMARKS = {
    # name -> (function to minimize, lower, upper, integer domain)
    "branin": (branin, [-5.0, 0.0], [10.0, 15.0], False),
    "synthetic-quadratic": (quadratic, [0.0, 0.0], [30.0, 30.0], True),
}


def bo_bench(function: str, trials: int, seeds: int, method: str = "bo", n_init: int = 3) -> dict:
    """Best-so-far (minimum) trajectories for ``seeds`` independent searches."""
    from .acquisition import latin_hypercube, project_to_integer
    from .numeric import BoundedBox

    if function not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark function {function!r}; expected one of {sorted(BENCHMARKS)}")
    if method not in ("bo", "random"):
        raise ConfigError(f"unknown method {method!r}; expected 'bo' or 'random'")
    fn, lo, hi, integer = BENCHMARKS[function]
    bounds = BoundedBox(lo, hi)
    trajectories = []
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        init = bounds.denormalize(latin_hypercube(min(n_init, trials), bounds.dim, rng))
        if integer:
            init = list(dict.fromkeys(tuple(p) for p in project_to_integer(init, bounds)))
            init = [np.array(p) for p in init]
        found = engine.search(lambda p: (-fn(p), None), bounds, init, trials, None, rng,
                              method=method, integer=integer)
        traj = list(np.minimum.accumulate([-t.reward for t in found])) if found else []
        trajectories.append({"seed": seed, "best_so_far": [float(v) for v in traj],
                             "points": [[float(v) for v in t.point] for t in found]})
    lengths = [len(t["best_so_far"]) for t in trajectories]
    n = min(lengths) if lengths else 0
    median = [float(np.median([t["best_so_far"][i] for t in trajectories])) for i in range(n)]
    return {"function": function, "method": method, "trials": trials, "seeds": seeds,
            "median_best": median, "trajectories": trajectories}


# ---------------------------------------------------------------------------
# reports


def _load_run(directory) -> dict:
    path = Path(directory) / "summary.json"
    if not path.exists():
        raise MissingReport(f"{directory}: no summary.json")
    summary = json.loads(path.read_text())
    trials = []
    tpath = Path(directory) / "trials.jsonl"
    if tpath.exists():
        trials = [json.loads(line) for line in tpath.read_text().splitlines() if line.strip()]
    return {"summary": summary, "trials": trials, "label": f"{summary['mode']}:{Path(directory).name}"}


def _trial_series(trials: List[dict]) -> List[float]:
    """Mean over expanded tasks of best-so-far validation accuracy, by trial index."""
    by_task: Dict[int, List[float]] = {}
    for rec in trials:
        by_task.setdefault(rec["task"], []).append(rec["accuracy"])
    if not by_task:
        return []
    curves = [list(np.maximum.accumulate(v)) for v in by_task.values()]
    longest = max(len(c) for c in curves)
    padded = [c + [c[-1]] * (longest - len(c)) for c in curves]
    return [float(np.mean([c[i] for c in padded])) for i in range(longest)]


def report(directories) -> dict:
    if not directories:
        raise MissingReport("report needs at least one run directory")
    runs = [_load_run(d) for d in directories]
    tables = {"accuracy_vs_task": {}, "first_task_accuracy": {}, "accuracy_vs_parameters": {},
              "accuracy_vs_trials": {}}
    for r in runs:
        s, label = r["summary"], r["label"]
        acc = s["acc"]
        tables["accuracy_vs_task"][label] = [float(np.mean(row)) for row in acc]
        tables["first_task_accuracy"][label] = [row[0] for row in acc]
        tables["accuracy_vs_parameters"][label] = [
            {"params": p, "accuracy": float(np.mean(row))} for p, row in zip(s["total_params"], acc)
        ]
        tables["accuracy_vs_trials"][label] = _trial_series(r["trials"])
    return tables


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(parser):
    for key, (kind, _) in SCHEMA.items():
        if key == "schema_version":
            continue
        parser.add_argument("--" + key.replace("_", "-"), dest="override_" + key, default=None,
                            help=f"override config key {key!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bocl", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a continual-learning experiment from a config file")
    p_run.add_argument("config")
    _add_config_flags(p_run)

    p_bench = sub.add_parser("bo-bench", help="Bayesian optimization vs random search on a synthetic function")
    p_bench.add_argument("--function", default="branin", choices=sorted(BENCHMARKS))
    p_bench.add_argument("--trials", type=int, default=40)
    p_bench.add_argument("--seeds", type=int, default=10)
    p_bench.add_argument("--method", default="bo", choices=["bo", "random"])
    p_bench.add_argument("--out", default=None, help="output directory (default bo_bench_<function>_<method>)")

    p_report = sub.add_parser("report", help="merge run directories into plot-ready series")
    p_report.add_argument("dirs", nargs="+")
    p_report.add_argument("--out", default=None, help="write the tables to this JSON file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            overrides = {k[len("override_"):]: v for k, v in vars(args).items()
                         if k.startswith("override_") and v is not None}
            cfg = load_config(args.config, overrides)
            summary = run(cfg)
            out = Path(cfg["output_dir"])
            print(f"average accuracy {summary['average_accuracy']:.4f}")
            for name in ("config.json", "trials.jsonl", "summary.json"):
                print(out / name)
        elif args.command == "bo-bench":
            result = bo_bench(args.function, args.trials, args.seeds, args.method)
            out = Path(args.out or f"bo_bench_{args.function}_{args.method}")
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "trajectories.jsonl", "w") as f:
                for t in result["trajectories"]:
                    f.write(json.dumps(t) + "\n")
            summary = {k: v for k, v in result.items() if k != "trajectories"}
            (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
            if summary["median_best"]:
                print(f"median best after {len(summary['median_best'])} trials: {summary['median_best'][-1]:.6f}")
            print(out / "trajectories.jsonl")
            print(out / "summary.json")
        elif args.command == "report":
            tables = report(args.dirs)
            text = json.dumps(tables, indent=2)
            if args.out:
                Path(args.out).write_text(text + "\n")
                print(args.out)
            else:
                print(text)
    except (ConfigError, MissingReport, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
