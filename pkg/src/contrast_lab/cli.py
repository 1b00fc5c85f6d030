"""Command-line front end: ``verify``, ``analyze``, ``train`` and ``compare``.

Every command reads a flat JSON config, fills in defaults, writes the resolved
config next to its results and exits 0 (success), 1 (failed check or runtime
failure) or 2 (usage or config error).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .analysis import (
    PropositionConfig,
    entropy_curve,
    log_grid,
    proposition_report,
    sweep_K,
    sweep_tau,
    write_entropy_csv,
    write_sweep_csv,
)
from .core import (
    ContrastLabError,
    InvalidConfig,
    LabelOutOfRange,
    LogitsRow,
    LossSpec,
    MalformedRecord,
    NonFiniteLoss,
    TemperatureConfig,
    Variant,
)
from .datagen import AugmentConfig, LabeledDataset, cifar_load, load_dataset_cache, synthetic_dataset
from .gradients import FiniteDiffConfig
from .suites import (
    degeneracy_suite,
    gradient_oracle_suite,
    identity_suite,
    monotonicity_suite,
    pipeline_gradient_suite,
)
from .trainer import INBATCH, TrainConfig, train_run

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "CONTRAST_LAB_THREADS"


class ConfigError(Exception):
    pass


# kind tags: f float, i int, b bool, s str, plus "?" for nullable and "[]" for lists
VERIFY_KEYS = {
    "seed": (0, "i"),
    "rel_tol": (1e-5, "f"),
    "abs_tol": (1e-8, "f"),
    "step": (1e-5, "f"),
    "pipeline_rel_tol": (1e-4, "f"),
    "n_identity": (1000, "i"),
    "n_monotone": (100, "i"),
}

ANALYZE_KEYS = {
    "seed": (0, "i"),
    "pos": (1.0, "f"),
    "negs": ([-1.0, -1.0, -1.0, -1.0], "f[]"),
    "tau_lo": (0.01, "f"),
    "tau_hi": (1e4, "f"),
    "n_tau": (33, "i"),
    "K_pos": (0.9, "f"),
    "K_neg": (0.0, "f"),
    "K_tau": (0.1, "f"),
    "K_max_exp": (20, "i"),
}

DATA_KEYS = {
    "dataset": ("synthetic", "s"),
    "C": (10, "i"),
    "per_class": (200, "i"),
    "d": (32, "i"),
    "spread_sigma": (0.1, "f"),
    "data_seed": (0, "i"),
    "cifar_path": (None, "s[]?"),
    "cifar_indices": (None, "i[]?"),
    "cache_path": (None, "s?"),
    "noise_sigma": (0.1, "f"),
    "dropout_prob": (0.0, "f"),
    "aug_seed": (0, "i"),
}

RUN_KEYS = {
    "tau0": (0.1, "f"),
    "alpha": (0.5, "f"),
    "A0": (0.0, "f"),
    "tau_floor_ratio": (0.05, "f"),
    "adaptive": (True, "b"),
    "reweight": (True, "b"),
    "framework": (INBATCH, "s"),
    "queue_size": (256, "i"),
    "momentum": (0.99, "f"),
    "lr": (0.5, "f"),
    "lr_schedule": ("constant", "s"),
    "sgd_momentum": (0.9, "f"),
    "epochs": (30, "i"),
    "eval_k": (200, "i"),
    "m": (16, "i"),
    "hidden": (None, "i?"),
    "eval_subset": (2048, "i"),
}

TRAIN_KEYS = {
    **DATA_KEYS,
    **RUN_KEYS,
    "variant": ("MACL", "s"),
    "batch_size": (64, "i"),
    "seed": (0, "i"),
    "save_params": (False, "b"),
}

COMPARE_KEYS = {
    **DATA_KEYS,
    **RUN_KEYS,
    "variants": (["NTXENT_INBATCH", "DCL", "MACL"], "s[]"),
    "batch_sizes": ([16, 64], "i[]"),
    "seeds": ([0, 1, 2, 3, 4], "i[]"),
}

OUTPUTS = {
    "verify": ("verify_report.json",),
    "analyze": ("sweep_tau.csv", "sweep_K.csv", "entropy.csv", "report.json"),
    "train": ("record.json", "params.bin"),
    "compare": ("compare.csv", "compare_summary.csv"),
}
MANIFEST = "manifest.json"


def _check_value(name, value, kind):
    nullable = kind.endswith("?")
    kind = kind.rstrip("?")
    if value is None:
        if nullable:
            return None
        raise ConfigError(f"{name} may not be null")
    if kind.endswith("[]"):
        item = kind[:-2]
        if item == "s" and isinstance(value, str):
            return value
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        return [_check_value(f"{name}[{i}]", v, item) for i, v in enumerate(value)]
    if kind == "b":
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if kind == "i":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if kind == "f":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


def resolve_config(raw: dict, keys: dict, seed: int | None = None) -> dict:
    """Merge ``raw`` over the defaults; unknown keys and wrong types are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(keys))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for name, (default, kind) in keys.items():
        out[name] = _check_value(name, raw[name], kind) if name in raw else default
    if seed is not None:
        if "seeds" in out:
            out["seeds"] = [seed]
        else:
            out["seed"] = seed
    return out


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _dumps(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("ascii")


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: str
    out: str
    seed: int | None
    timestamp: str

    def to_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "out": self.out,
                "seed": self.seed, "timestamp": self.timestamp}


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch and epoch.isdigit() else int(time.time())
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def prepare_out(out: Path, command: str, force: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if force:
        return
    taken = [n for n in OUTPUTS[command] + (MANIFEST,) if (out / n).exists()]
    if taken:
        raise ConfigError(f"{out} already holds {', '.join(taken)}; pass --force to overwrite")


# ---------------------------------------------------------------- verify


def run_verify(cfg: dict, out: Path) -> int:
    try:
        fd = FiniteDiffConfig(step=cfg["step"], rel_tol=cfg["rel_tol"], abs_tol=cfg["abs_tol"])
        pipe_fd = FiniteDiffConfig(step=cfg["step"], rel_tol=cfg["pipeline_rel_tol"], abs_tol=cfg["abs_tol"])
    except InvalidConfig as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["n_identity"] < 1 or cfg["n_monotone"] < 1:
        raise ConfigError("n_identity and n_monotone must be >= 1")
    seed = cfg["seed"]
    checks = []
    checks += gradient_oracle_suite(seed, fd)
    checks += pipeline_gradient_suite(seed, pipe_fd)
    checks += identity_suite(seed, cfg["n_identity"])
    checks += degeneracy_suite(seed)
    checks += monotonicity_suite(seed, cfg["n_monotone"])
    for entry in proposition_report(PropositionConfig(seed=seed)):
        checks.append({"check": entry["assertion"], "status": entry["status"], "worst": entry["worst_gap"]})
    ok = all(c["status"] == "pass" for c in checks)
    report = {"config": cfg, "checks": checks, "status": "pass" if ok else "fail"}
    (out / "verify_report.json").write_bytes(_dumps(report))
    for c in checks:
        print(f"{c['status'].upper():4}  {c['check']}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- analyze


def run_analyze(cfg: dict, out: Path) -> int:
    if cfg["n_tau"] < 1 or not 0 < cfg["tau_lo"] <= cfg["tau_hi"]:
        raise ConfigError("need n_tau >= 1 and 0 < tau_lo <= tau_hi")
    if not 0 <= cfg["K_max_exp"] <= 24:
        raise ConfigError("K_max_exp must lie in [0, 24]")
    if not cfg["negs"]:
        raise ConfigError("negs must hold at least one similarity")
    row = LogitsRow(cfg["pos"], cfg["negs"])
    grid = log_grid(cfg["tau_lo"], cfg["tau_hi"], cfg["n_tau"]) if cfg["n_tau"] > 1 else np.array([cfg["tau_lo"]])
    K_grid = [2**k for k in range(cfg["K_max_exp"] + 1)]
    try:
        st = sweep_tau(row, grid)
        sk = sweep_K(cfg["K_pos"], cfg["K_neg"], cfg["K_tau"], K_grid)
        axis, ent = entropy_curve(row, grid)
    except ContrastLabError as exc:
        raise ConfigError(str(exc)) from exc
    props = proposition_report(PropositionConfig(seed=cfg["seed"]))

    def summary(res):
        closed = None if res.closed_form is None else float(np.max(np.abs(res.W - res.closed_form)))
        return {"bound": res.bound, "gap_to_bound": res.max_abs_gap_to_bound, "trend": res.trend,
                "max_abs_gap_to_closed_form": closed,
                "complement_strictly_decreasing": bool(np.all(np.diff(res.complement) < 0))}

    write_sweep_csv(st, out / "sweep_tau.csv")
    write_sweep_csv(sk, out / "sweep_K.csv")
    write_entropy_csv(axis, ent, out / "entropy.csv")
    ok = all(p["status"] == "pass" for p in props)
    report = {
        "config": cfg,
        "sweep_tau": summary(st),
        "sweep_K": summary(sk),
        "entropy_nondecreasing": bool(np.all(np.diff(ent) >= -1e-12)),
        "propositions": props,
        "status": "pass" if ok else "fail",
    }
    (out / "report.json").write_bytes(_dumps(report))
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- train / compare


def build_dataset(cfg: dict) -> LabeledDataset:
    kind = cfg["dataset"]
    try:
        if kind == "synthetic":
            return synthetic_dataset(cfg["C"], cfg["per_class"], cfg["d"], cfg["spread_sigma"], cfg["data_seed"])
        if kind == "cifar":
            if cfg["cifar_path"] is None:
                raise ConfigError("dataset 'cifar' needs cifar_path")
            return cifar_load(cfg["cifar_path"], cfg["cifar_indices"])
        if kind == "cache":
            if cfg["cache_path"] is None:
                raise ConfigError("dataset 'cache' needs cache_path")
            return load_dataset_cache(cfg["cache_path"])
    except (FileNotFoundError, MalformedRecord, LabelOutOfRange, InvalidConfig) as exc:
        raise ConfigError(f"cannot build dataset: {exc}") from exc
    raise ConfigError(f"dataset must be synthetic, cifar or cache, got {kind!r}")


def build_run(cfg: dict, variant: str, batch_size: int, seed: int) -> tuple[AugmentConfig, TrainConfig]:
    try:
        temp = TemperatureConfig(cfg["tau0"], cfg["alpha"], cfg["A0"], cfg["tau_floor_ratio"])
        spec = LossSpec(variant, temp, adaptive=cfg["adaptive"], reweight=cfg["reweight"])
        aug = AugmentConfig(cfg["noise_sigma"], cfg["dropout_prob"], cfg["aug_seed"])
        train = TrainConfig(
            spec=spec,
            framework=cfg["framework"],
            batch_size=batch_size,
            queue_size=cfg["queue_size"],
            momentum=cfg["momentum"],
            lr=cfg["lr"],
            lr_schedule=cfg["lr_schedule"],
            sgd_momentum=cfg["sgd_momentum"],
            epochs=cfg["epochs"],
            seed=seed,
            eval_k=cfg["eval_k"],
            m=cfg["m"],
            hidden=cfg["hidden"],
            eval_subset=cfg["eval_subset"],
        )
    except InvalidConfig as exc:
        raise ConfigError(str(exc)) from exc
    return aug, train


def _check_fits(data: LabeledDataset, batch_size: int) -> None:
    if data.n < batch_size:
        raise ConfigError(f"dataset has {data.n} points, fewer than batch_size {batch_size}")


def run_train(cfg: dict, out: Path) -> int:
    data = build_dataset(cfg)
    aug, train = build_run(cfg, cfg["variant"], cfg["batch_size"], cfg["seed"])
    _check_fits(data, train.batch_size)
    try:
        record = train_run(data, aug, train)
    except NonFiniteLoss as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    (out / "record.json").write_bytes(_dumps({"config": cfg, **record.to_dict()}))
    if cfg["save_params"]:
        (out / "params.bin").write_bytes(record.params_bytes())
    return EXIT_OK


COMPARE_COLUMNS = ("variant", "batch_size", "seed", "knn", "alignment", "uniformity", "final_tau")
SUMMARY_COLUMNS = ("variant", "batch_size", "n_seeds", "knn_mean", "alignment_mean", "uniformity_mean",
                   "final_tau_mean")


def _cell(args):
    cfg, variant, batch_size, seed = args
    data = build_dataset(cfg)
    aug, train = build_run(cfg, variant, batch_size, seed)
    try:
        rec = train_run(data, aug, train)
    except NonFiniteLoss as exc:
        return {"error": f"{variant} N={batch_size} seed={seed}: {exc}"}
    if rec.knn_accuracy:
        metrics = (rec.knn_accuracy[-1], rec.alignment_loss[-1], rec.uniformity[-1], rec.tau_used[-1])
    else:
        metrics = (None, None, None, None)
    return {"row": (variant, batch_size, seed) + metrics}


def worker_count(n_tasks: int) -> int:
    """Workers for ``compare``; the environment cap of 0 means run in-process."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if cap < 0:
            raise ConfigError(f"{THREADS_ENV} must be >= 0")
    return min(cap, n_tasks)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_rows(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_bytes(buf.getvalue().encode("ascii"))


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def run_compare(cfg: dict, out: Path) -> int:
    if not cfg["variants"] or not cfg["batch_sizes"] or not cfg["seeds"]:
        raise ConfigError("variants, batch_sizes and seeds must be nonempty")
    for v in cfg["variants"]:
        if v not in Variant.__members__:
            raise ConfigError(f"unknown variant {v!r}")
    data = build_dataset(cfg)
    for N in cfg["batch_sizes"]:
        build_run(cfg, cfg["variants"][0], N, cfg["seeds"][0])
        _check_fits(data, N)
    tasks = [(cfg, v, N, s) for v in cfg["variants"] for N in cfg["batch_sizes"] for s in cfg["seeds"]]

    workers = worker_count(len(tasks))
    if workers <= 1:
        results = [_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell, tasks))  # map keeps config order

    errors = [r["error"] for r in results if "error" in r]
    if errors:
        for e in errors:
            print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_FAIL
    rows = [r["row"] for r in results]
    _write_rows(out / "compare.csv", COMPARE_COLUMNS, rows)

    summary = []
    for v in cfg["variants"]:
        for N in cfg["batch_sizes"]:
            cell = [r for r in rows if r[0] == v and r[1] == N]
            summary.append((v, N, len(cell)) + tuple(_mean([r[i] for r in cell]) for i in range(3, 7)))
    _write_rows(out / "compare_summary.csv", SUMMARY_COLUMNS, summary)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "verify": (VERIFY_KEYS, run_verify),
    "analyze": (ANALYZE_KEYS, run_analyze),
    "train": (TRAIN_KEYS, run_train),
    "compare": (COMPARE_KEYS, run_compare),
}


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contrast-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON config; omit to use the defaults")
        p.add_argument("--out", required=True, help="output directory (created if absent)")
        p.add_argument("--seed", type=_u64, help="override the config seed(s)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    keys, runner = COMMANDS[args.command]
    out = Path(args.out)
    try:
        raw = load_config(args.config) if args.config else {}
        cfg = resolve_config(raw, keys, args.seed)
        prepare_out(out, args.command, args.force)
        code = runner(cfg, out)
        manifest = RunManifest(args.command, args.config or "", str(out), args.seed, _timestamp())
        (out / MANIFEST).write_bytes(_dumps(manifest.to_dict()))
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContrastLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:  # anything unexpected is still a runtime failure
        print(f"unexpected failure: {exc!r}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
