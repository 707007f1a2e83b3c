"""``risklab`` command line: simulate, train, evaluate, sweep.

Exit codes: 0 success, 2 configuration or parse error, 3 I/O error,
4 undefined metric.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _kernels, learner
from .config import RunConfig, apply_preset, load_config
from .dataset import bag_records, read_dataset, write_dataset
from .errors import ConfigError, DatasetParseError, MetricUndefinedError
from .evaluation import (
    _fmt, roc_auc, simulate, sweep, train_stream, write_results, write_summary,
)
from .riskmodel import (
    PackedBags, load_params, oracle_score, packed_bag_risk, save_params, swiss_bag_risk,
    swiss_params,
)

log = logging.getLogger("risklab")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_METRIC = 0, 2, 3, 4
DATASET_NAME = "dataset.jsonl"
MANIFEST_NAME = "manifest.json"
ORACLE_NAME = "oracle.csv"
EVAL_HEADER = ["method", "split", "n_bags", "auc"]


class OutputError(OSError):
    pass


def _resolve(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    return apply_preset(config, getattr(args, "preset", None))


def _seed(args, config: RunConfig) -> int:
    seed = config.seed if args.seed is None else args.seed
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    return seed


def _out_dir(args, config: RunConfig) -> Path:
    out = Path(args.out or config.output_dir or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def _write(path: Path, writer, *payload):
    try:
        writer(*payload, path)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from exc
    log.info("wrote %s", path)


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_oracle(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "oracle_prob"])
        for uid, p in rows:
            w.writerow([uid, repr(float(p))])


def read_oracle(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["user_id", "oracle_prob"]:
            raise DatasetParseError(f"{path}: expected header user_id,oracle_prob", 1)
        out = {}
        for lineno, row in enumerate(reader, 2):
            try:
                out[int(row[0])] = float(row[1])
            except (ValueError, IndexError):
                raise DatasetParseError(f"{path}: malformed row {row}", lineno) from None
        return out


def cmd_simulate(config: RunConfig, seed: int, out: Path) -> dict:
    data = simulate(config.experiment, seed)
    bags = sorted(data.train_bags + data.test_bags, key=lambda b: b.user_id)
    records = bag_records(bags, data.sim, config.experiment.lut)
    _write(out / DATASET_NAME, write_dataset, records)
    _write(out / ORACLE_NAME, _write_oracle, [(b.user_id, oracle_score(b, data.sim)) for b in bags])
    manifest = {
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "seed": seed,
        "lambda": data.sim.lam,
        "n_pool_events": len(data.pool),
        "n_pool_positive": int(data.pool.label.sum()),
        "n_bags": len(bags),
        "train_user_ids": [int(b.user_id) for b in data.train_bags],
        "test_user_ids": [int(b.user_id) for b in data.test_bags],
    }
    _write(out / MANIFEST_NAME, _write_json, manifest)
    return manifest


def _load_manifest(dataset: Path) -> dict:
    path = dataset.parent / MANIFEST_NAME
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: {exc.msg}", exc.lineno) from None


def _read_records(dataset: Path):
    try:
        return read_dataset(dataset)
    except DatasetParseError as exc:
        raise DatasetParseError(f"{dataset}: {exc}") from None
    except OSError as exc:
        raise OSError(f"cannot read dataset {dataset}: {exc.strerror}") from exc


def _split_records(records, ids):
    by_id = {r.user_id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DatasetParseError(f"manifest lists user_ids absent from dataset: {missing[:5]}")
    return [by_id[i] for i in ids]


def cmd_train(dataset: Path, config: RunConfig, seed: int, out: Path) -> learner.TrainResult:
    records = _read_records(dataset)
    manifest_path = dataset.parent / MANIFEST_NAME
    if manifest_path.exists():
        records = _split_records(records, _load_manifest(dataset)["train_user_ids"])
    else:
        log.warning("no %s next to %s; training on every bag", MANIFEST_NAME, dataset)
    result = learner.train(PackedBags.from_records(records), config.experiment.train, train_stream(seed))
    _write(out / "params.json", save_params, result.params)
    _write(out / "loss_trace.csv", learner.write_loss_trace, result)
    return result


def _write_eval(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for method, split_name, n, auc in rows:
            w.writerow([method, split_name, n, _fmt(auc)])


def cmd_evaluate(dataset: Path, params_files, swiss: bool, out: Path) -> list:
    records = _read_records(dataset)
    manifest = _load_manifest(dataset)
    methods = []
    if swiss:
        methods.append(("swiss", lambda p: swiss_bag_risk(p, swiss_params())))
    for path in params_files:
        params = load_params(path)
        name = "learned" if len(params_files) == 1 else f"learned:{path}"
        methods.append((name, lambda p, params=params: packed_bag_risk(p, params)))
    oracle_path = dataset.parent / ORACLE_NAME
    oracle = read_oracle(oracle_path) if oracle_path.exists() else None
    if oracle is not None:
        methods.append(("oracle", lambda p: np.array([oracle[int(u)] for u in p.user_ids])))
    if not methods:
        raise ConfigError("nothing to evaluate: pass --params and/or --preset swiss")

    rows = []
    for split_name in ("train", "test"):
        packed = PackedBags.from_records(_split_records(records, manifest[f"{split_name}_user_ids"]))
        for name, score in methods:
            try:
                auc = roc_auc(score(packed), packed.labels)
            except MetricUndefinedError as exc:
                raise MetricUndefinedError(f"{split_name} split: {exc}") from None
            rows.append((name, split_name, len(packed), auc))
    _write(out / "evaluation.csv", _write_eval, rows)
    return rows


def cmd_sweep(config: RunConfig, seed: int, out: Path):
    spec = config.sweep
    rows, summary = sweep(spec.axis, list(spec.values), config.experiment, spec.n_trials, seed)
    _write(out / "results.csv", write_results, rows)
    _write(out / "summary.csv", write_summary, summary)
    _write(out / MANIFEST_NAME, _write_json,
           {"config_hash": config.config_hash(), "config": config.to_dict(), "seed": seed})
    return rows, summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risklab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, presets):
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="output directory (default: config output_dir or .)")
        if presets:
            p.add_argument("--preset", choices=presets)

    common(sub.add_parser("simulate", help="simulate a pool and write bag dataset + manifest"),
           ["paper-lambda"])
    p = sub.add_parser("train", help="fit risk parameters on the manifest's train split")
    common(p, None)
    p.add_argument("--data", type=Path, required=True, help="dataset.jsonl from simulate")
    p = sub.add_parser("evaluate", help="AUC of learned / Swiss / oracle scores per split")
    common(p, ["swiss"])
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--params", type=Path, nargs="*", default=[], help="params.json file(s)")
    common(sub.add_parser("sweep", help="seeded trials across one experiment axis"),
           ["paper-lambda"])
    return parser


def run(args) -> None:
    config = _resolve(args)
    seed = _seed(args, config)
    out = _out_dir(args, config)
    if args.command == "simulate":
        m = cmd_simulate(config, seed, out)
        print(f"{m['n_bags']} bags from {m['n_pool_events']} pool events -> {out / DATASET_NAME}")
    elif args.command == "train":
        res = cmd_train(args.data, config, seed, out)
        final = f"{res.losses[-1]:.6g}" if len(res.losses) else "n/a"
        print(f"final batch loss {final} -> {out / 'params.json'}")
    elif args.command == "evaluate":
        for method, split_name, n, auc in cmd_evaluate(args.data, args.params,
                                                       args.preset == "swiss", out):
            print(f"{method:>10} {split_name:>5} n={n:<6d} auc={auc:.4f}")
    elif args.command == "sweep":
        _, summary = cmd_sweep(config, seed, out)
        for s in summary:
            if s.split == "test":
                print(f"{s.axis}={s.axis_value} {s.method:>8} {s.mean:.4f} +/- {s.stderr:.4f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", _kernels.BACKEND)
    try:
        run(args)
    except MetricUndefinedError as exc:
        print(f"risklab: undefined metric: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except (ConfigError, DatasetParseError) as exc:
        print(f"risklab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"risklab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
