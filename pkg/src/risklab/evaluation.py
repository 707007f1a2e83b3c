"""Trials and sweeps: simulate, fit, and compare learned/Swiss/oracle AUCs."""

from __future__ import annotations

import csv
import functools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import learner, poolsim
from .dataset import bag_records
from .errors import ConfigError, MetricUndefinedError
from .poolsim import BagConfig, GridSpec, Scenario
from .riskmodel import (
    ContagiousnessLUT, PackedBags, oracle_score, packed_bag_risk, swiss_bag_risk, swiss_params,
)
from .simcore import SimParams

METHODS = ("learned", "swiss", "oracle")
SPLITS = ("train", "test")
AXES = ("bag_size", "censor_prob", "taylor_terms")
DEFAULT_AXIS_VALUES = {
    "bag_size": [4, 8, 16, 32],
    "censor_prob": [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
    "taylor_terms": [2, 4, 6, 8],
}
RESULTS_HEADER = ["axis", "axis_value", "trial_seed", "method", "split", "auc"]
SUMMARY_HEADER = ["axis", "axis_value", "method", "split", "n_trials", "mean", "stderr"]


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as the normalized Mann-Whitney U statistic.

    Ties between a positive and a negative count one half.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run one seeded trial.

    ``sim.lam`` of ``None`` means: calibrate the dose-response rate on the
    grid so that the expected event positive rate is ``target_positive_rate``.
    """

    sim: SimParams = field(default_factory=lambda: SimParams(lam=None))
    grid: GridSpec = poolsim.DESK_GRID
    bags: BagConfig = field(default_factory=BagConfig)
    train: learner.TrainConfig = field(default_factory=learner.TrainConfig)
    lut: ContagiousnessLUT = field(default_factory=ContagiousnessLUT)
    target_positive_rate: float = 0.03

    def resolved_sim(self) -> SimParams:
        if self.sim.lam is not None:
            return self.sim
        lam = _calibrated_lambda(self.grid, replace(self.sim, lam=0.0, taylor_terms=None),
                                 self.target_positive_rate)
        return replace(self.sim, lam=lam)


@functools.lru_cache(maxsize=64)
def _calibrated_lambda(grid, sim, target):
    return poolsim.calibrate_lambda(grid, sim, target)


@dataclass(frozen=True)
class TrialResult:
    trial_seed: int
    max_bag_size: int
    censor_prob: float
    scenario: str
    taylor_terms: Optional[int]
    method: str
    split: str
    auc: float


@dataclass
class TrialData:
    """Intermediate products of a trial, kept for inspection."""

    sim: SimParams
    pool: poolsim.ExposureEvents
    train_bags: list
    test_bags: list
    train_packed: PackedBags
    test_packed: PackedBags


def simulate(config: ExperimentConfig, seed: int) -> TrialData:
    streams = np.random.SeedSequence(seed).spawn(5)
    sim = config.resolved_sim()
    pool = poolsim.build_pool(config.grid, sim, np.random.default_rng(streams[0]))
    bags = poolsim.assemble_bags(pool, config.bags.n_users, config.bags, np.random.default_rng(streams[1]))
    bags = poolsim.apply_censoring(bags, config.bags, np.random.default_rng(streams[2]))
    train_bags, test_bags = poolsim.split(bags, config.bags.train_frac, np.random.default_rng(streams[3]))
    return TrialData(
        sim, pool, train_bags, test_bags,
        PackedBags.from_records(bag_records(train_bags, sim, config.lut)),
        PackedBags.from_records(bag_records(test_bags, sim, config.lut)),
    )


def train_stream(seed: int):
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(5)[4])


def run_trial(config: ExperimentConfig, seed: int) -> list:
    """Six AUC rows: (learned, swiss, oracle) x (train, test)."""
    data = simulate(config, seed)
    fit = learner.train(data.train_packed, config.train, train_stream(seed))
    swiss = swiss_params()
    rows = []
    for split_name, bags, packed in (
        ("train", data.train_bags, data.train_packed),
        ("test", data.test_bags, data.test_packed),
    ):
        scores = {
            "learned": packed_bag_risk(packed, fit.params),
            "swiss": swiss_bag_risk(packed, swiss),
            "oracle": np.array([oracle_score(b, data.sim) for b in bags]),
        }
        for method in METHODS:
            rows.append(
                TrialResult(
                    seed, config.bags.max_bag_size, config.bags.censor_prob,
                    config.bags.positive_scenario.value, config.sim.taylor_terms,
                    method, split_name, roc_auc(scores[method], packed.labels),
                )
            )
    return rows


def mismatch_config(config: ExperimentConfig, taylor_terms: int) -> ExperimentConfig:
    """Taylor-series simulator on a fixed setup: bag size 4, 1-3 positives, no censoring."""
    if int(taylor_terms) != taylor_terms or taylor_terms < 1:
        raise ConfigError(f"taylor_terms must be a positive integer, got {taylor_terms!r}")
    bags = replace(config.bags, max_bag_size=4, positive_scenario=Scenario.UNIFORM_ONE_TO_THREE,
                   censor_prob=0.0)
    return replace(config, sim=replace(config.sim, taylor_terms=int(taylor_terms)), bags=bags)


def mismatch_trial(taylor_terms: int, config: ExperimentConfig, seed: int) -> list:
    return run_trial(mismatch_config(config, taylor_terms), seed)


def axis_config(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "bag_size":
        return replace(config, bags=replace(config.bags, max_bag_size=int(value)))
    if axis == "censor_prob":
        return replace(config, bags=replace(config.bags, censor_prob=float(value)))
    if axis == "taylor_terms":
        return mismatch_config(config, value)
    raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {list(AXES)}")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    axis_value: object
    trial_seed: int
    method: str
    split: str
    auc: float


@dataclass(frozen=True)
class SummaryRow:
    axis: str
    axis_value: object
    method: str
    split: str
    n_trials: int
    mean: float
    stderr: float


def worker_count() -> int:
    raw = os.environ.get("RISKLAB_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"RISKLAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _run_task(task):
    config, seed = task
    return run_trial(config, seed)


def sweep(axis: str, values: Sequence, config: ExperimentConfig, n_trials: int = 5,
          base_seed: int = 0, workers: Optional[int] = None):
    """Run ``n_trials`` seeded trials per axis value.

    Trial ``i`` uses seed ``base_seed + i`` at every axis value. Returns
    ``(rows, summary)`` in deterministic (value, trial, method, split) order.
    """
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    if n_trials < 1:
        raise ConfigError("sweep.n_trials must be >= 1")
    tasks = [(axis_config(config, axis, v), base_seed + i) for v in values for i in range(n_trials)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
            results = list(ex.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    task_values = [v for v in values for _ in range(n_trials)]
    rows = []
    for v, (_, seed), trial_rows in zip(task_values, tasks, results):
        for r in trial_rows:
            rows.append(SweepRow(axis, v, seed, r.method, r.split, r.auc))
    return rows, summarize(rows)


def summarize(rows) -> list:
    """Mean and standard error (sample std / sqrt(n)) per (value, method, split)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.axis, r.axis_value, r.method, r.split), []).append(r.auc)
    out = []
    for (axis, value, method, split_name), aucs in groups.items():
        a = np.asarray(aucs, dtype=float)
        se = float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0
        out.append(SummaryRow(axis, value, method, split_name, len(a), float(a.mean()), se))
    return out


def summary_lookup(summary, method, split_name="test"):
    """``{axis_value: (mean, stderr)}`` for one method and split."""
    return {s.axis_value: (s.mean, s.stderr) for s in summary if s.method == method and s.split == split_name}


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_results(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow([r.axis, _fmt(r.axis_value), r.trial_seed, r.method, r.split, _fmt(r.auc)])


def write_summary(summary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([s.axis, _fmt(s.axis_value), s.method, s.split, s.n_trials, _fmt(s.mean), _fmt(s.stderr)])


def _parse_value(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_results(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RESULTS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [
            SweepRow(a, _parse_value(v), int(s), m, sp, float(auc)) for a, v, s, m, sp, auc in reader
        ]


def read_summary(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [
            SummaryRow(a, _parse_value(v), m, sp, int(n), float(mean), float(se))
            for a, v, m, sp, n, mean, se in reader
        ]
