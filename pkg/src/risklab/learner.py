"""Fit risk score parameters to bag-labelled data.

The objective is the mean binary cross entropy between bag labels and
``Q = 1 - exp(-mu * R)``, with hard attenuation bucketing replaced by
products of sigmoids whose temperature is ramped up during training.
Monotonicity of the weights is enforced by optimizing non-negative
increments and projecting after every SGD step.

Optimization happens on a normalized vector (thresholds divided by 100):

    [theta1, theta2, theta3] / 100, w1, d2, d3, d4, con_base, con_delta, mu

where ``w1`` is the weight of the least risky (highest attenuation) bucket
and each ``d`` is the increment to the next riskier bucket.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigError
from .riskmodel import ATTEN_MAX, ATTEN_MIN, PackedBags, RiskParams

log = logging.getLogger(__name__)

EPS = 1e-6
MIN_GAP = 0.5
MU_FLOOR = 1e-9
PROB_CLAMP = 1e-12
THETA_SCALE = 100.0
N_PARAMS = 10


@dataclass(frozen=True)
class LearnableParams:
    theta: tuple
    w1: float
    deltas_ble: tuple
    con_base: float
    delta_con: float
    mu: float

    def ble_weights(self) -> np.ndarray:
        """Bucket weights in attenuation order (bucket 1 = lowest attenuation)."""
        d2, d3, d4 = self.deltas_ble
        return np.array([self.w1 + d2 + d3 + d4, self.w1 + d2 + d3, self.w1 + d2, self.w1])

    def level_weights(self) -> np.ndarray:
        return np.array([0.0, self.con_base, self.con_base + self.delta_con])

    def bounds(self) -> np.ndarray:
        return np.array([ATTEN_MIN, *self.theta, ATTEN_MAX])

    def to_vector(self) -> np.ndarray:
        return np.array(
            [*(np.asarray(self.theta) / THETA_SCALE), self.w1, *self.deltas_ble,
             self.con_base, self.delta_con, self.mu],
            dtype=float,
        )

    @classmethod
    def from_vector(cls, z) -> "LearnableParams":
        z = np.asarray(z, dtype=float)
        return cls(
            tuple(float(t) for t in z[0:3] * THETA_SCALE), float(z[3]), tuple(float(d) for d in z[4:7]),
            float(z[7]), float(z[8]), float(z[9]),
        )

    def to_risk_params(self) -> RiskParams:
        return RiskParams(self.theta, tuple(self.ble_weights()), tuple(self.level_weights()[1:]), self.mu)


def _project_thresholds(theta):
    t = np.sort(np.asarray(theta, dtype=float))
    lo, hi = ATTEN_MIN + MIN_GAP, ATTEN_MAX - MIN_GAP
    t[0] = min(max(t[0], lo), hi - 2 * MIN_GAP)
    for i in (1, 2):
        t[i] = max(t[i], t[i - 1] + MIN_GAP)
    if t[2] > hi:
        t[2] = hi
        for i in (1, 0):
            t[i] = min(t[i], t[i + 1] - MIN_GAP)
    return t


def project_vector(z) -> np.ndarray:
    z = np.array(z, dtype=float)
    theta = z[0:3] * THETA_SCALE
    fixed = _project_thresholds(theta)
    if not np.array_equal(fixed, theta):  # leave feasible thresholds bit-identical
        z[0:3] = fixed / THETA_SCALE
    z[3] = max(z[3], 0.0)
    z[4:7] = np.maximum(z[4:7], EPS)
    z[7] = max(z[7], 0.0)
    z[8] = max(z[8], EPS)
    z[9] = max(z[9], MU_FLOOR)
    return z


def project(params: LearnableParams) -> LearnableParams:
    """Closest feasible point: positive increments, ordered gap-separated thresholds."""
    theta = np.asarray(params.theta, dtype=float)
    fixed = _project_thresholds(theta)
    z = project_vector(params.to_vector())
    return LearnableParams(
        tuple(float(t) for t in (theta if np.array_equal(fixed, theta) else fixed)),
        float(z[3]), tuple(float(d) for d in z[4:7]), float(z[7]), float(z[8]), float(z[9]),
    )


def soft_bucket_durations(micro_exposures, thresholds, temperature: float) -> np.ndarray:
    """Sigmoid-relaxed minutes per bucket for ``(tau, attenuation)`` pairs."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    out = np.zeros(4)
    if len(micro_exposures) == 0:
        return out
    taus, attens = np.asarray(micro_exposures, dtype=float).reshape(-1, 2).T
    bounds = np.array([ATTEN_MIN, *thresholds, ATTEN_MAX])
    return taus @ _kernels.soft_bucket_mass(attens, bounds, temperature)


def _pack_one(observations, label):
    n = len(observations)
    K = max(n, 1)
    tau = np.zeros((1, K))
    atten = np.full((1, K), ATTEN_MAX)
    level = np.ones((1, K), dtype=np.int64)
    mask = np.zeros((1, K), dtype=np.bool_)
    for k, o in enumerate(observations):
        tau[0, k], atten[0, k], level[0, k], mask[0, k] = o.tau, o.attenuation, o.level, True
    return PackedBags(np.zeros(1, dtype=np.int64), np.array([float(label)]), tau, atten, level, mask)


def _batch_loss_grad(packed: PackedBags, params: LearnableParams, temperature):
    # temperature=inf switches to hard bucketing (loss only, no gradient)
    if math.isinf(temperature):
        R = _kernels.hard_bag_risk(
            packed.tau, packed.atten, packed.level, packed.mask,
            params.bounds(), params.ble_weights(), params.level_weights(),
        )
        return _bce(R * params.mu, packed.labels).mean(), None
    loss, g_theta, g_w, g_con, g_mu = _kernels.loss_grad(
        packed.tau, packed.atten, packed.level, packed.mask, packed.labels,
        params.bounds(), params.ble_weights(), params.level_weights(),
        params.mu, float(temperature), PROB_CLAMP,
    )
    g = np.empty(N_PARAMS)
    g[0:3] = np.asarray(g_theta) * THETA_SCALE
    g[3] = g_w.sum()
    g[4] = g_w[:3].sum()
    g[5] = g_w[:2].sum()
    g[6] = g_w[0]
    g[7] = g_con[1] + g_con[2]
    g[8] = g_con[2]
    g[9] = g_mu
    return loss, g


def _bce(x, y):
    """Clamped BCE of ``Q = 1 - exp(-x)`` against labels ``y``."""
    q = np.clip(-np.expm1(-np.asarray(x, dtype=float)), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(q) + (1.0 - y) * np.log1p(-q))


def bag_loss(observations, label, params: LearnableParams, temperature: float) -> float:
    """BCE of one bag; ``temperature=math.inf`` uses hard bucketing."""
    return float(_batch_loss_grad(_pack_one(observations, label), params, temperature)[0])


def gradient(batch: PackedBags, params: LearnableParams, temperature: float):
    """Mean batch loss and its gradient in normalized coordinates (see module doc)."""
    return _batch_loss_grad(batch, params, temperature)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 100
    learning_rate: float = 0.01
    t_start: float = 0.2
    t_end: float = 20.0
    ramp: str = "geometric"
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ConfigError(f"train.iterations must be a non-negative integer, got {self.iterations!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be a positive integer, got {self.batch_size!r}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"train.learning_rate must be >= 0, got {self.learning_rate!r}")
        if not 0 < self.t_start <= self.t_end:
            raise ConfigError(f"train temperatures must satisfy 0 < t_start <= t_end, got {self.t_start}, {self.t_end}")
        if self.ramp not in ("geometric", "linear", "constant"):
            raise ConfigError(f"train.ramp must be geometric, linear or constant, got {self.ramp!r}")


def temperature_schedule(config: TrainConfig) -> np.ndarray:
    n = config.iterations
    if n == 0:
        return np.zeros(0)
    if config.ramp == "constant" or n == 1:
        return np.full(n, float(config.t_start))
    frac = np.arange(n) / (n - 1)
    if config.ramp == "linear":
        return config.t_start + frac * (config.t_end - config.t_start)
    return config.t_start * (config.t_end / config.t_start) ** frac


def initial_params(train: PackedBags) -> LearnableParams:
    visible = train.atten[train.mask]
    if visible.size:
        theta = np.percentile(visible, [25, 50, 75])
    else:
        theta = np.array([25.0, 50.0, 75.0])
    return project(LearnableParams(tuple(theta), 0.1, (0.1, 0.1, 0.1), 0.5, 0.5, 0.01))


def _initial_risk(packed: PackedBags, params: LearnableParams):
    return _kernels.hard_bag_risk(
        packed.tau, packed.atten, packed.level, packed.mask,
        params.bounds(), params.ble_weights(), params.level_weights(),
    )


@dataclass
class TrainResult:
    params: RiskParams
    learnable: LearnableParams
    initial: LearnableParams
    temperatures: np.ndarray = field(repr=False)
    losses: np.ndarray = field(repr=False)


def train(train_bags: PackedBags, config: TrainConfig, rng=None) -> TrainResult:
    """Projected minibatch SGD with an annealed soft-binning temperature."""
    if len(train_bags) == 0:
        raise ConfigError("training set is empty")
    rng = np.random.default_rng(config.rng_seed if rng is None else rng)
    init = initial_params(train_bags)
    z = init.to_vector()
    # mu is stepped on the scale mu * R_ref, R_ref = mean initial bag risk
    r_ref = max(float(np.mean(_initial_risk(train_bags, init))), 1e-12)
    precond = np.ones(N_PARAMS)
    precond[9] = 1.0 / (r_ref * r_ref)
    temps = temperature_schedule(config)
    losses = np.empty(len(temps))
    n = len(train_bags)
    bs = min(config.batch_size, n)
    for i, t in enumerate(temps):
        idx = rng.choice(n, size=bs, replace=False)
        loss, g = gradient(train_bags.subset(np.sort(idx)), LearnableParams.from_vector(z), t)
        losses[i] = loss
        if config.learning_rate > 0:
            z = project_vector(z - config.learning_rate * precond * g)
    final = LearnableParams.from_vector(z)
    return TrainResult(final.to_risk_params(), final, init, temps, losses)


def write_loss_trace(result: TrainResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "temperature", "batch_loss"])
        for i, (t, l) in enumerate(zip(result.temperatures, result.losses)):
            w.writerow([i, repr(float(t)), repr(float(l))])


def read_loss_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (
        np.array([int(r["iteration"]) for r in rows], dtype=np.int64),
        np.array([float(r["temperature"]) for r in rows]),
        np.array([float(r["batch_loss"]) for r in rows]),
    )
