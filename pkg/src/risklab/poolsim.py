"""Exposure pool, bag assembly and censoring.

A pool is the Cartesian grid of (distance, duration, onset) events, each with
its hazard and one Bernoulli infection label. Users receive bags of pool
events: negative bags hold negative events only, positive bags hold one or
more positive events plus negative filler. Censoring hides positive events
from the app while leaving the bag label untouched.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize, stats

from . import simcore
from .errors import ConfigError
from .riskmodel import ATTEN_MAX, ContagiousnessLUT, ObservedExposure
from .simcore import SimParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    n_dist: int = 80
    d_range: tuple = (0.1, 5.0)
    n_dur: int = 20
    dur_range: tuple = (5.0, 60.0)
    n_onset: int = 21
    onset_range: tuple = (-10.0, 10.0)

    def __post_init__(self):
        for n, (lo, hi), name in (
            (self.n_dist, self.d_range, "dist"),
            (self.n_dur, self.dur_range, "dur"),
            (self.n_onset, self.onset_range, "onset"),
        ):
            if int(n) != n or n < 1:
                raise ConfigError(f"grid.n_{name} must be a positive integer, got {n!r}")
            if n > 1 and not lo < hi:
                raise ConfigError(f"grid range for {name} is degenerate: {(lo, hi)}")
        if not self.d_range[0] > 0:
            raise ConfigError(f"grid.d_range must be positive, got {self.d_range}")
        if self.dur_range[0] < 0:
            raise ConfigError(f"grid.dur_range must be non-negative, got {self.dur_range}")

    @property
    def size(self) -> int:
        return self.n_dist * self.n_dur * self.n_onset

    def axes(self):
        return (
            np.linspace(*self.d_range, self.n_dist),
            np.linspace(*self.dur_range, self.n_dur),
            np.linspace(*self.onset_range, self.n_onset),
        )


FULL_GRID = GridSpec()
DESK_GRID = GridSpec(n_dist=20, n_dur=10)


class ExposureEvent(NamedTuple):
    tau: float
    d: float
    sigma: float
    hazard: float
    label: int


@dataclass
class ExposureEvents:
    """Ground-truth events stored column-wise. Indexing with an int yields an
    :class:`ExposureEvent`, with an array yields a sub-collection."""

    tau: np.ndarray
    d: np.ndarray
    sigma: np.ndarray
    hazard: np.ndarray
    label: np.ndarray

    def __len__(self):
        return len(self.tau)

    def __getitem__(self, idx):
        if np.ndim(idx) == 0 and not isinstance(idx, slice):
            i = int(idx)
            return ExposureEvent(
                float(self.tau[i]), float(self.d[i]), float(self.sigma[i]),
                float(self.hazard[i]), int(self.label[i]),
            )
        return ExposureEvents(
            self.tau[idx], self.d[idx], self.sigma[idx], self.hazard[idx], self.label[idx]
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def positive_rate(self) -> float:
        return float(self.label.mean()) if len(self) else 0.0


def grid_hazards(grid: GridSpec, params: SimParams):
    d, tau, sigma = (a.ravel() for a in np.meshgrid(*grid.axes(), indexing="ij"))
    return tau, d, sigma, np.asarray(simcore.hazard(tau, d, sigma, params), dtype=float)


def build_pool(grid: GridSpec, params: SimParams, rng) -> ExposureEvents:
    """Grid of events with labels drawn from the dose response."""
    if grid.size < 1:
        raise ConfigError("exposure grid is empty")
    rng = np.random.default_rng(rng)
    tau, d, sigma, h = grid_hazards(grid, params)
    p = np.asarray(simcore.infection_prob(h, params), dtype=float)
    label = (rng.random(p.shape) < p).astype(np.int8)
    return ExposureEvents(tau, d, sigma, h, label)


def calibrate_lambda(grid: GridSpec, params: SimParams, target_rate: float = 0.03) -> float:
    """Dose-response rate giving an expected event positive rate of ``target_rate``.

    Solved with the exact exponential model on the pool's hazards.
    """
    if not 0.0 < target_rate < 1.0:
        raise ConfigError(f"target_positive_rate must lie in (0, 1), got {target_rate}")
    h = grid_hazards(grid, params)[3]
    if target_rate >= np.mean(h > 0):
        raise ConfigError("target_positive_rate exceeds the fraction of events with nonzero hazard")

    def rate_gap(lam):
        return float(np.mean(-np.expm1(-lam * h))) - target_rate

    hi = 1.0 / max(float(h.mean()), 1e-300)
    while rate_gap(hi) < 0:
        hi *= 2.0
    return float(optimize.brentq(rate_gap, 0.0, hi, xtol=1e-15, rtol=1e-12))


class Scenario(str, enum.Enum):
    EXACTLY_ONE = "ExactlyOne"
    UNIFORM_ONE_TO_THREE = "UniformOneToThree"

    @property
    def max_positives(self) -> int:
        return 1 if self is Scenario.EXACTLY_ONE else 3


@dataclass(frozen=True)
class BagConfig:
    max_bag_size: int = 4
    nb_p: float = 0.2
    nb_r: float = 1.0
    positive_scenario: Scenario = Scenario.UNIFORM_ONE_TO_THREE
    censor_prob: float = 0.0
    train_frac: float = 0.8
    positive_frac: float = 0.5
    n_users: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "positive_scenario", _scenario(self.positive_scenario))
        if int(self.max_bag_size) != self.max_bag_size or self.max_bag_size < 1:
            raise ConfigError(f"bags.max_bag_size must be a positive integer, got {self.max_bag_size!r}")
        if not 0.0 < self.nb_p < 1.0:
            raise ConfigError(f"bags.nb_p must lie in (0, 1), got {self.nb_p!r}")
        if not self.nb_r > 0:
            raise ConfigError(f"bags.nb_r must be > 0, got {self.nb_r!r}")
        if not 0.0 <= self.censor_prob <= 1.0:
            raise ConfigError(f"bags.censor_prob must lie in [0, 1], got {self.censor_prob!r}")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError(f"bags.train_frac must lie in (0, 1), got {self.train_frac!r}")
        if not 0.0 <= self.positive_frac <= 1.0:
            raise ConfigError(f"bags.positive_frac must lie in [0, 1], got {self.positive_frac!r}")
        if int(self.n_users) != self.n_users or self.n_users < 1:
            raise ConfigError(f"bags.n_users must be a positive integer, got {self.n_users!r}")

    def with_(self, **changes) -> "BagConfig":
        return replace(self, **changes)


def _scenario(value) -> Scenario:
    try:
        return Scenario(value)
    except ValueError:
        names = [s.value for s in Scenario]
        raise ConfigError(f"bags.positive_scenario must be one of {names}, got {value!r}") from None


@dataclass
class Bag:
    """One user's exposures. ``visible`` is parallel to ``events``."""

    user_id: int
    events: ExposureEvents
    visible: np.ndarray
    label: int
    pool_index: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.events)


def bag_size_pmf(config: BagConfig) -> np.ndarray:
    """Probabilities of sizes ``1..max_bag_size`` under the truncated negative binomial."""
    k = np.arange(1, config.max_bag_size + 1)
    pmf = stats.nbinom.pmf(k, config.nb_r, config.nb_p)
    return pmf / pmf.sum()


def sample_bag_sizes(config: BagConfig, rng, size=None):
    rng = np.random.default_rng(rng)
    pmf = bag_size_pmf(config)
    return rng.choice(np.arange(1, config.max_bag_size + 1), size=size, p=pmf)


def sample_bag_size(config: BagConfig, rng) -> int:
    return int(sample_bag_sizes(config, rng))


def assemble_bags(pool: ExposureEvents, n_users: int, config: BagConfig, rng) -> list:
    """Draw one bag per user from the pool.

    Each bag is positive with probability ``positive_frac``. Positive bags
    get 1 (or 1-3 uniformly) distinct positive events, capped at the bag
    size, and the remaining slots are filled with distinct negatives.
    Events may be shared between users.
    """
    rng = np.random.default_rng(rng)
    pos_idx = np.flatnonzero(pool.label == 1)
    neg_idx = np.flatnonzero(pool.label == 0)
    need_pos = min(config.positive_scenario.max_positives, config.max_bag_size)
    if config.positive_frac > 0 and len(pos_idx) < need_pos:
        raise ConfigError(
            f"pool has {len(pos_idx)} positive events; at least {need_pos} required "
            f"(scenario {config.positive_scenario.value}); raise sim.lambda or the grid size"
        )
    if len(neg_idx) < config.max_bag_size:
        raise ConfigError(
            f"pool has {len(neg_idx)} negative events; at least {config.max_bag_size} required"
        )
    sizes = sample_bag_sizes(config, rng, size=n_users)
    is_pos = rng.random(n_users) < config.positive_frac
    if config.positive_scenario is Scenario.EXACTLY_ONE:
        n_pos = np.ones(n_users, dtype=np.int64)
    else:
        n_pos = rng.integers(1, 4, size=n_users)
    n_pos = np.where(is_pos, np.minimum(n_pos, sizes), 0)

    bags = []
    for j in range(n_users):
        picks = [rng.choice(neg_idx, sizes[j] - n_pos[j], replace=False)]
        if n_pos[j]:
            picks.append(rng.choice(pos_idx, n_pos[j], replace=False))
        idx = rng.permutation(np.concatenate(picks))
        bags.append(
            Bag(
                user_id=j,
                events=pool[idx],
                visible=np.ones(len(idx), dtype=bool),
                label=int(n_pos[j] > 0),
                pool_index=idx,
            )
        )
    return bags


def apply_censoring(bags, config: BagConfig, rng) -> list:
    """Hide each positive event independently with probability ``censor_prob``."""
    rng = np.random.default_rng(rng)
    out = []
    for bag in bags:
        hide = (bag.events.label == 1) & (rng.random(len(bag)) < config.censor_prob)
        out.append(replace(bag, visible=bag.visible & ~hide))
    return out


def observed_attenuation(d, params: SimParams):
    """Attenuation for distances, clamped to the risk model's 100 dB ceiling."""
    a = np.atleast_1d(np.asarray(simcore.distance_to_attenuation(d, params), dtype=float))
    over = a > ATTEN_MAX
    if over.any():
        log.warning("clamped %d attenuation value(s) above %g dB", int(over.sum()), ATTEN_MAX)
        a = np.minimum(a, ATTEN_MAX)
    return a


def observe(bag: Bag, params: SimParams, lut: ContagiousnessLUT) -> list:
    """App-visible features of the bag's visible events."""
    ev = bag.events[np.flatnonzero(bag.visible)]
    if len(ev) == 0:
        return []
    atten = observed_attenuation(ev.d, params)
    levels = np.atleast_1d(lut(ev.sigma))
    return [
        ObservedExposure(float(t), float(a), int(c)) for t, a, c in zip(ev.tau, atten, levels)
    ]


def split(bags, train_frac: float, rng):
    """Random train/test partition of ``floor(J * train_frac)`` / remainder bags."""
    if not 0.0 < train_frac < 1.0:
        raise ConfigError(f"train_frac must lie in (0, 1), got {train_frac!r}")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(len(bags))
    # guard against products like 0.29 * 100 = 28.999...
    n_train = math.floor(len(bags) * train_frac + 1e-9)
    return [bags[i] for i in np.sort(perm[:n_train])], [bags[i] for i in np.sort(perm[n_train:])]
