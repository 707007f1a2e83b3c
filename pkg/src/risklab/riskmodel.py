"""The exposure-notification risk score model evaluated on app-observed features.

Per exposure the app computes ``r = [sum_b tau_b * w_b] * w_con(level)``
where ``tau_b`` is the time spent in attenuation bucket ``b``. Bucket ``b``
covers ``(theta_{b-1}, theta_b]`` with fixed outer boundaries 0 and 100 dB,
and bucket 1 is the lowest-attenuation (closest, riskiest) one. A bag's
risk is the sum over its visible exposures and ``Q = 1 - exp(-mu * R)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, DatasetParseError

ATTEN_MIN = 0.0
ATTEN_MAX = 100.0
N_BUCKETS = 4

LEVEL_NONE = 1
LEVEL_STANDARD = 2
LEVEL_HIGH = 3
LEVEL_NAMES = {LEVEL_NONE: "none", LEVEL_STANDARD: "standard", LEVEL_HIGH: "high"}


class ObservedExposure(NamedTuple):
    tau: float
    attenuation: float
    level: int


@dataclass(frozen=True)
class RiskParams:
    """Thresholds, weights and scale of the app's risk score.

    ``ble_weights[0]`` belongs to the lowest-attenuation bucket.
    ``con_weights`` holds the standard and high level weights; the "none"
    level always has weight 0.
    """

    ble_thresholds: tuple
    ble_weights: tuple
    con_weights: tuple
    mu: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "ble_thresholds", tuple(float(x) for x in self.ble_thresholds))
        object.__setattr__(self, "ble_weights", tuple(float(x) for x in self.ble_weights))
        object.__setattr__(self, "con_weights", tuple(float(x) for x in self.con_weights))
        object.__setattr__(self, "mu", float(self.mu))

    def violations(self) -> list:
        """Return a description of every violated invariant (empty if valid)."""
        out = []
        th, w, c = self.ble_thresholds, self.ble_weights, self.con_weights
        if len(th) != 3:
            out.append(f"ble_thresholds must have 3 entries, got {len(th)}")
        elif not (ATTEN_MIN < th[0] < th[1] < th[2] < ATTEN_MAX):
            out.append(f"ble_thresholds must satisfy 0 < t1 < t2 < t3 < 100, got {list(th)}")
        if len(w) != 4:
            out.append(f"ble_weights must have 4 entries, got {len(w)}")
        else:
            if any(x < 0 for x in w):
                out.append(f"ble_weights must be >= 0, got {list(w)}")
            if any(w[i] < w[i + 1] for i in range(3)):
                out.append(f"ble_weights must be non-increasing in attenuation, got {list(w)}")
        if len(c) != 2:
            out.append(f"con_weights must have 2 entries, got {len(c)}")
        else:
            if any(x < 0 for x in c):
                out.append(f"con_weights must be >= 0, got {list(c)}")
            if c[0] > c[1]:
                out.append(f"con_weights must satisfy standard <= high, got {list(c)}")
        if not (self.mu > 0 and math.isfinite(self.mu)):
            out.append(f"mu must be > 0, got {self.mu}")
        if not all(math.isfinite(x) for x in (*th, *w, *c)):
            out.append("all parameters must be finite")
        return out

    def validate(self) -> "RiskParams":
        bad = self.violations()
        if bad:
            raise ConfigError("invalid RiskParams: " + "; ".join(bad))
        return self

    def boundaries(self) -> np.ndarray:
        return np.array([ATTEN_MIN, *self.ble_thresholds, ATTEN_MAX])

    def level_weights(self) -> np.ndarray:
        """Weights indexed by ``level - 1``."""
        return np.array([0.0, *self.con_weights])

    def to_dict(self) -> dict:
        return {
            "ble_thresholds": list(self.ble_thresholds),
            "ble_weights": list(self.ble_weights),
            "con_weights": list(self.con_weights),
            "mu": self.mu,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RiskParams":
        keys = {"ble_thresholds", "ble_weights", "con_weights", "mu"}
        if not isinstance(data, dict):
            raise ConfigError("RiskParams must be a JSON object")
        unknown = set(data) - keys
        missing = keys - set(data)
        if unknown:
            raise ConfigError(f"unknown RiskParams keys: {sorted(unknown)}")
        if missing:
            raise ConfigError(f"missing RiskParams keys: {sorted(missing)}")
        try:
            return cls(data["ble_thresholds"], data["ble_weights"], data["con_weights"], data["mu"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed RiskParams: {exc}") from exc


def save_params(params: RiskParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


def load_params(path, validate: bool = True) -> RiskParams:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: {exc.msg}", exc.lineno) from exc
    params = RiskParams.from_dict(data)
    return params.validate() if validate else params


@dataclass(frozen=True)
class ContagiousnessLUT:
    """Fixed lookup from integer days since onset in [-14, 14] to a level.

    Non-integer days are rounded; days outside the table are clipped to its
    ends.
    """

    table: dict = field(default_factory=lambda: default_lut_table())

    def __post_init__(self):
        days = set(self.table)
        if days != set(range(-14, 15)):
            raise ConfigError("contagiousness LUT must define every day in [-14, 14]")
        if not set(self.table.values()) <= set(LEVEL_NAMES):
            raise ConfigError("contagiousness LUT levels must be in {1, 2, 3}")

    def __call__(self, sigma):
        days = np.clip(np.rint(np.asarray(sigma, dtype=float)), -14, 14).astype(np.int64)
        lookup = np.array([self.table[d] for d in range(-14, 15)], dtype=np.int64)
        out = lookup[days + 14]
        return int(out) if out.ndim == 0 else out

    @classmethod
    def from_ranges(cls, high: Iterable, standard: Iterable) -> "ContagiousnessLUT":
        """Build from inclusive ``(lo, hi)`` day ranges; everything else is "none"."""
        table = {d: LEVEL_NONE for d in range(-14, 15)}
        for lo, hi in standard:
            for d in range(int(lo), int(hi) + 1):
                table[d] = LEVEL_STANDARD
        for lo, hi in high:
            for d in range(int(lo), int(hi) + 1):
                table[d] = LEVEL_HIGH
        return cls(table)


def default_lut_table() -> dict:
    table = {d: LEVEL_NONE for d in range(-14, 15)}
    for d in list(range(-5, -2)) + list(range(5, 11)):
        table[d] = LEVEL_STANDARD
    for d in range(-2, 5):
        table[d] = LEVEL_HIGH
    return table


def _check_attenuation(a):
    a = np.asarray(a, dtype=float)
    if np.any(~((a > ATTEN_MIN) & (a <= ATTEN_MAX))):
        raise ValueError("attenuation must lie in (0, 100]")
    return a


def bucket_of(attenuation, thresholds: Sequence[float]):
    """1-based bucket index with ``theta_{b-1} < a <= theta_b``."""
    a = _check_attenuation(attenuation)
    b = np.searchsorted(np.asarray(thresholds, dtype=float), a, side="left") + 1
    return int(b) if b.ndim == 0 else b


def bucket_durations(micro_exposures, thresholds: Sequence[float]) -> np.ndarray:
    """Total minutes per attenuation bucket for a list of ``(tau, attenuation)``."""
    out = np.zeros(N_BUCKETS)
    if len(micro_exposures) == 0:
        return out
    taus, attens = np.asarray(micro_exposures, dtype=float).reshape(-1, 2).T
    if np.any(taus < 0):
        raise ValueError("duration must be >= 0")
    np.add.at(out, bucket_of(attens, thresholds) - 1, taus)
    return out


def exposure_risk(obs, params: RiskParams) -> float:
    """Risk score of one exposure.

    ``obs`` is either an :class:`ObservedExposure` or a pair
    ``(micro_exposures, level)`` with ``micro_exposures`` a list of
    ``(tau, attenuation)``.
    """
    if isinstance(obs, ObservedExposure):
        micro, level = [(obs.tau, obs.attenuation)], obs.level
    else:
        micro, level = obs
    minutes = float(bucket_durations(micro, params.ble_thresholds) @ np.asarray(params.ble_weights))
    return minutes * float(params.level_weights()[int(level) - 1])


def bag_risk(observations, params: RiskParams):
    """Return ``(R, Q)`` for a list of visible observed exposures."""
    R = math.fsum(exposure_risk(o, params) for o in observations)
    return R, -math.expm1(-params.mu * R)


def swiss_params(mu: float = 1.0) -> RiskParams:
    """Manually tuned Swiss deployment configuration.

    Two thresholds (53, 60 dB) with weights 1.0 / 0.5 / 0.0; the third
    threshold at 99 dB is inert because both trailing weights are 0.
    Contagiousness is ignored (equal weights).
    """
    return RiskParams((53.0, 60.0, 99.0), (1.0, 0.5, 0.0, 0.0), (1.0, 1.0), mu)


def swiss_bag_risk(packed: "PackedBags", params: RiskParams = None) -> np.ndarray:
    """Bag risk under the Swiss baseline, which gives every exposure the same
    contagiousness weight whatever the days since onset (no LUT)."""
    params = swiss_params() if params is None else params
    constant = replace(packed, level=np.full_like(packed.level, LEVEL_STANDARD))
    return packed_bag_risk(constant, params)


def oracle_score(bag, sim) -> float:
    """True infection probability of a bag from all of its events, hidden ones included."""
    from .simcore import bag_infection_prob

    return bag_infection_prob(bag.events.hazard, sim)


@dataclass
class PackedBags:
    """Observed bags padded to a rectangle for vectorized scoring.

    ``mask`` marks entries that are real and visible.
    """

    user_ids: np.ndarray
    labels: np.ndarray
    tau: np.ndarray
    atten: np.ndarray
    level: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "PackedBags":
        idx = np.asarray(idx)
        return PackedBags(
            self.user_ids[idx], self.labels[idx], self.tau[idx], self.atten[idx],
            self.level[idx], self.mask[idx],
        )

    @classmethod
    def from_records(cls, records) -> "PackedBags":
        """Pack dataset records; each has ``user_id``, ``label`` and ``events``
        of ``(tau, attenuation, level, visible)``."""
        records = list(records)
        J = len(records)
        K = max([len(r.events) for r in records] + [1])
        tau = np.zeros((J, K))
        atten = np.full((J, K), ATTEN_MAX)
        level = np.ones((J, K), dtype=np.int64)
        mask = np.zeros((J, K), dtype=np.bool_)
        for j, rec in enumerate(records):
            n = len(rec.events)
            if n:
                ev = np.asarray(rec.events, dtype=float).reshape(n, 4)
                tau[j, :n] = ev[:, 0]
                atten[j, :n] = ev[:, 1]
                level[j, :n] = ev[:, 2].astype(np.int64)
                mask[j, :n] = ev[:, 3] != 0
        return cls(
            np.array([r.user_id for r in records], dtype=np.int64),
            np.array([r.label for r in records], dtype=np.float64),
            tau, atten, level, mask,
        )


def packed_bag_risk(packed: PackedBags, params: RiskParams) -> np.ndarray:
    """Hard-threshold bag risk ``R_j`` for every packed bag."""
    return _kernels.hard_bag_risk(
        packed.tau, packed.atten, packed.level, packed.mask,
        params.boundaries(), np.asarray(params.ble_weights), params.level_weights(),
    )
