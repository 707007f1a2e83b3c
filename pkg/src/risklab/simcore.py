"""Biophysical transmission model used to generate synthetic exposure outcomes.

An exposure with duration ``tau`` (minutes), distance ``d`` (meters) and
days since the index case's symptom onset ``sigma`` gets the hazard score

    s = tau * f_dist(d) * f_inf(sigma)

which the exponential dose response turns into an infection probability
``1 - exp(-lambda * s)``. Bluetooth attenuation is the deterministic mean of
a log-normal forward model, ``exp(offset) * d ** slope``.

All functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from .errors import ConfigError

REFERENCE_LAMBDA = 3.1e-6


@dataclass(frozen=True)
class SimParams:
    """Simulator constants.

    ``inf_tau`` is carried for completeness but does not enter ``f_inf``.
    ``taylor_terms`` switches the dose response to a truncated Taylor series
    of the exponential with that many terms.
    """

    lam: Optional[float] = REFERENCE_LAMBDA
    d_min_sq: float = 1.0
    inf_loc: float = -4.0
    inf_scale: float = 1.85
    inf_shape: float = 5.85
    inf_tau: float = 5.42
    ble_offset: float = 3.92
    ble_slope: float = 0.21
    p0: float = 0.0
    taylor_terms: Optional[int] = None

    def __post_init__(self):
        for name in ("d_min_sq", "inf_scale", "inf_shape"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"sim.{name} must be > 0, got {getattr(self, name)!r}")
        # lam == 0 gives label-free pools; None defers to calibration on a grid
        if self.lam is not None and not self.lam >= 0:
            raise ConfigError(f"sim.lambda must be >= 0, got {self.lam!r}")
        if not 0.0 <= self.p0 <= 1.0:
            raise ConfigError(f"sim.p0 must lie in [0, 1], got {self.p0!r}")
        if self.taylor_terms is not None:
            if int(self.taylor_terms) != self.taylor_terms or self.taylor_terms < 1:
                raise ConfigError(
                    f"sim.taylor_terms must be a positive integer, got {self.taylor_terms!r}"
                )

    def with_(self, **changes) -> "SimParams":
        return replace(self, **changes)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _check_positive(x, what):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError(f"{what} must be > 0")
    return x


def _maybe_scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def f_dist(d, params: SimParams):
    """Truncated inverse-square distance factor ``min(1, D_min^2 / d^2)``."""
    d = _check_positive(d, "distance")
    return _maybe_scalar(np.minimum(1.0, params.d_min_sq / (d * d)))


def _log_genlogistic(sigma, params: SimParams):
    # log of exp(-z) * (1 + exp(-z)) ** -(alpha + 1), up to the 1/scale constant
    z = (np.asarray(sigma, dtype=float) - params.inf_loc) / params.inf_scale
    return -z - (params.inf_shape + 1.0) * np.logaddexp(0.0, -z)


def infectiousness_mode(params: SimParams) -> float:
    """Days since onset at which ``f_inf`` peaks."""
    return params.inf_loc + params.inf_scale * math.log(params.inf_shape)


def f_inf(sigma, params: SimParams):
    """Skew-logistic infectiousness profile scaled to a peak value of 1.

    Uses the type-I generalized logistic density in days since symptom
    onset (negative before onset). The peak sits at
    ``inf_loc + inf_scale * log(inf_shape)``.
    """
    peak = _log_genlogistic(infectiousness_mode(params), params)
    return _maybe_scalar(np.exp(_log_genlogistic(sigma, params) - peak))


def hazard(tau, d, sigma, params: SimParams):
    """Hazard score ``tau * f_dist(d) * f_inf(sigma)``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("duration must be >= 0")
    return _maybe_scalar(tau * f_dist(d, params) * f_inf(sigma, params))


def taylor_exp(x, terms: int):
    """Partial sum ``sum_{k < terms} x^k / k!`` of the exponential series."""
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(terms):
        total = total + term
        term = term * x / (k + 1)
    return total


def infection_prob(s, params: SimParams):
    """Dose response: probability that an exposure with hazard ``s`` infects."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("hazard must be >= 0")
    if params.lam is None:
        raise ValueError("sim.lambda is unset; calibrate it before evaluating the dose response")
    x = params.lam * s
    if params.taylor_terms is None:
        p = -np.expm1(-x)
    else:
        p = np.clip(1.0 - taylor_exp(-x, params.taylor_terms), 0.0, 1.0)
    return _maybe_scalar(p)


def bag_infection_prob(hazards, params: SimParams) -> float:
    """Probability that at least one exposure (or the background term) infects.

    ``1 - (1 - p0) * prod(1 - p_n)``, accumulated in log space.
    """
    hazards = np.asarray(hazards, dtype=float).ravel()
    if np.any(hazards < 0):
        raise ValueError("hazard must be >= 0")
    log_escape = math.log1p(-params.p0) if params.p0 < 1.0 else -math.inf
    if hazards.size:
        if params.taylor_terms is None:
            log_escape -= params.lam * float(hazards.sum())
        else:
            with np.errstate(divide="ignore"):
                log_escape += float(np.log1p(-np.asarray(infection_prob(hazards, params))).sum())
    return float(-math.expm1(log_escape))


def distance_to_attenuation(d, params: SimParams):
    """Mean bluetooth attenuation (dB) at distance ``d`` meters."""
    d = _check_positive(d, "distance")
    return _maybe_scalar(math.exp(params.ble_offset) * d**params.ble_slope)


def attenuation_to_distance(a, params: SimParams):
    """Inverse of :func:`distance_to_attenuation`."""
    a = _check_positive(a, "attenuation")
    return _maybe_scalar((a / math.exp(params.ble_offset)) ** (1.0 / params.ble_slope))
