"""Strict JSON run configuration.

Every block is optional and falls back to the defaults of the matching
dataclass. Unknown keys anywhere are rejected so that a typo cannot silently
run a different experiment. Example::

    {
      "seed": 0,
      "output_dir": "runs/bag_size",
      "sim": {"lambda": null, "target_positive_rate": 0.03},
      "grid": {"n_dist": 20, "n_dur": 10},
      "bags": {"n_users": 2000, "positive_scenario": "UniformOneToThree"},
      "train": {"iterations": 1000, "batch_size": 100},
      "lut": {"high": [[-2, 4]], "standard": [[-5, -3], [5, 10]]},
      "sweep": {"axis": "bag_size", "values": [4, 8, 16, 32], "n_trials": 5}
    }
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .evaluation import AXES, DEFAULT_AXIS_VALUES, ExperimentConfig
from .learner import TrainConfig
from .poolsim import DESK_GRID, BagConfig, GridSpec
from .riskmodel import ContagiousnessLUT
from .simcore import REFERENCE_LAMBDA, SimParams

SIM_KEYS = {
    "lambda": "lam",
    "d_min_sq": "d_min_sq",
    "inf_loc": "inf_loc",
    "inf_scale": "inf_scale",
    "inf_shape": "inf_shape",
    "inf_tau": "inf_tau",
    "ble_offset": "ble_offset",
    "ble_slope": "ble_slope",
    "p0": "p0",
    "taylor_terms": "taylor_terms",
}
TOP_KEYS = {"seed", "output_dir", "sim", "grid", "bags", "train", "lut", "sweep"}


@dataclass(frozen=True)
class SweepSpec:
    axis: str = "bag_size"
    values: tuple = tuple(DEFAULT_AXIS_VALUES["bag_size"])
    n_trials: int = 5

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"sweep.axis must be one of {list(AXES)}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep.values must be non-empty")
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise ConfigError(f"sweep.n_trials must be a positive integer, got {self.n_trials!r}")


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    output_dir: Optional[str] = None
    seed: int = 0
    lut_ranges: dict = field(
        default_factory=lambda: {"high": [[-2, 4]], "standard": [[-5, -3], [5, 10]]}
    )

    def to_dict(self) -> dict:
        exp = self.experiment
        sim = {k: getattr(exp.sim, attr) for k, attr in SIM_KEYS.items()}
        sim["target_positive_rate"] = exp.target_positive_rate
        bags = asdict(exp.bags)
        bags["positive_scenario"] = exp.bags.positive_scenario.value
        train = asdict(exp.train)
        train.pop("rng_seed")
        grid = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(exp.grid).items()}
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "sim": sim,
            "grid": grid,
            "bags": bags,
            "train": train,
            "lut": self.lut_ranges,
            "sweep": {"axis": self.sweep.axis, "values": list(self.sweep.values),
                      "n_trials": self.sweep.n_trials},
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, excluding output_dir."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")


def _build(cls, block, where, renames=None):
    renames = renames or {}
    allowed = {f.name for f in fields(cls)}
    kwargs = {}
    for k, v in block.items():
        name = renames.get(k, k)
        if name not in allowed:
            raise ConfigError(f"unknown key in {where}: {k!r}")
        kwargs[name] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def parse_config(data: dict) -> RunConfig:
    _check_keys(data, TOP_KEYS, "config")
    sim_block = dict(data.get("sim", {}))
    _check_keys(sim_block, set(SIM_KEYS) | {"target_positive_rate"}, "sim")
    target = sim_block.pop("target_positive_rate", 0.03)
    if "lambda" not in sim_block:
        sim_block["lambda"] = None
    sim = _build(SimParams, sim_block, "sim", SIM_KEYS)

    grid_block = data.get("grid", {})
    _check_keys(grid_block, {f.name for f in fields(GridSpec)}, "grid")
    grid = _build(GridSpec, {**asdict(DESK_GRID), **grid_block}, "grid")

    bags = _build(BagConfig, data.get("bags", {}), "bags")
    train_block = data.get("train", {})
    _check_keys(train_block, {f.name for f in fields(TrainConfig)} - {"rng_seed"}, "train")
    train = _build(TrainConfig, train_block, "train")

    lut_block = data.get("lut", {"high": [[-2, 4]], "standard": [[-5, -3], [5, 10]]})
    _check_keys(lut_block, {"high", "standard"}, "lut")
    try:
        lut = ContagiousnessLUT.from_ranges(lut_block.get("high", []), lut_block.get("standard", []))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid lut: {exc}") from exc

    sweep_block = dict(data.get("sweep", {}))
    _check_keys(sweep_block, {"axis", "values", "n_trials"}, "sweep")
    axis = sweep_block.get("axis", "bag_size")
    sweep_block.setdefault("values", DEFAULT_AXIS_VALUES.get(axis, []))
    sweep = _build(SweepSpec, sweep_block, "sweep")

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    out = data.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir must be a string")
    if not isinstance(target, (int, float)) or not 0 < target < 1:
        raise ConfigError(f"sim.target_positive_rate must lie in (0, 1), got {target!r}")
    exp = ExperimentConfig(sim=sim, grid=grid, bags=bags, train=train, lut=lut,
                           target_positive_rate=float(target))
    return RunConfig(exp, sweep, out, seed, {k: lut_block.get(k, []) for k in ("high", "standard")})


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(data)


def apply_preset(config: RunConfig, preset: Optional[str]) -> RunConfig:
    if preset in (None, "swiss"):
        return config
    if preset == "paper-lambda":
        exp = replace(config.experiment, sim=replace(config.experiment.sim, lam=REFERENCE_LAMBDA))
        return replace(config, experiment=exp)
    raise ConfigError(f"unknown preset {preset!r}")
