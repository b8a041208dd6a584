"""Run configuration: YAML file with one section per pipeline stage.

Unknown keys are errors so a misspelled hyperparameter never silently falls
back to its default.
"""
from __future__ import annotations

import copy
import hashlib
import json
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .loss import LossSpec
from .optimize import TrainConfig
from .simulate import SimConfig
from .systems import get_system

DEFAULTS = {
    "system": "vanderpol",
    "network": {"hidden": [30, 30, 30, 30, 30], "activation": "tanh", "seed": 0},
    "loss": {"lambda": 2.5, "mu1": 1.0, "mu2": 1.0, "rho": None, "penalty_form": "hinge"},
    "sampling": {"n_points": 4000, "seed": 0},
    "train": {
        "adam_epochs": 500,
        "lbfgs_epochs": 500,
        "alpha": 1e-3,
        "beta": 1.0,
        "adam_betas": [0.9, 0.999],
        "adam_eps": 1e-8,
        "lbfgs_history": 10,
        "batch_size": None,
        "seed": 0,
        "checkpoint_every": 0,
        "grad_clip": None,
    },
    "simulate": {
        "t_final": 20.0,
        "dt": 1e-3,
        "x0": None,
        "xhat0": None,
        "noise_sigma": 0.15,
        "noise_seed": 0,
        "method": "rk4",
    },
    "verify": {"grid": 50, "tol": 1e-2, "threshold": 0.95},
    "out_dir": None,
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict
    name: str = "run"

    @property
    def system(self):
        return get_system(self.raw["system"])

    @property
    def layer_dims(self) -> list:
        s = self.system
        return [s.n + s.p] + [int(h) for h in self.raw["network"]["hidden"]] + [s.n]

    def loss_spec(self) -> LossSpec:
        sec = self.raw["loss"]
        rho = sec["rho"] if sec["rho"] is not None else [1.0] * self.system.n
        return LossSpec(sec["lambda"], sec["mu1"], sec["mu2"], rho, sec["penalty_form"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.raw["train"])

    def sim_config(self, **overrides) -> SimConfig:
        sec = dict(self.raw["simulate"])
        sec.update({k: v for k, v in overrides.items() if v is not None})
        s = self.system
        if sec["x0"] is None:
            sec["x0"] = s.x0 if s.x0 is not None else [0.0] * s.n
        if sec["xhat0"] is None:
            sec["xhat0"] = [0.0] * s.n
        return SimConfig(**sec)

    def digest(self) -> str:
        """Hash of the settings that determine the trained network."""
        keys = ("system", "network", "loss", "sampling", "train")
        blob = json.dumps({k: self.raw[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)

    def with_overrides(self, seed=None, lam=None, noise=None, out_dir=None) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["network"]["seed"] = seed
            raw["sampling"]["seed"] = seed
            raw["train"]["seed"] = seed
        if lam is not None:
            raw["loss"]["lambda"] = float(lam)
        if noise is not None:
            raw["simulate"]["noise_sigma"] = float(noise)
        if out_dir is not None:
            raw["out_dir"] = str(out_dir)
        return RunConfig(raw, self.name)


def from_dict(doc: dict, name="run") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    cfg = RunConfig(_merge(DEFAULTS, doc), name)
    # validate every section eagerly so bad values fail before any work starts
    cfg.system
    with warnings.catch_warnings():
        # the lambda <= 2 warning is reported by the command that uses the config
        warnings.simplefilter("ignore")
        cfg.loss_spec()
    try:
        cfg.train_config()
        cfg.sim_config()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.raw["loss"]["rho"] is not None and len(cfg.raw["loss"]["rho"]) != cfg.system.n:
        raise ConfigError(f"loss.rho needs {cfg.system.n} entries")
    return cfg


def shipped_configs() -> list[str]:
    root = resources.files("contraction_pinn") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load(path_or_name) -> RunConfig:
    """Load a YAML config from a path, or a shipped config by name."""
    path = Path(path_or_name)
    if path.suffix not in (".yaml", ".yml") and not path.exists():
        res = resources.files("contraction_pinn") / "configs" / f"{path_or_name}.yaml"
        if not res.is_file():
            raise ConfigError(
                f"no config file {path_or_name!r} and no shipped config of that name "
                f"(shipped: {shipped_configs()})"
            )
        text, name = res.read_text(), str(path_or_name)
    else:
        text, name = path.read_text(), path.stem
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path_or_name}: invalid YAML ({exc})") from exc
    return from_dict(doc, name)
