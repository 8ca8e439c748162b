"""Experiment configuration files.

A config is a TOML document with the sections below; every key is optional
and unknown keys are rejected.  ``--set section.key=value`` overrides take
TOML literal syntax for the value (bare words fall back to strings).

.. code-block:: toml

    [data]
    path = "ml-1m/ratings.dat"   # or synthetic = true
    format = "dat"
    k_users = 10
    k_items = 40
    train_fraction = 0.8

    [hyper]
    gamma = 1e-3
    lambda = 1e-4
    l = 100
    iterations = 80
    reg_mode = "server"
    early_stop = false

    [privacy]
    enabled = true
    epsilon = 10.0
    clip_bound = 1.0

    [share]
    fraction = 0.3

    [ledger]
    difficulty = 2
    clock = "logical"            # or "wall"

    [run]
    mode = "federated"           # or "centralized"
    seed = 0
    out = "runs/default"
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from liberate._seeds import derive_seed
from liberate.federation import RunConfig
from liberate.ldp import PrivacyParams
from liberate.mf import Hyperparams
from liberate.sharing import SharePlan


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, Any]] = {
    "data": {
        "path": "",
        "format": "",
        "synthetic": False,
        "synthetic_users": 600,
        "synthetic_items": 400,
        "synthetic_seed": 0,
        "k_users": 10,
        "k_items": 40,
        "train_fraction": 0.8,
    },
    "hyper": {
        "gamma": 1e-3,
        "lambda": 1e-4,
        "l": 100,
        "iterations": 80,
        "reg_mode": "server",
        "early_stop": False,
    },
    "privacy": {"enabled": True, "epsilon": 10.0, "clip_bound": 1.0},
    "share": {"fraction": 0.3},
    "ledger": {"difficulty": 2, "clock": "logical"},
    "run": {"mode": "federated", "seed": 0, "out": ""},
}


def _check_type(section: str, key: str, value: Any) -> Any:
    default = DEFAULTS[section][key]
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where} must be a string, got {value!r}")
    return value


def _merge(base: dict, doc: dict, origin: str) -> dict:
    for section, body in doc.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{origin}: [{section}] must be a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{origin}: unknown key {section}.{key}")
            base[section][key] = _check_type(section, key, value)
    return base


def parse_override(text: str) -> tuple[str, str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    dotted, raw = text.split("=", 1)
    parts = dotted.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts[0], parts[1], value


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, Any]]

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] = ()) -> "ExperimentConfig":
        values = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                doc = tomllib.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, tomllib.TOMLDecodeError) as exc:
                raise ConfigError(f"{path}: {exc}") from None
            _merge(values, doc, str(path))
        for text in overrides:
            section, key, value = parse_override(text)
            _merge(values, {section: {key: value}}, "--set")
        cfg = cls(values)
        cfg.run_config()  # surface validation errors early
        return cfg

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def master_seed(self) -> int:
        return self["run"]["seed"]

    def seed_for(self, module: str) -> int:
        return derive_seed(self.master_seed, module)

    def run_config(self) -> RunConfig:
        h, p, s, g, r = self["hyper"], self["privacy"], self["share"], self["ledger"], self["run"]
        if g["clock"] not in ("logical", "wall"):
            raise ConfigError(f"ledger.clock must be 'logical' or 'wall', got {g['clock']!r}")
        try:
            return RunConfig(
                hyperparams=Hyperparams(h["gamma"], h["lambda"], h["l"], h["iterations"], h["reg_mode"]),
                privacy=PrivacyParams(p["epsilon"], p["clip_bound"], p["enabled"], self.seed_for("ldp")),
                share_plan=SharePlan(s["fraction"], self.seed_for("share")),
                difficulty=g["difficulty"],
                mode=r["mode"],
                master_seed=self.master_seed,
                logical_clock=g["clock"] == "logical",
                early_stop=h["early_stop"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def as_dict(self) -> dict[str, dict[str, Any]]:
        return copy.deepcopy(self.values)
