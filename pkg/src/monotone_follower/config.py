"""Experiment configuration: TOML files validated against ``CONFIG_SCHEMA``.

Example::

    [tree]
    family = "lottery"
    params = { steps = 1, terminal_support = [[0.0, 0.5], [2.0, 0.5]] }

    [cost]
    name = "quadratic"

    [ladder]
    caps = [1, 2, 4, 8]
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:     # Python < 3.11
    import tomli as tomllib

from .costs import CostSpec, make_spec
from .errors import ConfigError
from .lattice import (ScenarioTree, build_binomial_tree, build_lottery_tree, build_ray_tree,
                      build_random_tree)
from .schemas import CONFIG_SCHEMA
from .solver import SolveOptions

DEFAULTS = {
    "solver": {"waive_coercivity": False, "mode": "uncapped"},
    "ladder": {"caps": [1.0, 2.0, 4.0, 8.0], "gap_target": 1e-4, "resolution": 100},
    "stop": {"tolerance": 1e-6, "payoff": "proof"},
    "outputs": {"directory": "out", "formats": ["json", "csv"]},
}

_BUILDERS = {
    "lottery": build_lottery_tree,
    "binomial": build_binomial_tree,
    "ray": build_ray_tree,
    "random": build_random_tree,
}


@dataclass
class ExperimentConfig:
    tree: dict
    cost: dict
    solver: dict = field(default_factory=dict)
    ladder: dict = field(default_factory=dict)
    stop: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        if errors:
            e = errors[0]
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {e.message}")
        doc = copy.deepcopy(raw)
        for section, defaults in DEFAULTS.items():
            doc[section] = {**defaults, **doc.get(section, {})}
        if doc["solver"]["mode"] == "capped" and "cap" not in doc["solver"]:
            raise ConfigError("config invalid at solver: capped mode needs 'cap'")
        caps = doc["ladder"]["caps"]
        if any(b <= a for a, b in zip(caps, caps[1:])):
            raise ConfigError("config invalid at ladder/caps: caps must be strictly increasing")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
        return cls.from_dict(raw)

    def override(self, seed: Optional[int] = None, waive_coercivity: Optional[bool] = None,
                 tolerance: Optional[float] = None, out: Optional[str] = None) -> "ExperimentConfig":
        c = copy.deepcopy(self)
        if seed is not None:
            c.tree["seed"] = seed
            c.solver["seed"] = seed
        if waive_coercivity:
            c.solver["waive_coercivity"] = True
        if tolerance is not None:
            c.stop["tolerance"] = tolerance
        if out is not None:
            c.outputs["directory"] = out
        return c

    def build_tree(self) -> ScenarioTree:
        family = self.tree["family"]
        params = dict(self.tree.get("params", {}))
        if family == "random":
            params["seed"] = self.tree.get("seed", 0)
        try:
            return _BUILDERS[family](**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cannot build {family} tree: {exc}") from None

    def build_spec(self) -> CostSpec:
        try:
            return make_spec(self.cost["name"], self.cost.get("params"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cannot build cost {self.cost['name']!r}: {exc}") from None

    def solve_options(self) -> SolveOptions:
        names = {f.name for f in fields(SolveOptions)}
        return SolveOptions(**{k: v for k, v in self.solver.items() if k in names})

    @property
    def out_dir(self) -> Path:
        return Path(self.outputs["directory"])

    def wants(self, fmt: str) -> bool:
        return fmt in self.outputs["formats"]
