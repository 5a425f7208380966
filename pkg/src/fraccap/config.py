"""Run configuration: one JSON document, strict keys, flag overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

from .geometry import KernelParams
from .interaction import QuadratureConfig

DEFAULTS = {
    "kernel": {"n": 2, "s": 0.5, "sigma": 0.0},
    "quadrature": {"rel_tol": 1e-3, "max_subdivision_depth": 4, "farfield_ratio": 2.0,
                   "tail_radius": None, "region_resolution": 64, "exterior_nodes": 6},
    "anneal": {"volume": 0.3, "initial_temperature": None, "cooling_ratio": 0.95, "sweeps": 200,
               "moves_per_sweep": None, "quench_sweeps": 20},
    "grid": {"window": [[-1.0, 1.0], [0.0, 1.0]], "res": 64},
    "inputs": {"set": None, "container": None, "omega": None, "exterior": None},
    "outputs": {"out": None, "trace": None, "svg": None},
    "options": {"R": None, "T": None, "levels": None, "radii": None, "contact_point": None,
                "sigmas": [-0.8, -0.4, 0.0, 0.4, 0.8], "s_values": [0.25, 0.5, 0.75],
                "tol": 1e-8, "trials": 20, "samples": 128, "phi": True},
    "seed": 0,
}


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def _merge(base, override, path=""):
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_sources(cls, path=None, overrides=None):
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                with open(path) as fh:
                    doc = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigError("config root must be an object")
            _merge(data, doc)
        for dotted, val in (overrides or {}).items():
            if val is None:
                continue
            section, _, key = dotted.rpartition(".")
            _merge(data, {section: {key: val}} if section else {key: val})
        cfg = cls(data)
        cfg.validate()
        return cfg

    def validate(self):
        try:
            self.kernel
            self.quadrature
            a = self.data["anneal"]
            if not 0.0 <= float(a["volume"]) <= 1.0:
                raise ValueError("anneal.volume must lie in [0, 1]")
            if not 0.0 < float(a["cooling_ratio"]) < 1.0:
                raise ValueError("anneal.cooling_ratio must lie in (0, 1)")
            if int(self.data["grid"]["res"]) < 1:
                raise ValueError("grid.res must be positive")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def kernel(self) -> KernelParams:
        k = self.data["kernel"]
        return KernelParams(int(k["n"]), float(k["s"]), float(k["sigma"]))

    @property
    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(**self.data["quadrature"])

    def section(self, name):
        return self.data[name]

    @property
    def seed(self):
        return int(self.data["seed"])

    def canonical(self):
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()
