"""Lab configuration: YAML or JSON in, canonical JSON out."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .covariance import CovarianceModel, model_from_dict
from .fields import FieldModel, tent_kernel
from .geometry import Parameters

OUTPUT_ENV = "ASSOCSIP_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "d": 2,
    "seed": 20240101,
    "output_dir": "assocsip-out",
    "model": {"kind": "moving_average", "law": "centered_exponential", "kernel": "tent3"},
    "covariance": None,  # None: the field model's own covariance
    "geometry": {"alpha": 3, "beta": 2, "tau": 0.8, "r": 1, "delta": 1, "lam": 1.0, "nu": None,
                 "sigma0sq": 1, "kmax": None, "extent": [532, 532]},
    "experiment": {
        "replicates": 50,
        "calibration_replicates": 2000,
        "epsilon": 0.05,
        "mode": "surrogate",
        "scales": [[3, 3], [4, 4], [5, 5]],
        "profile_range": [1e3, 2.5e5],
        "sizes": [4, 16, 64],
        "verify_replicates": 5000,
        "maximal_side": 4,
        "maximal_replicates": 10000,
        "x_grid": [2.0, 3.0, 4.0],
        "anchored_side": 64,
        "anchored_replicates": 1000,
        "lil_extent": [512, 512],
        "lil_replicates": 50,
        "checks": ["clt", "moment", "maximal", "lil", "terms", "profile"],
        "psi_limit": 500,
        "u_max": 10,
        "gap_sides": [4, 8, 16, 32, 64],
        "dump_grid": False,
    },
}

MODEL_SHORTHANDS = {
    "iid-gaussian": {"kind": "iid", "law": "gaussian"},
    "iid-exponential": {"kind": "iid", "law": "centered_exponential"},
    "iid-rademacher": {"kind": "iid", "law": "rademacher"},
    "ma-gaussian": {"kind": "moving_average", "law": "gaussian", "kernel": "tent3"},
    "ma-exponential": {"kind": "moving_average", "law": "centered_exponential", "kernel": "tent3"},
    "ma-rademacher": {"kind": "moving_average", "law": "rademacher", "kernel": "tent3"},
}

CHECK_NAMES = ("clt", "moment", "maximal", "lil", "terms", "profile")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in out:
            raise ConfigError(f"unknown configuration key {key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass
class LabConfig:
    data: dict

    @classmethod
    def from_mapping(cls, mapping: dict | None = None) -> "LabConfig":
        mapping = dict(mapping or {})
        base = copy.deepcopy(DEFAULTS)
        # the covariance block is free-form, so it bypasses the key check
        cov = mapping.pop("covariance", None)
        cfg = cls(_merge(base, mapping))
        cfg.data["covariance"] = cov
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "LabConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            mapping = yaml.safe_load(text)  # JSON is a subset of YAML
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if mapping is not None and not isinstance(mapping, dict):
            raise ConfigError("config must be a mapping at top level")
        return cls.from_mapping(mapping)

    def override(self, **changes) -> "LabConfig":
        """New config with dotted-path overrides, e.g. override(**{"geometry.alpha": 5})."""
        data = copy.deepcopy(self.data)
        for path, val in changes.items():
            node = data
            keys = path.split(".")
            for key in keys[:-1]:
                node = node[key]
            if keys[-1] not in node:
                raise ConfigError(f"unknown configuration key {path!r}")
            node[keys[-1]] = val
        cfg = LabConfig(data)
        cfg.validate()
        return cfg

    def canonical_json(self) -> str:
        """Every setting that affects results; the output location is left out."""
        data = {k: v for k, v in self.data.items() if k != "output_dir"}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @property
    def d(self) -> int:
        return self.data["d"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def geometry(self) -> dict:
        return self.data["geometry"]

    @property
    def experiment(self) -> dict:
        return self.data["experiment"]

    @property
    def output_dir(self) -> str:
        return os.environ.get(OUTPUT_ENV) or self.data["output_dir"]

    def extent(self) -> tuple:
        ext = self.geometry["extent"]
        if ext is None:
            raise ConfigError("geometry.extent is required")
        if len(ext) != self.d:
            raise ConfigError(f"extent {ext} does not have dimension {self.d}")
        return tuple(int(x) for x in ext)

    def params(self) -> Parameters:
        g = self.geometry
        try:
            return Parameters(d=self.d, alpha=g["alpha"], beta=g["beta"], tau=g["tau"], r=g["r"],
                              delta=g["delta"], lam=g["lam"], nu=g["nu"], sigma0sq=g["sigma0sq"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid geometry parameters: {exc}") from exc

    def field_model(self) -> FieldModel:
        m = self.data["model"]
        kernel = m.get("kernel")
        if m.get("kind") == "moving_average":
            kernel = resolve_kernel(kernel, self.d)
        try:
            return FieldModel(self.d, m.get("kind", "iid"), m.get("law", "gaussian"),
                              kernel if m.get("kind") == "moving_average" else None)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def covariance_model(self) -> CovarianceModel:
        spec = self.data["covariance"]
        if spec is None:
            return self.field_model().covariance()
        spec = {"d": self.d, **spec}
        if spec.get("kind") == "kernel_induced":
            spec["kernel"] = resolve_kernel(spec.get("kernel"), self.d)
        try:
            return model_from_dict(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid covariance model: {exc}") from exc

    def validate(self) -> None:
        d = self.data["d"]
        if not isinstance(d, int) or d < 1:
            raise ConfigError("d must be a positive integer")
        seed = self.data["seed"]
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        exp = self.data["experiment"]
        if not 0 < exp["epsilon"] < 0.5:
            raise ConfigError("epsilon must lie in (0, 1/2)")
        if exp["mode"] not in ("surrogate", "identity"):
            raise ConfigError("experiment.mode must be surrogate or identity")
        for key in ("replicates", "verify_replicates", "maximal_replicates", "anchored_replicates",
                    "lil_replicates", "psi_limit", "maximal_side", "anchored_side"):
            if not isinstance(exp[key], int) or isinstance(exp[key], bool) or exp[key] < 1:
                raise ConfigError(f"experiment.{key} must be a positive integer")
        cal = exp["calibration_replicates"]
        if not isinstance(cal, int) or isinstance(cal, bool) or cal < 2:
            raise ConfigError("experiment.calibration_replicates must be an integer >= 2")
        bad = [c for c in exp["checks"] if c not in CHECK_NAMES]
        if bad:
            raise ConfigError(f"unknown checks {bad}; choose from {CHECK_NAMES}")
        for k in exp["scales"]:
            if len(k) != d:
                raise ConfigError(f"scale {k} does not have dimension {d}")
        self.params()
        self.field_model()
        self.covariance_model()


def resolve_kernel(kernel, d: int) -> np.ndarray:
    if kernel is None:
        raise ConfigError("moving_average needs a kernel")
    if isinstance(kernel, str):
        if kernel.startswith("tent"):
            try:
                width = int(kernel[4:])
            except ValueError:
                raise ConfigError(f"bad kernel shorthand {kernel!r}") from None
            return tent_kernel(d, width)
        raise ConfigError(f"unknown kernel shorthand {kernel!r}")
    arr = np.asarray(kernel, dtype=np.float64)
    if arr.ndim != d:
        raise ConfigError(f"kernel is {arr.ndim}-dimensional, expected {d}")
    return arr


def model_shorthand(name: str) -> dict:
    try:
        return dict(MODEL_SHORTHANDS[name])
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODEL_SHORTHANDS)}") from None
