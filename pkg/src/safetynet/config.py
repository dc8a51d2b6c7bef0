"""Experiment configuration: versioned JSON schema, validation and presets."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import PRESETS, DynamicalSystem, StabilityConfig, get_system
from .losses import LossWeights, Problem
from .network import MlpModel, domain_input_map, init_xavier
from .pde import SigmoidIc
from .sampling import MinibatchSchedule, SpatioTemporalDomain
from .training import TrainingConfig

SCHEMA_VERSION = 1
PI = math.pi


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, path: str = "", line: int | None = None, source: str = ""):
        self.path, self.line, self.source = path, line, source
        where = source or "<config>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {path + ': ' if path else ''}{message}")


DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "name": "",
    "seed": 0,
    "output_dir": "runs",
    "system": {"preset": "closed_roa", "overrides": {}},
    "domain": {
        "spatial_bounds": [[-1.0, 4.0], [-1.0, 4.0]],
        "t_max": 30.0,
        "dx": 0.6319,
        "dt_grid": 0.5263,
        "n_random_collocation": 10000,
        "n_random_ic": 2000,
        "n_random_bc": 1000,
        "sigma": None,
    },
    "ic": {"a": 2.0, "m": 20.0, "r": 1.0, "c": -1.0, "center": None},
    "bc_mode": "fixed",
    "loss_weights": {"c_ic": 1.0, "c_bc": 0.1, "c_mon": 10.0, "c_r": 1.0, "c_v": 1.0, "c_reg": 1e-5},
    "network": {"width": 50, "depth": 3, "input_map": "none"},
    "quad_order": 1,
    "training": {
        "epochs": 5000,
        "learning_rate": 0.005,
        "frac_ic_bc": 0.5,
        "frac_collocation": 0.05,
        "eval_every": 10,
        "checkpoint_every": 500,
    },
    "numeric": {"resolution": 101, "snapshots": [], "eps": 1e-6, "cfl": 0.5},
    "oracle": {"dt": 1e-3, "t_end": 50.0, "r_conv": 0.05, "resolution": 51, "box": None},
    "eval": {"resolution": 51, "slice": None, "times": []},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "overrides":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pendulum(name, system, **extra):
    cfg = {
        "name": name,
        "system": {"preset": system, "overrides": {}},
        "domain": {"spatial_bounds": [[-2 * PI, 2 * PI], [-4 * PI, 4 * PI]], "t_max": 10.0},
        "ic": {"r": 2.0, "center": [0.0, 0.0]},
        "bc_mode": "free",
        # angle bounded by the domain; velocity doubled since converging swings reach sqrt(4 g / L)
        "oracle": {"t_end": 50.0, "box": [[-2 * PI, 2 * PI], [-8 * PI, 8 * PI]]},
    }
    return _merge(cfg, extra)


PRESET_CONFIGS: dict[str, dict] = {
    "ex1_closed_roa": {
        "name": "ex1_closed_roa",
        "system": {"preset": "closed_roa", "overrides": {}},
        "ic": {"r": 1.0, "center": [PI / 2, PI / 2]},
        "bc_mode": "fixed",
        "oracle": {"box": [[-1.0, 4.0], [-1.0, 4.0]]},
    },
    "ex2a_pendulum": _pendulum("ex2a_pendulum", "pendulum_a"),
    # longer pendulums are less damped: about 40 s and 70 s to settle from a swing near the separatrix
    "ex2b_pendulum": _pendulum("ex2b_pendulum", "pendulum_b", oracle={"t_end": 100.0}),
    "ex2c_pendulum": _pendulum("ex2c_pendulum", "pendulum_c", oracle={"t_end": 150.0}),
    "ex3_cart_pendulum": {
        "name": "ex3_cart_pendulum",
        "system": {"preset": "cart_pendulum", "overrides": {}},
        "domain": {"spatial_bounds": [[-2 * PI, 2 * PI], [-4 * PI, 4 * PI], [-2 * PI, 2 * PI], [-4 * PI, 4 * PI]],
                   "t_max": 10.0, "n_random_ic": 20000, "n_random_bc": 2000},
        "ic": {"r": 2.5, "center": [0.0, 0.0, 0.0, 0.0]},
        "bc_mode": "fixed",
        "eval": {"slice": "axes=2,3;x0=0;x1=0"},
        # the cart mode decays with a time constant of ~320 s; the ball of radius 2 lies inside the ROA
        "oracle": {"t_end": 50.0, "r_conv": 2.0},
    },
    "toy_1d": {
        "name": "toy_1d",
        "system": {"preset": "linear_1d", "overrides": {}},
        "domain": {"spatial_bounds": [[-2.0, 2.0]], "t_max": 2.0, "dx": 0.25, "dt_grid": 0.25,
                   "n_random_collocation": 200, "n_random_ic": 50, "n_random_bc": 20},
        "ic": {"r": 0.5, "center": [0.0]},
        "bc_mode": "fixed",
        "network": {"width": 10, "depth": 2},
        "training": {"epochs": 20, "eval_every": 1, "checkpoint_every": 0, "frac_collocation": 0.25},
        "numeric": {"resolution": 41},
        "eval": {"resolution": 41},
    },
    "frozen_2d": {
        "name": "frozen_2d",
        "system": {"preset": "frozen_2d", "overrides": {}},
        "domain": {"spatial_bounds": [[-2.0, 2.0], [-2.0, 2.0]], "t_max": 1.0, "dx": 0.5, "dt_grid": 0.25,
                   "n_random_collocation": 200, "n_random_ic": 100, "n_random_bc": 50},
        "ic": {"r": 1.0, "center": [0.0, 0.0]},
        "network": {"width": 10, "depth": 2},
        "training": {"epochs": 5, "eval_every": 1, "checkpoint_every": 0, "frac_collocation": 0.25},
        "numeric": {"resolution": 41},
        "eval": {"resolution": 41},
    },
}


def preset_names() -> list[str]:
    return sorted(PRESET_CONFIGS)


def preset_config(name: str) -> dict:
    if name not in PRESET_CONFIGS:
        raise ConfigError(f"unknown experiment preset {name!r}; choose from {', '.join(preset_names())}")
    return _merge(DEFAULTS, PRESET_CONFIGS[name])


# -- validation --------------------------------------------------------------

def _line_of(text: str, path: list[str]) -> int | None:
    """Line of the innermost key of ``path`` in the JSON source (best effort)."""
    if not text:
        return None
    pos, found = 0, None
    for key in path:
        if key.isdigit():
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if not m:
            break
        pos, found = m.end(), m.start()
    return None if found is None else text.count("\n", 0, found) + 1


@dataclass
class ExperimentConfig:
    """A validated configuration plus the objects it describes."""

    raw: dict
    source: str = ""

    # -- construction -----------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict, text: str = "", source: str = "") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("top level must be a JSON object", source=source, line=1)
        base = DEFAULTS
        if "preset" in data:
            base = preset_config(str(data["preset"]))
        raw = _merge(base, {k: v for k, v in data.items() if k != "preset"})
        cfg = cls(raw, source)
        cfg._text = text
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config file not found", source=str(p))
        text = p.read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", source=str(p), line=exc.lineno)
        return cls.from_dict(data, text, str(p))

    @classmethod
    def load(cls, spec: str) -> "ExperimentConfig":
        """A config file path or ``preset:<name>``."""
        if spec.startswith("preset:"):
            return cls.from_dict({"preset": spec.split(":", 1)[1]}, source=spec)
        return cls.from_file(spec)

    def _fail(self, path: str, message: str):
        raise ConfigError(message, path, _line_of(getattr(self, "_text", ""), path.split(".")), self.source)

    def validate(self) -> None:
        r = self.raw
        if r.get("schema_version") != SCHEMA_VERSION:
            self._fail("schema_version", f"unsupported schema version {r.get('schema_version')!r}"
                                         f" (expected {SCHEMA_VERSION})")
        unknown = set(r) - set(DEFAULTS)
        if unknown:
            self._fail(sorted(unknown)[0], "unknown key")
        for section in ("system", "domain", "ic", "loss_weights", "network", "training", "numeric", "oracle", "eval"):
            extra = set(r[section]) - set(DEFAULTS[section])
            if extra:
                k = sorted(extra)[0]
                self._fail(f"{section}.{k}", "unknown key")
        if r["system"]["preset"] not in PRESETS:
            self._fail("system.preset", f"unknown system preset {r['system']['preset']!r}")
        try:
            sys = self.system
        except (KeyError, ValueError) as exc:
            self._fail("system.overrides", str(exc).strip("'\""))
        d = r["domain"]
        bounds = np.asarray(d["spatial_bounds"], dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2:
            self._fail("domain.spatial_bounds", "expected a list of [lo, hi] pairs")
        if bounds.shape[0] != sys.d_s:
            self._fail("domain.spatial_bounds", f"{bounds.shape[0]} bounds for a {sys.d_s}-dimensional system")
        for key in ("n_random_collocation", "n_random_ic", "n_random_bc"):
            if not isinstance(d[key], int) or d[key] < 0:
                self._fail(f"domain.{key}", "must be a non-negative integer")
        try:
            self.domain.time_axis()
            self.domain.spatial_axes()
        except ValueError as exc:
            self._fail("domain", str(exc))
        ic = r["ic"]
        if ic["center"] is not None and len(ic["center"]) != sys.d_s:
            self._fail("ic.center", f"needs {sys.d_s} coordinates")
        try:
            self.ic
        except ValueError as exc:
            self._fail("ic", str(exc))
        if r["bc_mode"] not in ("fixed", "free"):
            self._fail("bc_mode", "must be 'fixed' or 'free'")
        try:
            self.weights
        except (TypeError, ValueError) as exc:
            self._fail("loss_weights", str(exc))
        net = r["network"]
        if int(net["width"]) < 1 or int(net["depth"]) < 1:
            self._fail("network", "width and depth must be >= 1")
        if net["input_map"] not in ("none", "domain"):
            self._fail("network.input_map", "must be 'none' or 'domain'")
        if not 1 <= int(r["quad_order"]) <= 16:
            self._fail("quad_order", "must be between 1 and 16")
        t = r["training"]
        if not isinstance(t["epochs"], int) or t["epochs"] < 0:
            self._fail("training.epochs", "must be a non-negative integer")
        if t["learning_rate"] <= 0:
            self._fail("training.learning_rate", "must be positive")
        for key in ("frac_ic_bc", "frac_collocation"):
            if not 0 < t[key] <= 1:
                self._fail(f"training.{key}", "must be in (0, 1]")
        if int(r["numeric"]["resolution"]) < 7:
            self._fail("numeric.resolution", "needs at least 7 nodes per dimension")
        if int(r["eval"]["resolution"]) < 2:
            self._fail("eval.resolution", "needs at least 2 nodes per dimension")
        o = r["oracle"]
        if o["dt"] <= 0 or o["t_end"] <= 0 or o["r_conv"] <= 0:
            self._fail("oracle", "dt, t_end and r_conv must be positive")

    # -- derived objects ----------------------------------------------------
    @property
    def name(self) -> str:
        return self.raw["name"] or "experiment"

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def system(self) -> DynamicalSystem:
        s = self.raw["system"]
        return get_system(s["preset"], s.get("overrides") or None)

    @property
    def domain(self) -> SpatioTemporalDomain:
        d = self.raw["domain"]
        return SpatioTemporalDomain(d["spatial_bounds"], float(d["t_max"]), d["dx"], float(d["dt_grid"]))

    @property
    def ic(self) -> SigmoidIc:
        c = dict(self.raw["ic"])
        if c["center"] is None:
            c["center"] = list(self.system.equilibrium)
        return SigmoidIc(a=c["a"], m=c["m"], r=c["r"], c=c["c"], center=tuple(c["center"]))

    @property
    def weights(self) -> LossWeights:
        return LossWeights(**self.raw["loss_weights"])

    @property
    def problem(self) -> Problem:
        return Problem(self.system, self.ic, self.raw["bc_mode"], int(self.raw["quad_order"]), self.weights)

    @property
    def layer_sizes(self) -> list[int]:
        n = self.raw["network"]
        return [self.domain.d] + [int(n["width"])] * int(n["depth"]) + [1]

    def init_model(self, seed: int | None = None) -> MlpModel:
        """Xavier-initialised network, with the configured input map."""
        model = init_xavier(self.layer_sizes, self.seed if seed is None else seed)
        if self.raw["network"]["input_map"] == "domain":
            d = self.domain
            model = model.with_input_map(*domain_input_map(d.lower, d.upper))
        return model

    def training_sets(self):
        from .sampling import generate_training_sets

        d = self.raw["domain"]
        return generate_training_sets(self.domain, d["n_random_collocation"], self.seed, n_random_ic=d["n_random_ic"],
                                      n_random_bc=d["n_random_bc"], sigma=d["sigma"])

    def training_config(self, **overrides) -> TrainingConfig:
        t = self.raw["training"]
        kw = dict(epochs=t["epochs"], learning_rate=t["learning_rate"], seed=self.seed,
                  schedule=MinibatchSchedule(t["frac_ic_bc"], t["frac_collocation"], self.seed),
                  weights=self.weights, eval_every=t["eval_every"], checkpoint_every=t["checkpoint_every"])
        kw.update(overrides)
        return TrainingConfig(**kw)

    @property
    def stability_config(self) -> StabilityConfig:
        o = self.raw["oracle"]
        box = None if o["box"] is None else np.asarray(o["box"], dtype=float)
        return StabilityConfig(dt=o["dt"], t_end=o["t_end"], r_conv=o["r_conv"], box=box)

    def with_updates(self, **sections) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(_merge(self.raw, sections), source=self.source)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()
