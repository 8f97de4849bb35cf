"""Experiment configuration: one flat JSON document with dotted keys."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from ..lattice import EXACT_SITE_CAP, ModelParams, PerturbationSpec

KINDS = ("variance-scan", "gg-scan", "ibp", "free-energy", "exact-audit",
         "perturbation-audit", "simulate")

# Irrational-looking points inside (0, 2]^3 x [-1, 1], as (beta, h, u, r).
DEFAULT_AUDIT_POINTS = [
    [0.37, 1.21, 0.83, -0.62],
    [1.13, 0.58, 1.47, 0.29],
    [0.71, 0.93, 0.52, 0.81],
    [1.62, 0.34, 1.91, -0.17],
    [0.29, 1.77, 1.18, 0.46],
]

# (dotted key, attribute, type, default, help)
FIELDS = [
    ("experiment.kind", "kind", str, "variance-scan", "experiment kind: " + ", ".join(KINDS)),
    ("lattice.dim", "dim", int, 1, "spatial dimension d"),
    ("lattice.n_list", "n_list", list, [4, 8, 16], "side lengths n to scan"),
    ("model.beta", "beta", float, 0.5, "inverse temperature (> 0)"),
    ("model.h", "h", float, 0.5, "random-field strength (> 0)"),
    ("model.u", "u", float, 1.0, "quartic coefficient (> 0)"),
    ("model.r", "r", float, 0.5, "quadratic coefficient"),
    ("perturbation.alpha", "alpha", dict, {}, "p-spin weights {p: alpha_p}, |alpha_p| <= 1"),
    ("perturbation.p_max", "p_max", int, 3, "largest p in the mixed sum"),
    ("perturbation.cn_exponent", "cn_exponent", float, 0.25, "c_n = prefactor * |V_n|^-exponent"),
    ("perturbation.cn_prefactor", "cn_prefactor", float, 1.0, "prefactor of c_n"),
    ("perturbation.xi_law", "xi_law", str, "gaussian", "coupling law: gaussian, rademacher, uniform"),
    ("perturbation.mode", "pert_mode", str, "off", "off, imaginary_exact or real_sampled"),
    ("mc.replicas", "replicas", int, 3, "replica chains per disorder"),
    ("mc.burn_in", "burn_in", int, 1000, "adaptive burn-in sweeps"),
    ("mc.sweeps", "sweeps", int, 8000, "measurement sweeps after burn-in"),
    ("mc.thinning", "thinning", int, 2, "sweeps between snapshots"),
    ("mc.initial_width", "initial_width", float, 1.0, "initial proposal width"),
    ("mc.epoch_length", "epoch_length", int, 50, "sweeps per adaptation epoch"),
    ("ensemble.disorders", "disorders", int, 64, "disorder realizations per size"),
    ("run.seed", "seed", int, 12345, "master seed (unsigned 64-bit)"),
    ("run.workers", "workers", int, 0, "worker threads (0: GLASLAB_THREADS or 1)"),
    ("run.out", "out", str, "glaslab-out", "output directory"),
    ("gg.m", "gg_m", int, 2, "GG replica count m (needs m+1 chains)"),
    ("gg.f_specs", "gg_f_specs", list, ["1", "clamp(R12)"], "overlap functions f"),
    ("ibp.inner", "ibp_inner", str, "auto", "inner expectations: auto, exact or mcmc"),
    ("free_energy.beta_points", "beta_points", int, 11, "beta grid points for thermo-integration"),
    ("free_energy.h_grid", "h_grid", list, [], "h grid for the convexity check (exact sizes)"),
    ("free_energy.exact_sites", "exact_sites", int, 2,
     "largest site count solved by quadrature; larger sizes use thermo-integration"),
    ("perturbation_audit.c_list", "c_list", list, [0.2, 0.1, 0.05, 0.025], "values of c_n"),
    ("audit.points", "audit_points", list, DEFAULT_AUDIT_POINTS, "(beta, h, u, r) points"),
]

# defaults that differ per experiment kind, applied unless the key is given
KIND_DEFAULTS = {
    "exact-audit": {"lattice.n_list": [1, 2, 3], "mc.replicas": 4, "mc.burn_in": 2000,
                    "mc.sweeps": 100000, "mc.thinning": 1},
    "perturbation-audit": {"lattice.n_list": [1, 2, 3], "ensemble.disorders": 100,
                           "perturbation.alpha": {"2": 1.0}, "perturbation.p_max": 2,
                           "perturbation.mode": "imaginary_exact"},
    "ibp": {"lattice.n_list": [3], "ensemble.disorders": 500, "mc.replicas": 2},
    "free-energy": {"lattice.n_list": [2, 4, 8], "ensemble.disorders": 200, "mc.replicas": 2,
                    "mc.burn_in": 500, "mc.sweeps": 4000, "mc.thinning": 2},
}

_BY_KEY = {f[0]: f for f in FIELDS}

# message fragment -> field, for errors raised by PerturbationSpec
_PERT_FIELDS = [("mode 'off'", "perturbation.alpha"), ("mode", "perturbation.mode"),
                ("xi law", "perturbation.xi_law"), ("p_max", "perturbation.p_max"),
                ("cn_exponent", "perturbation.cn_exponent")]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending dotted key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    dim: int
    n_list: tuple
    beta: float
    h: float
    u: float
    r: float
    alpha: tuple  # sorted (p, alpha_p) pairs
    p_max: int
    cn_exponent: float
    cn_prefactor: float
    xi_law: str
    pert_mode: str
    replicas: int
    burn_in: int
    sweeps: int
    thinning: int
    initial_width: float
    epoch_length: int
    disorders: int
    seed: int
    workers: int
    out: str
    gg_m: int
    gg_f_specs: tuple
    ibp_inner: str
    beta_points: int
    h_grid: tuple
    exact_sites: int
    c_list: tuple
    audit_points: tuple

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        for key in data:
            if key not in _BY_KEY:
                raise ConfigError(key, "unknown configuration key")
        kind = data.get("experiment.kind", _BY_KEY["experiment.kind"][3])
        if kind not in KINDS:
            raise ConfigError("experiment.kind", f"unknown kind {kind!r}")
        merged = {k: f[3] for k, f in _BY_KEY.items()}
        merged.update(KIND_DEFAULTS.get(kind, {}))
        merged.update(data)
        values = {}
        for key, attr, typ, _, _ in FIELDS:
            values[attr] = _coerce(key, typ, merged[key])
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("<file>", "config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {}
        for key, attr, typ, _, _ in FIELDS:
            value = getattr(self, attr)
            if typ is dict:
                value = {str(p): a for p, a in value}
            elif typ is list:
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[key] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        by_attr = {f[1]: f[0] for f in FIELDS}
        for attr, value in changes.items():
            data[by_attr[attr]] = value
        return ExperimentConfig.from_dict(data)

    def validate(self):
        try:
            self.model_params()
        except ValueError as exc:
            name = str(exc).split()[0]
            raise ConfigError(f"model.{name}", str(exc)) from None
        try:
            self.perturbation()
        except ValueError as exc:
            msg = str(exc)
            key = next((k for word, k in _PERT_FIELDS if word in msg), "perturbation.alpha")
            raise ConfigError(key, msg) from None
        checks = [
            ("lattice.dim", self.dim >= 1, "must be >= 1"),
            ("lattice.n_list", len(self.n_list) > 0 and all(n >= 1 for n in self.n_list),
             "needs at least one side length >= 1"),
            ("mc.replicas", self.replicas >= 1, "must be >= 1"),
            ("mc.burn_in", self.burn_in >= 0, "must be >= 0"),
            ("mc.thinning", self.thinning >= 1, "must be >= 1"),
            ("mc.sweeps", self.sweeps >= self.thinning, "must be at least one thinning interval"),
            ("mc.initial_width", self.initial_width > 0, "must be positive"),
            ("mc.epoch_length", self.epoch_length >= 1, "must be >= 1"),
            ("ensemble.disorders", self.disorders >= 1, "must be >= 1"),
            ("run.seed", 0 <= self.seed < 2**64, "must be an unsigned 64-bit integer"),
            ("run.workers", self.workers >= 0, "must be >= 0"),
            ("gg.m", self.gg_m >= 2, "must be >= 2"),
            ("ibp.inner", self.ibp_inner in ("auto", "exact", "mcmc"), "auto, exact or mcmc"),
            ("free_energy.beta_points", self.beta_points >= 2, "must be >= 2"),
            ("free_energy.exact_sites", 0 <= self.exact_sites <= EXACT_SITE_CAP,
             f"must lie in [0, {EXACT_SITE_CAP}]"),
            ("perturbation_audit.c_list", all(c > 0 for c in self.c_list), "values must be > 0"),
            ("audit.points", all(len(p) == 4 for p in self.audit_points),
             "each point is [beta, h, u, r]"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, msg)

    def model_params(self) -> ModelParams:
        return ModelParams(self.beta, self.h, self.u, self.r)

    def perturbation(self) -> PerturbationSpec:
        return PerturbationSpec(dict(self.alpha), self.p_max, self.cn_exponent,
                                self.cn_prefactor, self.xi_law, self.pert_mode)

    @property
    def samples(self) -> int:
        return self.sweeps // self.thinning

    def resolved_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        env = os.environ.get("GLASLAB_THREADS")
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError("run.workers", f"GLASLAB_THREADS={env!r} is not an integer")
        return 1

    def identity(self) -> dict:
        """Fields that determine results (worker count and output path excluded)."""
        data = self.to_dict()
        data.pop("run.workers")
        data.pop("run.out")
        return data


def _coerce(key, typ, value):
    try:
        if typ is bool:
            return bool(value)
        if typ is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(value)
        if typ is float:
            return float(value)
        if typ is str:
            if not isinstance(value, str):
                raise ValueError("not a string")
            return value
        if typ is dict:
            if isinstance(value, str):
                value = parse_alpha(value)
            return tuple(sorted((int(p), float(a)) for p, a in dict(value).items()))
        if typ is list:
            if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
                raise ValueError("not a list")
            return tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot read {value!r}: {exc}") from None
    raise ConfigError(key, "unsupported type")


def parse_alpha(text: str) -> dict:
    """``"2=1,3=0.5"`` -> ``{2: 1.0, 3: 0.5}``."""
    out = {}
    for part in filter(None, (s.strip() for s in text.split(","))):
        p, _, v = part.partition("=")
        out[int(p)] = float(v)
    return out


def schema() -> dict:
    """JSON-schema description of the config document (shipped as config_schema.json)."""
    json_types = {int: "integer", float: "number", str: "string", list: "array", dict: "object"}
    props = {}
    for key, _, typ, default, help_text in FIELDS:
        props[key] = {"type": json_types[typ], "default": default, "description": help_text}
    props["experiment.kind"]["enum"] = list(KINDS)
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "glaslab experiment configuration",
        "type": "object",
        "additionalProperties": False,
        "properties": props,
        "x-kind-defaults": KIND_DEFAULTS,
    }
