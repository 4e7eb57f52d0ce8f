"""Checklist-shaped experiment configuration.

Configs are YAML files whose sections mirror the reporting checklist
(hypothesis / data / counting / objective / optimizer / init / isoflop /
validation / report). Every section may be omitted and is filled from
defaults; the fully resolved config is validated against the published JSON
schema (shipped as package data) and embedded verbatim in every report, so a
report is always reproducible from itself.
"""

from __future__ import annotations

import copy
import hashlib
import importlib.resources
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from .counting import CountingPolicy
from .errors import ConfigError
from .fitters import GridSpec, InitStrategy, OptimizerSpec
from .forms import FORM_COORDS
from .ledger import FilterSpec
from .objectives import ObjectiveSpec

SCHEMA_VERSION = 1

DEFAULTS: dict = {
    "hypothesis": {"form": "chinchilla"},
    "data": {
        "path": None,
        "format": "csv",
        "filters": {
            "checkpoint_policy": "all",
            "checkpoint_fraction": None,
            "lr_policy": "all",
            "fixed_lr": None,
            "max_n": None,
            "dn_min": None,
            "dn_max": None,
            "n_convention": "total",
        },
    },
    "counting": {
        "embeddings_in_n": True,
        "embeddings_in_c": True,
        "flop_method": "six_nd",
        "arch_table": None,
        "flop_constant": 6.0,
    },
    "objective": {"kind": "log_huber", "delta": 1e-3, "space": None},
    "optimizer": {
        "kind": "lbfgs",
        "tol": 1e-6,
        "max_iter": 500,
        "grad_mode": "analytic",
        "fd_h": 1e-6,
        "memory": 10,
        "density_multiplier": 5,
    },
    "init": {
        "strategy": "top_k_of_grid",
        "k": 100,
        "seed": 0,
        "grid": None,
        "params": None,
        "preset_file": None,
        "preset": None,
    },
    "isoflop": {"enabled": False, "budgets": None},
    "validation": {"split_c": None, "bootstrap": None},
    "report": {"reference_points": []},
}


def _load_schema() -> dict:
    text = (
        importlib.resources.files("lawlab")
        .joinpath("schema/experiment-config.schema.json")
        .read_text(encoding="utf-8")
    )
    return json.loads(text)


def deep_merge(base: dict, override: dict) -> dict:
    """Nested-dict merge: dict values recurse, everything else replaces."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment configuration plus its origin directory."""

    raw: dict
    base_dir: Path

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        resolved = deep_merge(DEFAULTS, data or {})
        try:
            jsonschema.validate(resolved, _load_schema())
        except jsonschema.ValidationError as exc:
            section = ".".join(str(p) for p in exc.absolute_path) or "(root)"
            raise ConfigError(exc.message, section=section)
        cfg = cls(resolved, Path(base_dir))
        cfg._cross_validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a YAML mapping")
        return cls.from_dict(data, base_dir=path.parent)

    def _cross_validate(self):
        cfg = self.raw
        if cfg["optimizer"]["kind"] == "nls" and cfg["objective"]["kind"] != "mse":
            raise ConfigError(
                f"nonlinear least squares requires objective.kind = mse, "
                f"got {cfg['objective']['kind']!r}",
                section="optimizer.kind",
            )
        if cfg["counting"]["flop_method"] == "detailed" and not cfg["counting"]["arch_table"]:
            raise ConfigError(
                "detailed FLOP accounting needs an arch_table path",
                section="counting.arch_table",
            )
        init = cfg["init"]
        if init["strategy"] == "fixed":
            has_preset = bool(init["preset_file"]) and bool(init["preset"])
            if init["params"] is None and not has_preset:
                raise ConfigError(
                    "fixed initialization needs params or preset_file + preset",
                    section="init",
                )
        if init["strategy"] in ("top_k_of_grid", "random_k") and not init["k"]:
            raise ConfigError(f"{init['strategy']} requires k", section="init.k")
        filters = cfg["data"]["filters"]
        if filters["checkpoint_policy"] == "min_fraction" and filters["checkpoint_fraction"] is None:
            raise ConfigError(
                "min_fraction needs checkpoint_fraction",
                section="data.filters.checkpoint_fraction",
            )
        if filters["lr_policy"] == "fixed" and not filters["fixed_lr"]:
            raise ConfigError(
                "fixed lr policy needs fixed_lr", section="data.filters.fixed_lr"
            )

    # -- canonical serialization -------------------------------------------

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=False)

    # -- typed views ---------------------------------------------------------

    @property
    def form(self) -> str:
        return self.raw["hypothesis"]["form"]

    @property
    def flop_constant(self) -> float:
        return float(self.raw["counting"]["flop_constant"])

    def data_path(self, override: str | None = None) -> Path:
        path = override or self.raw["data"]["path"]
        if not path:
            raise ConfigError("no data path given (data.path or --data)", section="data.path")
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def filter_spec(self) -> FilterSpec:
        f = self.raw["data"]["filters"]
        return FilterSpec(
            checkpoint_policy=f["checkpoint_policy"],
            checkpoint_fraction=f["checkpoint_fraction"],
            lr_policy=f["lr_policy"],
            fixed_lr=f["fixed_lr"],
            max_n=int(f["max_n"]) if f["max_n"] is not None else None,
            dn_min=f["dn_min"],
            dn_max=f["dn_max"],
            n_convention=f["n_convention"],
        )

    def counting_policy(self) -> CountingPolicy:
        c = self.raw["counting"]
        return CountingPolicy(
            embeddings_in_n=c["embeddings_in_n"],
            embeddings_in_c=c["embeddings_in_c"],
            flop_method=c["flop_method"],
        )

    def arch_table_path(self) -> Path | None:
        path = self.raw["counting"]["arch_table"]
        if not path:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def objective_spec(self) -> ObjectiveSpec:
        o = self.raw["objective"]
        delta = o["delta"] if o["kind"] in ("huber", "log_huber") else None
        return ObjectiveSpec(kind=o["kind"], delta=delta, space=o["space"])

    def optimizer_spec(self) -> OptimizerSpec:
        o = self.raw["optimizer"]
        return OptimizerSpec(
            kind=o["kind"],
            tol=o["tol"],
            max_iter=o["max_iter"],
            grad_mode=o["grad_mode"],
            fd_h=o["fd_h"],
            memory=o["memory"],
            density_multiplier=o["density_multiplier"],
        )

    def grid_spec(self) -> GridSpec:
        overrides = None
        if self.raw["init"]["grid"]:
            overrides = {
                name: (axis["lo"], axis["hi"], axis["count"])
                for name, axis in self.raw["init"]["grid"].items()
            }
        return GridSpec.default(self.form, overrides)

    def init_strategy(self) -> InitStrategy:
        init = self.raw["init"]
        kind = init["strategy"]
        params = None
        if kind == "fixed":
            if init["params"] is not None:
                params = tuple(float(p) for p in init["params"])
            else:
                params = self._load_preset(init["preset_file"], init["preset"])
        needs_k = kind in ("top_k_of_grid", "random_k")
        return InitStrategy(
            kind=kind,
            grid=self.grid_spec(),
            k=init["k"] if needs_k else None,
            seed=init["seed"] if kind == "random_k" else None,
            params=params,
        )

    def _load_preset(self, preset_file: str, preset: str) -> tuple[float, ...]:
        path = Path(preset_file)
        if not path.is_absolute():
            path = self.base_dir / path
        try:
            with open(path, "r", encoding="utf-8") as fh:
                presets = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read preset file {path}: {exc}", section="init.preset_file")
        if preset not in presets:
            raise ConfigError(f"preset {preset!r} not in {path}", section="init.preset")
        entry = presets[preset]
        coords = FORM_COORDS[self.form]
        missing = [c for c in coords if c not in entry]
        if missing:
            raise ConfigError(
                f"preset {preset!r} lacks coordinates {missing} for form {self.form}",
                section="init.preset",
            )
        return tuple(float(entry[c]) for c in coords)

    def isoflop_budgets(self) -> tuple[list[float] | None, int]:
        """Return (explicit budgets or None, auto count)."""
        budgets = self.raw["isoflop"]["budgets"]
        if budgets is None:
            return None, 8
        if isinstance(budgets, dict):
            return None, int(budgets["auto"]["count"])
        return [float(b) for b in budgets], 8


@dataclass(frozen=True)
class MatrixConfig:
    """A base experiment config plus named variant overrides."""

    base: ExperimentConfig
    variants: tuple[tuple[str, dict], ...]

    @classmethod
    def load(cls, path: str | Path) -> "MatrixConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("matrix config must be a YAML mapping")
        if "base" in data and isinstance(data["base"], str):
            base_path = Path(data["base"])
            if not base_path.is_absolute():
                base_path = path.parent / base_path
            base = ExperimentConfig.load(base_path)
        else:
            base = ExperimentConfig.from_dict(data.get("base") or {}, base_dir=path.parent)
        raw_variants = data.get("variants")
        if not raw_variants:
            raise ConfigError("matrix config needs a non-empty variants list", section="variants")
        variants = []
        seen = set()
        for i, entry in enumerate(raw_variants):
            if not isinstance(entry, dict) or "name" not in entry:
                raise ConfigError(f"variant #{i} needs a name", section="variants")
            name = str(entry["name"])
            if name in seen:
                raise ConfigError(f"duplicate variant name {name!r}", section="variants")
            seen.add(name)
            variants.append((name, entry.get("overrides") or {}))
        return cls(base, tuple(variants))

    def variant_config(self, name: str) -> ExperimentConfig:
        overrides = dict(self.variants)[name]
        return ExperimentConfig.from_dict(
            deep_merge(self.base.raw, overrides), base_dir=self.base.base_dir
        )
