"""YAML run configurations with strict key checking."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .ingest import PartitionScheme
from .mfm import MfmConfig
from .sampler import SamplerConfig

PRESETS = {
    "full": {"n_iter": 10_000, "thin": 2, "burn_in": 2_000},
    "desk": {"n_iter": 3_000, "thin": 2, "burn_in": 500},
    "smoke": {"n_iter": 200, "thin": 2, "burn_in": 20},
}

SCHEME_KEYS = {f.name for f in dataclasses.fields(PartitionScheme)}
INGEST_KEYS = SCHEME_KEYS | {"min_attempts", "max_period", "columns"}


class ConfigError(ValueError):
    pass


def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            obj = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return obj


def dump_yaml(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(obj, fh, sort_keys=False, default_flow_style=None)


def _check_keys(obj: dict, allowed, where: str):
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def _mfm(obj, where):
    allowed = {f.name for f in dataclasses.fields(MfmConfig)}
    if isinstance(obj, dict):
        obj = [obj] * 3
    if not isinstance(obj, list) or len(obj) != 3:
        raise ConfigError(f"{where}: 'mfm' must be a mapping or a list of three mappings")
    out = []
    for i, m in enumerate(obj):
        if not isinstance(m, dict):
            raise ConfigError(f"{where}: mfm[{i}] must be a mapping")
        _check_keys(m, allowed, f"{where}: mfm[{i}]")
        try:
            out.append(MfmConfig(**m))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: mfm[{i}]: {exc}") from exc
    return tuple(out)


def sampler_config(obj: dict | None, seed: int, where: str = "sampler config") -> SamplerConfig:
    """Build a :class:`SamplerConfig` from a mapping plus the run seed.

    A ``preset`` key (full, desk, smoke) fills the schedule; explicit keys
    override it. A ``seed`` key, if present, must equal ``seed``.
    """
    obj = dict(obj or {})
    allowed = {f.name for f in dataclasses.fields(SamplerConfig)} | {"preset"}
    _check_keys(obj, allowed, where)
    merged = {}
    preset = obj.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"{where}: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    merged.update(obj)
    if "seed" in merged and merged["seed"] != seed:
        raise ConfigError(f"{where}: seed {merged['seed']} conflicts with --seed {seed}")
    merged["seed"] = seed
    if "mfm" in merged:
        merged["mfm"] = _mfm(merged["mfm"], where)
    if "adjacency" in merged:
        adj = merged["adjacency"]
        if not isinstance(adj, list) or len(adj) != 3:
            raise ConfigError(f"{where}: 'adjacency' must list three entries (null or {{size, edges}})")
        merged["adjacency"] = tuple(adj)
    try:
        return SamplerConfig(**merged)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def ingest_settings(obj: dict | None, where: str = "scheme config"):
    """Split an ingest mapping into (PartitionScheme, min_attempts, max_period, columns)."""
    obj = dict(obj or {})
    _check_keys(obj, INGEST_KEYS, where)
    min_attempts = int(obj.pop("min_attempts", 300))
    max_period = int(obj.pop("max_period", 4))
    columns = obj.pop("columns", None)
    if columns is not None:
        if not isinstance(columns, dict):
            raise ConfigError(f"{where}: 'columns' must be a mapping")
        _check_keys(columns, {"player_id", "x", "y", "period"}, f"{where}: columns")
    for key in ("basket_origin", "court_bounds"):
        if key in obj:
            obj[key] = tuple(float(v) for v in obj[key])
    try:
        scheme = PartitionScheme(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return scheme, min_attempts, max_period, columns


def scheme_to_dict(scheme: PartitionScheme) -> dict:
    out = dataclasses.asdict(scheme)
    out["basket_origin"] = list(scheme.basket_origin)
    out["court_bounds"] = list(scheme.court_bounds)
    return out
