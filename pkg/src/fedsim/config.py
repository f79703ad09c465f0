"""Experiment config files.

One experiment per INI file. The ``[experiment]`` section sets
ExperimentConfig fields by name; an optional ``[matrix]`` section lists
space- or comma-separated values whose cross-product expands into one
config per combination, each with a descriptive name suffix:

    [experiment]
    name = demo
    n_learners = 50
    rounds = 200

    [matrix]
    rule = equal dynsgd
    seed = 0 1 2

The FEDSIM_SEED environment variable, when set, overrides the seed of
every loaded config. Override strings ("key=value") apply on top of the
file, before matrix expansion.
"""
from __future__ import annotations

import configparser
import hashlib
import itertools
import os
import types
import typing
from dataclasses import fields, replace
from pathlib import Path

from .engine import ExperimentConfig

ENV_SEED = "FEDSIM_SEED"

_NONE_WORDS = {"none", "unbounded"}

_BOOL_WORDS = {
    "true": True,
    "yes": True,
    "on": True,
    "1": True,
    "false": False,
    "no": False,
    "off": False,
    "0": False,
}


def _field_types() -> dict[str, object]:
    hints = typing.get_type_hints(ExperimentConfig)
    return {f.name: hints[f.name] for f in fields(ExperimentConfig)}


_FIELD_TYPES = _field_types()


def _coerce(name: str, text: str):
    """Parse `text` into the declared type of config field `name`."""
    if name not in _FIELD_TYPES:
        raise ValueError(f"unknown config key {name!r}")
    hint = _FIELD_TYPES[name]
    # `int | None` annotations surface as types.UnionType, not typing.Union
    if typing.get_origin(hint) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text.strip().lower() in _NONE_WORDS:
            return None
        hint = args[0]
    if hint is bool:
        word = text.strip().lower()
        if word not in _BOOL_WORDS:
            raise ValueError(f"config key {name!r}: not a boolean: {text!r}")
        return _BOOL_WORDS[word]
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text.strip()


def apply_overrides(values: dict[str, object], overrides: list[str]) -> dict[str, object]:
    """Fold "key=value" strings into a config value dict."""
    out = dict(values)
    for entry in overrides:
        key, sep, raw = entry.partition("=")
        if not sep or not key:
            raise ValueError(f"override must look like key=value, got {entry!r}")
        out[key.strip()] = _coerce(key.strip(), raw)
    return out


def _expand_matrix(
    base: dict[str, object], matrix: list[tuple[str, list[object]]]
) -> list[dict[str, object]]:
    if not matrix:
        return [base]
    keys = [k for k, _ in matrix]
    combos = itertools.product(*(vals for _, vals in matrix))
    expanded = []
    base_name = str(base.get("name", "experiment"))
    for combo in combos:
        values = dict(base)
        suffix = []
        for key, val in zip(keys, combo):
            values[key] = val
            suffix.append(f"{key}-{val}")
        values["name"] = "-".join([base_name, *suffix])
        expanded.append(values)
    return expanded


def load_config(path: str | Path, overrides: list[str] | None = None) -> list[ExperimentConfig]:
    """Parse one experiment file into its (possibly expanded) config list."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    if "experiment" not in parser:
        raise ValueError(f"{path}: missing [experiment] section")
    values: dict[str, object] = {}
    for key, raw in parser["experiment"].items():
        values[key] = _coerce(key, raw)
    if overrides:
        values = apply_overrides(values, overrides)
    matrix: list[tuple[str, list[object]]] = []
    if "matrix" in parser:
        for key, raw in parser["matrix"].items():
            tokens = raw.replace(",", " ").split()
            if not tokens:
                raise ValueError(f"{path}: matrix key {key!r} lists no values")
            matrix.append((key, [_coerce(key, tok) for tok in tokens]))
    configs = []
    env_seed = os.environ.get(ENV_SEED)
    for value_set in _expand_matrix(values, matrix):
        if env_seed is not None:
            value_set["seed"] = int(env_seed)
        cfg = ExperimentConfig(**value_set)
        cfg.validate()
        configs.append(cfg)
    return configs


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=seed)


def config_hash(cfg: ExperimentConfig) -> str:
    """Order-independent fingerprint of a config's field values."""
    lines = sorted(f"{f.name}={getattr(cfg, f.name)!r}" for f in fields(cfg))
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()
