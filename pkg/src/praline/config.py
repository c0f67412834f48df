"""Declarative run configuration: defaults, file, environment and flag overrides."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any

from .corpus import ConfigError
from .trainer import ABLATIONS, Ablation, Hyperparameters

SEED_ENV = "PRALINE_SEED"

# command-line spelling of the ablation rows
ABLATION_ALIASES = {
    "full": "full",
    "w/o-full-conv": "no_full_conv",
    "w/o-domain": "no_domain",
    "w/o-fluent-resp": "no_fluent",
    "train-separately": "separate",
}
ABLATION_ALIASES.update({k: k for k in ABLATIONS})


def default_config() -> dict:
    hp = asdict(Hyperparameters())
    hp.pop("seed")
    hp["lambdas"] = list(hp["lambdas"])
    return {
        "data": {
            "triples": None,
            "labels": None,
            "conversations": None,
            "domains": None,
            "split": [0.7, 0.15, 0.15],
            "split_seed": 7,
        },
        "embedder": {"method": "hashed-bag", "dim": 64, "seed": 0, "cache_dir": None},
        "profile": "desk",
        "training": hp,
        "ablation": asdict(Ablation()),
        "seed": 7,
        "output_dir": None,
    }


def deep_merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = deep_merge(out[k], v, where + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_assignment(text: str) -> tuple[list[str], Any]:
    """``training.epochs=5`` -> (["training", "epochs"], 5); values are JSON when they parse."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def set_path(cfg: dict, keys: list[str], value: Any) -> None:
    node = cfg
    for i, k in enumerate(keys[:-1]):
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config key {'.'.join(keys[: i + 1])!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
    node[keys[-1]] = value


def load_config_file(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    doc = _resolve_paths(doc, p.parent)
    return doc


def _resolve_paths(doc: dict, base: Path) -> dict:
    doc = copy.deepcopy(doc)
    data = doc.get("data")
    if isinstance(data, dict):
        for k in ("triples", "labels", "conversations", "domains"):
            if isinstance(data.get(k), str) and not Path(data[k]).is_absolute():
                data[k] = str((base / data[k]).resolve())
    return doc


def effective_config(
    file: str | Path | None = None,
    overrides: list[str] | tuple[str, ...] = (),
    env: dict | None = None,
) -> dict:
    """defaults <- profile <- file <- $PRALINE_SEED <- ``key=value`` overrides."""
    cfg = default_config()
    doc = load_config_file(file) if file is not None else {}
    profile = doc.get("profile", "desk")
    for k, v in _assignments(overrides):
        if k == ["profile"]:
            profile = v
    if profile != "desk":
        prof = asdict(Hyperparameters.profile(profile))
        prof.pop("seed")
        prof["lambdas"] = list(prof["lambdas"])
        cfg["training"] = prof
    cfg = deep_merge(cfg, doc)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    for keys, value in _assignments(overrides):
        set_path(cfg, keys, value)
    validate_config(cfg)
    return cfg


def _assignments(overrides):
    return [parse_assignment(o) for o in overrides]


def validate_config(cfg: dict, need_data: bool = False) -> None:
    hp = hyperparameters(cfg)
    hp.validate()
    ablation(cfg).validate()
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    split = cfg["data"]["split"]
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or any(x < 0 for x in split):
        raise ConfigError("data.split must be three non-negative fractions summing to 1")
    if cfg["embedder"]["dim"] != hp.d:
        raise ConfigError(f"embedder.dim ({cfg['embedder']['dim']}) must equal training.d ({hp.d})")
    if need_data:
        check_data_files(cfg)


def check_data_files(cfg: dict) -> None:
    for k in ("triples", "conversations", "domains"):
        v = cfg["data"][k]
        if v is None:
            raise ConfigError(f"data.{k} is not set")
        if not Path(v).exists():
            raise ConfigError(f"data file not found: {v}")
    lab = cfg["data"]["labels"]
    if lab is not None and not Path(lab).exists():
        raise ConfigError(f"data file not found: {lab}")


def hyperparameters(cfg: dict) -> Hyperparameters:
    t = dict(cfg["training"])
    names = {f.name for f in fields(Hyperparameters)}
    unknown = set(t) - names
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    if "lambdas" in t:
        t["lambdas"] = tuple(t["lambdas"])
    try:
        return Hyperparameters(**t, seed=cfg["seed"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def ablation(cfg: dict) -> Ablation:
    try:
        return Ablation(**cfg["ablation"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def apply_ablation(cfg: dict, name: str) -> None:
    key = ABLATION_ALIASES.get(name)
    if key is None:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATION_ALIASES)}")
    cfg["ablation"] = asdict(ABLATIONS[key])


def write_config(cfg: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8")
