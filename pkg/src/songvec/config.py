"""Run configuration: defaults, YAML config files, and dotted CLI overrides.

Precedence: command-line `--set` overrides > config file > built-in defaults.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import yaml

DEFAULTS: dict = {
    "seed": 0,
    "workers": 1,
    "out_dir": "runs",
    "paths": {
        "sequences": None,
        "catalog": None,
        "embeddings": None,
        "observations": None,
        "hard_negatives": None,
        "study": None,
    },
    "split": {"ratios": [0.98, 0.01, 0.01]},
    "vocab": {"min_count": 5},
    "hyperparams": {
        "dim": 100,
        "window": 5,
        "ns_exponent": 0.75,
        "negatives": 5,
        "learning_rate": 0.025,
        "epochs": 5,
    },
    "train": {"budget": None, "mask_last": False},
    "eval": {
        "k": 100,
        "pair_mode": "adjacent",
        "split": "validation",
        "max_inset_pairs": 10000,
        "max_outset_pairs": None,
        "include_inset": True,
        "coherence_modes": [],
    },
    "coherence": {
        "n_neighbors": 50,
        "n_songs": 500,
        "min_plays": 10000,
        "top_genres": 10,
        "n_artists": 125,
        "min_songs_per_artist": 25,
        "songs_per_artist": 5,
        "popularity_strata": 5,
    },
    "hardneg": {
        "min_cooccurrence": 5,
        "threshold": None,
        "threshold_factor": 1e-7,
        "threshold_base": "slots",
    },
    "hpo": {
        "objective": "hitrate",
        "alpha": 0.1,
        "max_trials": 25,
        "time_budget_factor": 1.25,
    },
    "ladder": {"rates": [0.01, 0.02, 0.05], "max_trials": 25},
    "popularity": {
        "buckets": 5,
        "samples_per_cell": 1000,
        "frequent_threshold": 100,
        "quantization": 1,
    },
    "synth": {
        "n_songs": 5000,
        "n_genres": 8,
        "p_within": 0.9,
        "zipf_exponent": 1.0,
        "n_sequences": 50000,
        "min_len": 8,
        "max_len": 16,
        "rank_window": 80,
        "pop_jump_prob": 0.3,
        "jump_zipf_exponent": 1.2,
        "artist_size": 25,
        "n_observations": 0,
    },
}


class ConfigError(ValueError):
    """Invalid configuration or command-line input (CLI exit code 2)."""


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_dotted(config: dict, dotted: str, raw_value: str) -> None:
    *path, leaf = dotted.split(".")
    node = config
    for part in path:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        node = node[part]
    if leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[leaf] = yaml.safe_load(raw_value)


def resolve(config_path: str | None = None, overrides: list[str] | None = None) -> dict:
    """Merge defaults, an optional YAML file and `key.path=value` overrides."""
    config = copy.deepcopy(DEFAULTS)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file must be a mapping: {path}")
        config = _deep_merge(config, loaded)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        _apply_dotted(config, dotted.strip(), raw.strip())
    return config


def dump(config: dict) -> str:
    return json.dumps(config, indent=2, sort_keys=True)
