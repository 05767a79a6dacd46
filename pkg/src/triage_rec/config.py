"""Run configuration: defaults, the JSON config file, and flag overrides.

One nested dict drives everything. Values resolve as CLI flag > config file >
built-in default. Classifier defaults follow the best settings from the
hyperparameter search grids; the `grids` section holds the full search
spaces for the `ablate`/search tooling.
"""

from __future__ import annotations

import copy
import json
import os

from .errors import UsageError

DEFAULTS: dict = {
    "seed": 0,
    "threads": 1,
    "deterministic": False,
    "split": {
        # epoch seconds; must be supplied for real corpora, synth fills them in
        "train_end": None,
        "validation_end": None,
        "test_end": None,
    },
    "textproc": {
        "vocab_size": 10000,
        "ngram_max": 3,
        "stop_df_fraction": 0.95,
        "include_subject": True,
        "blocklist": None,
        "sequence_length": 150,
        "unigram_min_count": 2,
        "unigram_max_size": None,
    },
    "embeddings": {
        "window": 5,
        "dim": 100,
        "negatives": 5,
        "epochs": 5,
        "learning_rate": 0.025,
        "min_count": 5,
    },
    "history": {"mode": "posneg", "h": 10},
    "aggregation": {
        # simple average for tfidf/embed content, dot attention for cnn
        "tfidf": "uniform",
        "embed": "uniform",
        "cnn": "dot",
        "gamma": 1.0,
        "concat_hidden": 32,
    },
    "similarity": True,
    "lr": {"inverse_reg": 1.0, "positive_weight": 1.0,
           "learning_rate": 0.001, "batch_size": 256, "epochs": 40, "patience": 5},
    "gbdt": {"n_trees": 500, "max_depth": 5, "learning_rate": 0.1, "positive_weight": 5.0},
    "mlp": {"hidden": 128, "batch_size": 128, "learning_rate": 0.0005,
            "dropout_keep": 0.5, "positive_weight": 10.0, "epochs": 10, "patience": 5},
    "cnn": {"widths": [1, 2, 3], "n_filters": [256, 128, 64]},
    "evaluation": {"seeds": 5, "histogram_bins": 50, "figures": True},
    "synth": {},  # GeneratorConfig field overrides
    "grids": {
        "lr": {
            "inverse_reg": [0.01, 0.1, 1.0, 10.0, 100.0],
            "positive_weight": [1.0, 5.0, 10.0, 15.0, "balanced"],
        },
        "gbdt": {
            "n_trees": [50, 100, 200, 300, 500, 800],
            "max_depth": [2, 3, 4, 5],
            "positive_weight": [5.0, 10.0, 15.0, 20.0, "balanced"],
            "learning_rate": [0.01, 0.1, 1.0],
        },
        "mlp": {
            "batch_size": [32, 64, 128, 256],
            "learning_rate": [0.001, 0.0005, 0.0001],
            "dropout_keep": [0.5, 1.0],
            "positive_weight": [5.0, 10.0, 15.0, 20.0],
        },
    },
}


def load_config(path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        _merge(cfg, user)
    return cfg


def _merge(base: dict, override: dict) -> None:
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _merge(base[key], val)
        else:
            base[key] = val


def resolve_threads(flag_value: int | None, cfg: dict) -> int:
    """--threads flag, then TRIAGE_REC_THREADS, then the config value."""
    if flag_value is not None:
        return max(1, flag_value)
    env = os.environ.get("TRIAGE_REC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"bad TRIAGE_REC_THREADS value {env!r}") from exc
    return max(1, int(cfg.get("threads", 1)))
