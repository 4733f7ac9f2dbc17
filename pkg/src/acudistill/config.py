"""Pipeline configuration: one JSON file, dotted-key overrides, seed derivation."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .coreselect import SimilarityConfig
from .errors import ConfigError
from .training import TrainConfig

DATA_ENV = "ACUDISTILL_DATA"

# fixed ids mixed with the root seed, one per randomized stage
STAGE_IDS = {"split": 1, "train": 2, "ivte": 3, "sv_profile": 4}

DEFAULTS = {
    "dataset": "ml-100k/ratings.csv",
    "workdir": "runs/default",
    "seed": 0,
    "preprocess": True,
    "split": {"test_fraction": 0.2},
    "similarity": {"use_item_similarity": True, "use_ratings": True, "rank_based": True,
                   "top_k_users": 50, "top_k_items": 50},
    "core": {"fraction": 0.1, "s": None},
    "train": {"zeta": 2, "k": 10, "alpha": 0.01, "beta": 0.0001, "lam": 0.0, "gamma": 0.0,
              "n_batches": 8, "inner_iters": 40, "outer_iters": 20, "refactor_every": 1,
              "minibatch_means": False, "early_stop_mae": None},
    "eval": {"runs": 20, "users_per_run": 50, "n_factors": [20], "train_stop": 0.2,
             "beta": 0.001, "gamma": 0.0, "max_iters": 500},
    "sv_profile": {"top_k": None},
}


def stage_seed(root, stage):
    """Seed for one pipeline stage, derived from the root seed."""
    seq = np.random.SeedSequence([int(root), STAGE_IDS[stage]])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def _merge(base, extra, where=""):
    for key, value in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value
    return base


def apply_override(raw, assignment):
    """Apply one ``dotted.key=value`` override; the value is parsed as JSON if possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    parts = key.strip().split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key}")
    node[parts[-1]] = value
    return raw


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path=None, overrides=()):
        raw = copy.deepcopy(DEFAULTS)
        base_dir = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                _merge(raw, json.loads(path.read_text()))
            except FileNotFoundError:
                raise ConfigError(f"config file {path} not found") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        for item in overrides:
            apply_override(raw, item)
        return cls(raw, base_dir)

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def workdir(self):
        return (self.base_dir / self.raw["workdir"]).resolve()

    def dataset_path(self):
        p = Path(self.raw["dataset"])
        if p.is_absolute():
            return p
        local = self.base_dir / p
        if local.exists():
            return local
        return Path(os.environ.get(DATA_ENV, self.base_dir / "data")) / p

    def similarity(self):
        return SimilarityConfig(**self.raw["similarity"])

    def core_size(self, n_users):
        core = self.raw["core"]
        zeta = int(self.raw["train"]["zeta"])
        s = int(core["s"]) if core.get("s") is not None else int(core["fraction"] * n_users)
        return s - s % zeta

    def train_config(self, n_users):
        known = {f.name for f in fields(TrainConfig)}
        params = {k: v for k, v in self.raw["train"].items() if k in known}
        return TrainConfig(s=self.core_size(n_users), seed=stage_seed(self.seed, "train"), **params)

    def validate(self, check_dataset=True):
        """Check every sub-config; raise :class:`ConfigError` on the first problem."""
        try:
            self.similarity()
            frac = self.raw["split"]["test_fraction"]
            if not 0 < frac < 1:
                raise ConfigError("split.test_fraction must lie in (0, 1)")
            core = self.raw["core"]
            if core.get("s") is None and not 0 < core.get("fraction", 0) < 1:
                raise ConfigError("core needs s or a fraction in (0, 1)")
            TrainConfig(s=int(self.raw["train"]["zeta"]) * int(self.raw["train"]["k"]),
                        **{k: v for k, v in self.raw["train"].items()}).validate()
            ev = self.raw["eval"]
            if ev["runs"] < 1 or ev["users_per_run"] < 1 or ev["max_iters"] < 0:
                raise ConfigError("eval.runs, eval.users_per_run must be >= 1")
            if any(int(n) < 0 for n in ev["n_factors"]):
                raise ConfigError("eval.n_factors must be non-negative")
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if check_dataset and not self.dataset_path().exists():
            raise ConfigError(f"dataset {self.dataset_path()} does not exist")
        return self

    def to_json(self):
        return copy.deepcopy(self.raw)
