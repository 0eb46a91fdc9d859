"""TOML run configuration, named presets, and the run manifest."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .datasets import generate_bilinear_affinity, generate_blobs, load_affinity_table
from .engine import ExperimentConfig
from .errors import AALError, ConfigError
from .learners import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# section -> key -> accepted python types
SCHEMA: dict[str, dict[str, tuple[type, ...]]] = {
    "dataset": {
        "kind": (str,), "seed": (int,), "path": (str,),
        "n_drugs": (int,), "n_proteins": (int,), "latent_rank": (int,), "noise_std": (int, float),
        "n_classes": (int,), "per_class": (int,), "n_features": (int,),
        "center_spread": (int, float), "cluster_std": (int, float),
    },
    "experiment": {
        "m0": (int,), "n_add": (int,), "n_delete": (int,), "max_iterations": (int,),
        "target": (int, float), "max_label_budget": (int,), "committee_size": (int,),
        "seed": (int,), "metric_every": (int,), "warmup": (int,), "coverage_k": (int,),
        "hist_buckets": (int,), "allow_shrink": (bool,), "replications": (int,),
    },
    "policy": {"add": (str,), "delete": (str,)},
    "model": {"embed_dim": (int,)},
    "train": {
        "learning_rate": (int, float), "batch_size": (int,), "max_epochs": (int,), "patience": (int,),
        "retrain_mode": (str,), "validation_fraction": (int, float), "momentum": (int, float),
        "grad_clip": (int, float),
    },
}

DEFAULTS = {
    "dataset": {"kind": "bilinear", "seed": 0, "n_drugs": 50, "n_proteins": 30, "latent_rank": 4,
                "noise_std": 0.1},
    "experiment": {"replications": 1},
    "policy": {},
    "model": {},
    "train": {},
}

_DESK_TRAIN = {"learning_rate": 0.05, "batch_size": 16, "max_epochs": 300, "patience": 10,
               "momentum": 0.9, "grad_clip": 5.0, "validation_fraction": 0.2}

PRESETS: dict[str, dict] = {
    # protocol constants of the full-scale affinity study; needs a KIBA-format table
    "kiba_paper": {
        "dataset": {"kind": "table"},
        "experiment": {"m0": 64, "n_add": 64, "n_delete": 8, "max_iterations": 300, "target": 0.3,
                       "committee_size": 5, "coverage_k": 1000},
        "policy": {"add": "hybrid(greedy:32,variance:32)", "delete": "hybrid(greedy:32,variance:32)"},
        "model": {"embed_dim": 128},
        "train": {"learning_rate": 0.001, "batch_size": 64, "max_epochs": 100, "patience": 3},
    },
    # image-classification protocol on 10 Gaussian blobs
    "cifar_paper_surrogate": {
        "dataset": {"kind": "blobs", "n_classes": 10, "per_class": 200, "n_features": 10,
                    "center_spread": 1.0, "cluster_std": 1.5, "seed": 0},
        "experiment": {"m0": 128, "n_add": 32, "n_delete": 4, "max_iterations": 30, "committee_size": 5},
        "policy": {"add": "entropy@rand2n", "delete": "rank_ensemble(entropy:1,diversity:1)@rand2n"},
        "train": {"learning_rate": 0.1, "batch_size": 64, "max_epochs": 10, "patience": 5,
                  "momentum": 0.9, "retrain_mode": "warm_start"},
    },
    # desk-scale affinity study: 50 x 30 rank-4 surrogate, AAL hybrid
    "desk_affinity": {
        "dataset": {"kind": "bilinear", "n_drugs": 50, "n_proteins": 30, "latent_rank": 4,
                    "noise_std": 0.1, "seed": 0},
        "experiment": {"m0": 16, "n_add": 16, "n_delete": 2, "max_iterations": 200, "target": 0.3,
                       "committee_size": 3, "coverage_k": 50},
        "policy": {"add": "hybrid(greedy:8,variance:8)", "delete": "hybrid(greedy:8,variance:8)"},
        "model": {"embed_dim": 16},
        "train": dict(_DESK_TRAIN),
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for section, values in over.items():
        out.setdefault(section, {}).update(values)
    return out


def validate_raw(raw: dict) -> None:
    for section, values in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"[{section}]: unknown section")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}]: expected a table of key = value pairs")
        for key, value in values.items():
            types = SCHEMA[section].get(key)
            if types is None:
                raise ConfigError(f"{section}.{key}: unknown key")
            if isinstance(value, bool) and bool not in types:
                raise ConfigError(f"{section}.{key}: expected {types[0].__name__}, got bool")
            if not isinstance(value, types):
                raise ConfigError(f"{section}.{key}: expected {types[0].__name__}, got {type(value).__name__}")


def parse_override(text: str) -> tuple[str, str, object]:
    """``section.key=value`` with the value parsed as a TOML scalar (bare strings allowed)."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r}: expected section.key=value")
    lhs, rhs = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {rhs.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = rhs.strip()
    return section, key, value


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> dict:
    """Resolve defaults <- preset <- file <- overrides into one validated raw dict."""
    raw = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        raw = _merge(raw, PRESETS[preset])
    if path is not None:
        try:
            with open(path, "rb") as fh:
                text = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        validate_raw(text)
        raw = _merge(raw, text)
    if overrides:
        raw = _merge(raw, overrides)
    validate_raw(raw)
    build_experiment_config(raw)  # fail early on bad values
    return raw


def build_experiment_config(raw: dict) -> ExperimentConfig:
    exp = dict(raw.get("experiment", {}))
    exp.pop("replications", None)
    policy = raw.get("policy", {})
    if "add" in policy:
        exp["add_policy"] = policy["add"]
    if "delete" in policy:
        exp["del_policy"] = policy["delete"]
    if "embed_dim" in raw.get("model", {}):
        exp["embed_dim"] = raw["model"]["embed_dim"]
    try:
        exp["train"] = TrainConfig(**raw.get("train", {}))
        return ExperimentConfig(**exp)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def build_dataset(spec: dict):
    kind = spec.get("kind")
    seed = spec.get("seed", 0)
    try:
        if kind == "bilinear":
            return generate_bilinear_affinity(spec["n_drugs"], spec["n_proteins"], spec["latent_rank"],
                                              float(spec["noise_std"]), seed)
        if kind == "blobs":
            return generate_blobs(spec["n_classes"], spec["per_class"], spec["n_features"],
                                  float(spec["center_spread"]), float(spec["cluster_std"]), seed)
        if kind == "table":
            if "path" not in spec:
                raise ConfigError("dataset.path: required for kind 'table'")
            return load_affinity_table(spec["path"])
    except KeyError as exc:
        raise ConfigError(f"dataset.{exc.args[0]}: required for kind {kind!r}") from None
    raise ConfigError(f"dataset.kind: unknown kind {kind!r} (bilinear, blobs, table)")


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def make_manifest(raw: dict, seeds: list[int], dataset, out_dir) -> dict:
    return {
        "config_hash": config_hash(raw),
        "seeds": list(seeds),
        "dataset": {**raw["dataset"], **dataset.descriptor()},
        "output_dir": str(Path(out_dir)),
        "software_version": __version__,
        "config": raw,
    }


def write_manifest(manifest: dict, out_dir) -> Path:
    path = Path(out_dir) / "manifest.json"
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    if path.exists():
        if path.read_text() != text:
            raise AALError(f"{path} exists with different contents; use a fresh output directory")
        return path
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: unreadable manifest ({exc})") from None
    if "config" not in manifest:
        raise ConfigError(f"{path}: manifest has no 'config' section")
    validate_raw(manifest["config"])
    return manifest
