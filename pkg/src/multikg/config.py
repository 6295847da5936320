"""Flat-key run configuration.

A config file holds ``key = value`` lines (``#`` starts a comment); a
``[section]`` header prefixes the following keys with ``section.``.  A JSON
object with the same flat keys (such as an emitted ``config.json``) is also
accepted.  Precedence: overrides > file > defaults.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

from .models import TAGS, ModelKind

TASKS = ("lp", "ea", "et", "multi_lp")


class ConfigError(ValueError):
    pass


def _default_workers():
    raw = os.environ.get("MUKG_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# key: (type, default, allowed values or None); "auto" marks task/model dependent defaults
SCHEMA = {
    "task": (str, "lp", TASKS),
    "model": (str, "transe", None),
    "data": (str, "", None),
    "seed": (int, 0, None),
    "data.split_dir": (str, "", None),
    "data.lp_valid": (float, 0.05, None),
    "data.lp_test": (float, 0.05, None),
    "train.dim": (int, 100, None),
    "train.rel_dim": (int, 0, None),
    "train.norm": (str, "auto", ("auto", "L1", "L2")),
    "train.squared": (bool, False, None),
    "train.epochs": (int, 500, None),
    "train.batch_size": (int, 1000, None),
    "train.optimizer": (str, "auto", ("auto", "sgd", "adagrad", "adam")),
    "train.lr": (str, "auto", None),
    "train.workers": (int, None, None),
    "train.parallel": (str, "hogwild", ("hogwild", "sync")),
    "train.use_kernel": (bool, True, None),
    "neg.strategy": (str, "uniform", ("uniform", "self_adversarial", "truncated")),
    "neg.k": (int, 10, None),
    "neg.side": (str, "both", ("head", "tail", "both")),
    "neg.ratio": (float, 0.1, None),
    "neg.temperature": (float, 1.0, None),
    "neg.refresh": (int, 5, None),
    "loss.kind": (str, "auto", ("auto", "marginal_ranking", "limit_based", "nce_self_adversarial")),
    "loss.margin": (float, 1.0, None),
    "loss.pos_limit": (float, -0.5, None),
    "loss.neg_limit": (float, -2.0, None),
    "loss.balance": (float, 0.5, None),
    "loss.offset": (str, "auto", None),
    "control.interval": (int, 10, None),
    "control.patience": (int, 3, None),
    "control.valid_max": (int, 0, None),
    "eval.filter": (str, "train", ("train", "train+valid", "train+valid+test", "raw")),
    "eval.similarity": (str, "cosine", ("cosine", "inner", "euclidean", "csls")),
    "eval.csls_k": (int, 10, None),
    "eval.candidates": (str, "test", ("test", "all")),
    "eval.workers": (int, 1, None),
    "eval.chunk": (int, 256, None),
    "align.mode": (str, "pair", ("pair", "margin", "shared")),
    "align.weight": (float, 5.0, None),
    "align.k": (int, 5, None),
    "align.margin": (float, 1.0, None),
    "align.bootstrap": (int, 0, None),
    "align.threshold": (float, 0.9, None),
    "multi.separate": (bool, True, None),
    "multi.overlap": (str, "exact", ("exact", "entity_pair")),
    "export.format": (str, "both", ("tsv", "bin", "both", "none")),
}


def _coerce(key, value):
    typ, _, allowed = SCHEMA[key]
    if typ is bool:
        if isinstance(value, bool):
            out = value
        elif str(value).lower() in ("1", "true", "yes", "on"):
            out = True
        elif str(value).lower() in ("0", "false", "no", "off"):
            out = False
        else:
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    elif typ is int:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            out = int(value) if not isinstance(value, float) or value.is_integer() else None
            if out is None:
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    elif typ is float:
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    else:
        out = str(value)
    if allowed is not None:
        match = {a.lower(): a for a in allowed}.get(str(out).lower())
        if match is None:
            raise ConfigError(f"{key}: {out!r} is not one of {', '.join(allowed)}")
        out = match
    return out


def parse_flat(text: str, source: str = "<config>") -> dict:
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except ValueError as exc:
            raise ConfigError(f"{source}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: expected a JSON object")
        return dict(data)
    out, section = {}, ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[f"{section}.{key}" if section else key] = value
    return out


def parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def model_base(name: str) -> tuple:
    """``'rescal-et'`` -> ``('RESCAL', True)``."""
    low = name.lower()
    typed = low.endswith("-et")
    base = low[:-3] if typed else low
    return ModelKind.parse(base).tag, typed


@dataclass(frozen=True)
class TaskSpec:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def to_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, indent=2)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def model_kind(self) -> ModelKind:
        tag, _ = model_base(self["model"])
        return ModelKind.parse(tag, self["train.norm"], self["train.squared"])


def _resolve_auto(v: dict) -> None:
    tag, typed = model_base(v["model"])
    if typed and v["task"] != "et":
        raise ConfigError(f"model {v['model']!r} is an entity-typing variant and cannot run task {v['task']!r}")
    translational = tag in ("TransE", "TransH", "TransR", "TransD", "RotatE")
    if v["train.norm"] == "auto":
        v["train.norm"] = "L1" if tag == "RotatE" else "L2"
    if v["train.optimizer"] == "auto":
        v["train.optimizer"] = "adagrad" if translational else "adam"
    if v["loss.kind"] == "auto":
        v["loss.kind"] = "nce_self_adversarial" if v["neg.strategy"] == "self_adversarial" else "marginal_ranking"
    if v["train.lr"] == "auto":
        v["train.lr"] = {"sgd": 0.01, "adagrad": 0.1, "adam": 0.001}[v["train.optimizer"]]
    else:
        try:
            v["train.lr"] = float(v["train.lr"])
        except ValueError:
            raise ConfigError(f"train.lr: expected a number or 'auto', got {v['train.lr']!r}") from None
    if v["loss.offset"] == "auto":
        v["loss.offset"] = v["loss.margin"]
    else:
        try:
            v["loss.offset"] = float(v["loss.offset"])
        except ValueError:
            raise ConfigError(f"loss.offset: expected a number or 'auto', got {v['loss.offset']!r}") from None
    if v["train.workers"] is None:
        v["train.workers"] = _default_workers()
    if v["neg.strategy"] == "self_adversarial" and v["loss.kind"] != "nce_self_adversarial":
        raise ConfigError("neg.strategy=self_adversarial requires loss.kind=nce_self_adversarial")
    if v["task"] == "ea" and v["align.mode"] == "margin" and v["align.k"] < 1:
        raise ConfigError("align.k must be >= 1")
    for key in ("train.dim", "train.epochs", "train.batch_size", "train.workers", "neg.k",
                "control.interval", "control.patience", "eval.workers", "eval.chunk", "eval.csls_k"):
        if v[key] < (0 if key == "train.epochs" else 1):
            raise ConfigError(f"{key}: must be positive, got {v[key]}")
    if not 0 < v["neg.ratio"] <= 1:
        raise ConfigError("neg.ratio: must lie in (0, 1]")
    if tag in ("ComplEx", "RotatE") and v["train.dim"] % 2:
        raise ConfigError(f"train.dim: {tag} needs an even dimension")
    if v["train.squared"] and v["train.norm"] != "L2":
        raise ConfigError("train.squared requires train.norm=L2")


def resolve_config(path=None, overrides=()) -> TaskSpec:
    """Merge defaults, an optional config file and ``key=value`` overrides;
    every default is made explicit in the result."""
    raw = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            raw.update(parse_flat(fh.read(), str(path)))
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        raw[key] = value
    values = {k: d for k, (_, d, _) in SCHEMA.items()}
    for key, value in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        # resolved configs carry numbers where the schema allows 'auto'
        if SCHEMA[key][0] is str and SCHEMA[key][1] == "auto" and not isinstance(value, str):
            value = str(value)
        if value is None and SCHEMA[key][1] is None:
            continue
        values[key] = _coerce(key, value)
    try:
        model_base(values["model"])
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    _resolve_auto(values)
    return TaskSpec(values)
