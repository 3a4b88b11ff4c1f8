"""Run configuration: JSON in, validated dataclass out."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    dataset_dir: str | None = None
    mode: str = "transductive"
    hidden_dim: int = 32
    encoder_layers: int = 0
    local_layers: int = 3
    global_layers: int = 1
    attention: str = "softmax"
    lr: float = 5e-4
    weight_decay: float = 1e-5
    negatives: int = 128
    epochs: int = 3
    k: int = 4
    delta: float = 8.0
    seed: int = 42
    coarse_kind: str = "triplet"
    coarse_dim: int = 32
    coarse_lr: float = 1e-2
    coarse_weight_decay: float = 0.0
    coarse_epochs: int = 5
    protocol: str = "filtered"
    eval_split: str = "test"
    max_queries: int | None = None
    output_dir: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["delta"]):
            d["delta"] = "inf" if d["delta"] > 0 else "-inf"
        return d

    def fine_train_config(self):
        from .fusion import TrainConfig

        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, hidden_dim=self.hidden_dim,
                           negatives=self.negatives, epochs=self.epochs, seed=self.seed,
                           local_layers=self.local_layers, global_layers=self.global_layers,
                           encoder_layers=self.encoder_layers, attention=self.attention)

    def coarse_train_config(self):
        from .fusion import TrainConfig

        return TrainConfig(lr=self.coarse_lr, weight_decay=self.coarse_weight_decay, negatives=self.negatives,
                           epochs=self.coarse_epochs, seed=self.seed + 1)


_CHOICES = {
    "mode": ("transductive", "inductive"),
    "attention": ("softmax", "elu", "linear"),
    "coarse_kind": ("triplet", "structural"),
    "protocol": ("filtered", "raw"),
    "eval_split": ("test", "valid"),
}
_POSITIVE_INT = ("hidden_dim", "local_layers", "negatives", "k", "coarse_dim")
_NONNEG_INT = ("encoder_layers", "global_layers", "epochs", "coarse_epochs", "seed")


def _as_delta(value):
    if isinstance(value, str):
        low = value.strip().lower()
        if low in ("inf", "+inf", "infinity"):
            return math.inf
        if low in ("-inf", "-infinity"):
            return -math.inf
        raise ConfigError(f"delta: cannot parse {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)) or math.isnan(value):
        raise ConfigError(f"delta: expected a number or 'inf', got {value!r}")
    return float(value)


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    vals = dict(raw)
    for key in _POSITIVE_INT + _NONNEG_INT + ("max_queries",):
        if key in vals and vals[key] is not None:
            v = vals[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{key}: expected an integer, got {v!r}")
            lo = 1 if key in _POSITIVE_INT or key == "max_queries" else 0
            if v < lo:
                raise ConfigError(f"{key}: must be >= {lo}, got {v}")
    for key in ("lr", "weight_decay", "coarse_lr", "coarse_weight_decay"):
        if key in vals:
            v = vals[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise ConfigError(f"{key}: expected a finite number >= 0, got {v!r}")
            vals[key] = float(v)
    for key, choices in _CHOICES.items():
        if key in vals and vals[key] not in choices:
            raise ConfigError(f"{key}: expected one of {choices}, got {vals[key]!r}")
    for key in ("dataset_dir", "output_dir"):
        if key in vals and vals[key] is not None and not isinstance(vals[key], str):
            raise ConfigError(f"{key}: expected a string path")
    if "delta" in vals:
        vals["delta"] = _as_delta(vals["delta"])
    return RunConfig(**vals)


def parse_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    cfg = config_from_dict(raw)
    if cfg.dataset_dir is not None and not Path(cfg.dataset_dir).is_absolute():
        cfg = RunConfig(**{**asdict(cfg), "dataset_dir": str(Path(path).parent / cfg.dataset_dir)})
    return cfg
