"""Run configuration: defaults, the ``key = value`` file format, overrides.

Keys are namespaced per subsystem (``model.*``, ``loss.*``, ``aug.*``,
``train.*``, ``data.*``, ``eval.*``); command-line flags map onto the same
keys.  A config round-trips exactly through :meth:`Config.to_text` /
:meth:`Config.from_file`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .augmentation import AugmentationSpec
from .objectives import LossWeights


class ConfigError(ValueError):
    """Bad configuration key or value."""


@dataclass
class Config:
    # model
    dim: int = 64
    item_layers: int = 2
    social_layers: int = 2
    projector_depth: int = 2
    projector: bool = True
    # loss
    tau: float = 0.2
    lambda1: float = 0.01
    lambda2: float = 0.001
    lambda3: float = 1e-4
    negatives_scope: str = "batch"
    # augmentation, "kind:rate"
    aug_item_view1: str = "edge_drop:0.1"
    aug_item_view2: str = "edge_drop:0.1"
    aug_social_view1: str = "edge_drop:0.1"
    aug_social_view2: str = "edge_add:0.1"
    # training
    epochs: int = 500
    batch_size: int = 2048
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 20
    seed: int = 0
    # data / evaluation
    min_rating: float = 4.0
    eval_k: int = 5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError("model.dim must be >= 1")
        if self.item_layers < 0:
            raise ConfigError("model.item_layers must be >= 0")
        if self.social_layers < 1:
            raise ConfigError("model.social_layers must be >= 1")
        if self.projector_depth < 1:
            raise ConfigError("model.projector_depth must be >= 1")
        if self.tau <= 0:
            raise ConfigError("loss.tau must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.negatives_scope not in ("batch", "full"):
            raise ConfigError("loss.negatives_scope must be 'batch' or 'full'")
        if self.epochs < 0 or self.patience < 0:
            raise ConfigError("train.epochs and train.patience must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise ConfigError("train.lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("train.eps must be positive")
        if self.eval_k < 1:
            raise ConfigError("eval.k must be >= 1")
        for key in ("aug_item_view1", "aug_item_view2", "aug_social_view1", "aug_social_view2"):
            spec = AugmentationSpec.parse(getattr(self, key))
            if key.startswith("aug_item") and spec.kind == "edge_add":
                raise ConfigError("edge_add applies only to the social domain")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)


_KEY_TO_FIELD = {
    "model.dim": "dim",
    "model.item_layers": "item_layers",
    "model.social_layers": "social_layers",
    "model.projector_depth": "projector_depth",
    "model.projector": "projector",
    "loss.tau": "tau",
    "loss.lambda1": "lambda1",
    "loss.lambda2": "lambda2",
    "loss.lambda3": "lambda3",
    "loss.negatives_scope": "negatives_scope",
    "aug.item.view1": "aug_item_view1",
    "aug.item.view2": "aug_item_view2",
    "aug.social.view1": "aug_social_view1",
    "aug.social.view2": "aug_social_view2",
    "train.epochs": "epochs",
    "train.batch_size": "batch_size",
    "train.lr": "learning_rate",
    "train.beta1": "beta1",
    "train.beta2": "beta2",
    "train.eps": "adam_eps",
    "train.patience": "patience",
    "train.seed": "seed",
    "data.min_rating": "min_rating",
    "eval.k": "eval_k",
}
_FIELD_TO_KEY = {f: k for k, f in _KEY_TO_FIELD.items()}

_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


def _coerce(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"expected on/off for {field.name}, got {raw!r}")
    if field.type in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"expected integer for {field.name}, got {raw!r}") from None
    if field.type in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"expected number for {field.name}, got {raw!r}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    return repr(value) if isinstance(value, float) else str(value)


def config_keys() -> list[str]:
    return list(_KEY_TO_FIELD)


def apply_overrides(config: Config, overrides: dict[str, str]) -> Config:
    """New config with ``namespaced.key -> raw string`` overrides applied."""
    fields = {f.name: f for f in dataclasses.fields(Config)}
    changes = {}
    for key, raw in overrides.items():
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"unknown config key {key!r}")
        name = _KEY_TO_FIELD[key]
        changes[name] = _coerce(fields[name], raw)
    return dataclasses.replace(config, **changes)


def to_text(config: Config) -> str:
    lines = [f"{key} = {_format(getattr(config, field))}" for key, field in _KEY_TO_FIELD.items()]
    return "\n".join(lines) + "\n"


def to_dict(config: Config) -> dict[str, str]:
    return {key: _format(getattr(config, field)) for key, field in _KEY_TO_FIELD.items()}


def from_dict(entries: dict[str, str]) -> Config:
    return apply_overrides(Config(), entries)


def from_file(path) -> Config:
    """Parse a ``key = value`` file; blank lines and ``#`` comments ignored."""
    entries: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            entries[key.strip()] = raw.strip()
    return from_dict(entries)
