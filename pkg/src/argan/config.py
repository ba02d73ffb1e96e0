"""Hyperparameters and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


# file keys that differ from the attribute name
_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}


@dataclass
class ArganConfig:
    N: int = 3
    lam: float = 0.7
    image_size: int = 32
    depth: int = 5
    base_channels: int = 64
    channel_cap: int = 512
    batch_size: int = 4
    lr: float = 2e-4
    momentum_mu: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 2000
    seed: int = 0
    share_weights: bool = True
    semi_supervised: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        div = max(2 ** self.depth, 32)
        if self.image_size < div or self.image_size % div:
            raise ConfigError(f"image_size {self.image_size} must be a multiple of {div} "
                              "(max(2**depth, 32))")
        for name in ("batch_size", "base_channels", "channel_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.iterations < 0 or self.checkpoint_every < 0:
            raise ConfigError("iterations and checkpoint_every must be non-negative")

    @classmethod
    def full_scale(cls, **overrides) -> "ArganConfig":
        """Full-scale settings: 256x256 input, eight encoder levels."""
        base = dict(image_size=256, depth=8, iterations=100_000)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ArganConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{_ATTR_TO_KEY.get(f.name, f.name)} = {val!r}" if isinstance(val, float)
                         else f"{_ATTR_TO_KEY.get(f.name, f.name)} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArganConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            attr = _KEY_TO_ATTR.get(key, key)
            if attr not in types or key in _ATTR_TO_KEY:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[attr] = _parse_value(val, types[attr], key, lineno)
        try:
            return cls(**values)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _parse_value(val: str, typ: str, key: str, lineno: int):
    try:
        if typ == "bool":
            low = val.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(val)
        if typ == "int":
            return int(val)
        return float(val)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad {typ} value {val!r} for {key}") from None


def load_config(path: str | os.PathLike) -> ArganConfig:
    with open(path, encoding="utf-8") as fh:
        return ArganConfig.from_text(fh.read())


def save_config(path: str | os.PathLike, cfg: ArganConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
