"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    k: int = 3
    eps: float = 1e-5
    color_window_start: float = 0.0
    color_window_end: float = 0.8
    style_window_start: float = 0.8
    seed_latent: int = 0
    seed_kmeans: int = 0
    cluster_stride: int = 1
    # longest side of the toy latent grid
    latent_size: int = 48
    # "grayscale" (Rec. 601 luma) or "lightness" (CIELAB L)
    style_luma: str = "grayscale"
    kmeans_space: str = "rgb"
    share_latent: bool = True
    attn_sharpness: float = 400.0
    attn_strength: float = 1.0

    def replace(self, **changes) -> "Config":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def validate(self) -> "Config":
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if not 0.0 <= self.color_window_start <= self.color_window_end <= 1.0:
            raise ConfigError("color window must satisfy 0 <= start <= end <= 1")
        if self.color_window_end > self.style_window_start:
            raise ConfigError("color window must end before the style window starts")
        if not 0.0 <= self.style_window_start <= 1.0:
            raise ConfigError("style_window_start must lie in [0, 1]")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.cluster_stride < 1:
            raise ConfigError("cluster_stride must be >= 1")
        if self.latent_size < 2:
            raise ConfigError("latent_size must be >= 2")
        if self.eps < 0:
            raise ConfigError("eps must be non-negative")
        if self.style_luma not in ("grayscale", "lightness"):
            raise ConfigError("style_luma must be 'grayscale' or 'lightness'")
        if self.kmeans_space not in ("rgb", "lab"):
            raise ConfigError("kmeans_space must be 'rgb' or 'lab'")
        return self


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, typ, raw: str):
    try:
        if typ is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, base: Config | None = None) -> Config:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(Config)}
    pytypes = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, pytypes[types[key]], raw)
    return dataclasses.replace(base or Config(), **values).validate()


def load_config(path) -> Config:
    return parse_config(Path(path).read_text())


def dump_config(cfg: Config) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(Config))
