"""Runtime configuration: defaults, JSON config file, env overrides.

Precedence per knob: command-line flag > SIDGROUND_* environment
variable (port, data dir, seed only) > config file > built-in default.
The built-in defaults are the operating points the system was tuned to:
delta=5, k=10, tau=10, lambda=0.1, ttl=86400s, layers 32/64/128/1024.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields

from .errors import InvalidInputError, RecordParseError

ENV_PREFIX = "SIDGROUND_"
_ENV_KEYS = {"port": int, "data_dir": str, "seed": int}


@dataclass
class Config:
    delta: int = 5
    k: int = 10
    tau: int = 10
    lam: float = 0.1
    ttl_seconds: int = 86_400
    layer_sizes: tuple[int, int, int, int] = (32, 64, 128, 1024)
    seed: int = 42
    resamples: int = 10_000
    port: int = 8080
    data_dir: str = "."

    def validate(self):
        if self.delta < 0 or self.k < 1 or self.tau < 1:
            raise InvalidInputError("need delta >= 0, k >= 1, tau >= 1")
        if not (0.0 <= self.lam <= 1.0):
            raise InvalidInputError("lambda must be in [0, 1]")
        if len(self.layer_sizes) != 4 or any(s < 1 for s in self.layer_sizes):
            raise InvalidInputError("layer_sizes must be 4 positive integers")

    def resolve_path(self, path):
        """Resolve a data-file path against data_dir (absolute paths and
        the default "." pass through unchanged)."""
        if path is None:
            return None
        if os.path.isabs(path) or self.data_dir in (".", ""):
            return path
        return os.path.join(self.data_dir, path)


def load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise RecordParseError(f"bad config JSON: {e}") from e
    known = {f.name for f in fields(Config)}
    unknown = set(doc) - known
    if unknown:
        raise RecordParseError(f"unknown config keys: {sorted(unknown)}")
    return doc


def resolve_config(flags: dict | None = None, config_path=None,
                   env: dict | None = None) -> Config:
    """Merge flag/env/file/default layers into one validated Config.

    `flags` holds only explicitly set values (None means unset).
    """
    env = os.environ if env is None else env
    merged: dict = {}
    if config_path:
        merged.update(load_config_file(config_path))
    for key, cast in _ENV_KEYS.items():
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            try:
                merged[key] = cast(raw)
            except ValueError as e:
                raise InvalidInputError(f"bad {ENV_PREFIX}{key.upper()}: {raw!r}") from e
    for key, value in (flags or {}).items():
        if value is not None:
            merged[key] = value
    if "layer_sizes" in merged:
        merged["layer_sizes"] = tuple(int(s) for s in merged["layer_sizes"])
    cfg = Config(**merged)
    cfg.validate()
    return cfg


def parse_layer_sizes(text: str) -> tuple[int, int, int, int]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 4:
        raise InvalidInputError(f"expected 4 comma-separated layer sizes, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]
