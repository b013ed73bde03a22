"""Flat "key = value" run configuration files.

One key per line, "#" starts a comment, blank lines are skipped.  Every
key must be known: a typo in a config file is an error, not a silently
ignored default.  The file carries model architecture and optimization
settings; the random seed deliberately stays a command-line flag so one
config can drive many seeded runs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a training or generation run reads from its config file."""

    encoder_layers: int = 2
    decoder_layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    max_rows: int = 10
    max_pos: int = 256
    max_cols: int = 8
    max_header_len: int = 32
    max_row_len: int = 64
    max_vocab: int = 512
    lambda_weight: float = 0.5
    null_scale: float = 0.2
    lr: float = 1e-3
    warmup_ratio: float = 0.05
    max_tokens_per_batch: int = 1024
    max_steps: int = 2000

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
            model_dim=self.model_dim,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            max_rows=self.max_rows,
            max_pos=self.max_pos,
            max_cols=self.max_cols,
            vocab_size=vocab_size,
            max_header_len=self.max_header_len,
            max_row_len=self.max_row_len,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            lambda_=self.lambda_weight,
            null_scale=self.null_scale,
            lr=self.lr,
            warmup_ratio=self.warmup_ratio,
            max_tokens_per_batch=self.max_tokens_per_batch,
            max_steps=self.max_steps,
            seed=seed,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config(text: str, origin: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin} line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{origin} line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{origin} line {lineno}: duplicate key {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if kind in ("int", int):
                values[key] = int(value)
            elif kind in ("float", float):
                values[key] = float(value)
            elif kind in ("bool", bool):
                values[key] = _parse_bool(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigError(f"{origin} line {lineno}: {exc}") from None
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    return parse_config(text, origin=str(path))
