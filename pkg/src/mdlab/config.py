"""Flat key-value run configuration with dotted stage prefixes.

Values resolve in order default < config file < command-line flag, and every
resolved value remembers where it came from so ``print-config`` can show it.
Config files are plain text, one ``key = value`` per line, ``#`` comments.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigError

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "outdir": "runs/default",

    "corpus.task": "addition",
    "corpus.train_count": 2000,
    "corpus.test_count": 500,

    "teacher.d_model": 128,
    "teacher.n_layers": 4,
    "teacher.n_heads": 4,
    "teacher.max_seq_len": 128,
    "teacher.epochs": 20,
    "teacher.batch_size": 32,
    "teacher.lr": 1e-3,
    "teacher.weight_decay": 0.01,
    "teacher.warmup_ratio": 0.03,

    "score.metric": "nll",

    "bucket.k": 8,
    "bucket.ordering": "hard_to_easy",

    "train.d_model": 128,
    "train.n_layers": 4,
    "train.n_heads": 4,
    "train.max_seq_len": 128,
    "train.p_context": 0.05,
    "train.p_future": 0.95,
    "train.trajectory_ratio": 0.10,
    "train.epochs": 30,
    "train.batch_size": 32,
    "train.lr": 1e-3,
    "train.weight_decay": 0.01,
    "train.warmup_ratio": 0.03,
    "train.loss_weighting": "elbo",
    "train.weight_clip": 20.0,

    "decode.max_new_tokens": 48,
    "decode.tau": 0.9,
    "decode.min_commit": 1,
    "decode.max_steps": 0,      # 0: one step per new token

    "eval.taus": "0.5,0.7,0.85,0.95",
    "eval.label": "student",

    "analyze.count": 40,
}

_ENV_OUTDIR = "MDLAB_OUTDIR"


@dataclass
class RunConfig:
    """Resolved configuration: every key with its value and its source."""

    values: dict
    sources: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def taus(self) -> list[float]:
        try:
            return [float(x) for x in str(self.values["eval.taus"]).split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"eval.taus must be a comma list of floats, got "
                              f"{self.values['eval.taus']!r}")


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as "
                          f"{type(default).__name__}")


def parse_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}: line {lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    return values


def resolve(config_path: str | None = None,
            flag_values: dict | None = None) -> RunConfig:
    """Merge defaults, optional config file, and flag overrides."""
    values = dict(DEFAULTS)
    sources = {k: "default" for k in DEFAULTS}
    env_outdir = os.environ.get(_ENV_OUTDIR)
    if env_outdir:
        values["outdir"] = env_outdir
        sources["outdir"] = "env"
    if config_path:
        for k, v in parse_config_file(config_path).items():
            values[k] = v
            sources[k] = "file"
    for k, v in (flag_values or {}).items():
        if k not in DEFAULTS:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = v
        sources[k] = "flag"
    return RunConfig(values=values, sources=sources)


def format_config(config: RunConfig) -> str:
    lines = []
    for key in sorted(config.values):
        lines.append(f"{key} = {config.values[key]}  ({config.sources[key]})")
    return "\n".join(lines)
