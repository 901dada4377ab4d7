"""Pipeline configuration: defaults, named presets, flat key-value files.

Resolution order, lowest to highest: built-in defaults, preset, config
file, command-line flags. A config file is ``key = value`` lines with
``#`` comments; the key ``preset`` selects a preset from inside the file.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .sft import DEFAULT_NO_PROMPT_SHARE, DEFAULT_PROMPT_TARGETS, DEFAULT_UPSAMPLE
from .training import ADAPTER_PRESETS, TRAIN_PRESETS, ConfigError

OUTPUT_ROOT_ENV = "LOWRES_ADAPT_OUTPUT_ROOT"
PRESETS = ("cpt-table3",) + tuple(ADAPTER_PRESETS)


@dataclass
class PipelineConfig:
    input: str | None = None
    output_dir: str | None = None
    tokenizer: str = "byte-level"
    # corpus preparation
    window: int = 4096
    overlap: int = 128
    dedup: bool = True
    min_drop_confidence: float = 0.0
    seed: int = 42
    workers: int = 1
    # SFT pool
    upsample: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_UPSAMPLE))
    prompt_targets: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_PROMPT_TARGETS))
    no_prompt_share: float = DEFAULT_NO_PROMPT_SHARE
    # evaluation
    hyp: str | None = None
    ref: str | None = None
    direction: str = "unknown"
    model: str = "model"
    n_resamples: int = 1000
    # perplexity
    k: float | None = None
    # adapter demo
    methods: list[str] = field(default_factory=lambda: ["lora", "rslora"])
    ranks: list[int] = field(default_factory=lambda: [4, 16, 64])
    alpha: float = 16.0
    steps: int = 200
    demo_lr: float = 0.5
    dropout: float = 0.0
    # report
    metric: str | None = None
    stderr: bool = False
    format: str = "text"
    models: list[str] = field(default_factory=list)
    preset: str | None = None

    def record(self) -> dict:
        """Resolved config for the run record.

        Worker count and output location are left out: neither changes any
        output byte.
        """
        out = dataclasses.asdict(self)
        out.pop("workers")
        out.pop("output_dir")
        return out


def _preset_values(name: str) -> dict[str, Any]:
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; choose from {', '.join(PRESETS)}"])
    train = TRAIN_PRESETS[name]
    values: dict[str, Any] = {"seed": train.seed, "window": train.seq_len}
    adapter = ADAPTER_PRESETS.get(name)
    if adapter is not None:
        values["methods"] = [adapter.method]
        if adapter.method != "full":
            values["ranks"] = [adapter.rank]
            values["alpha"] = adapter.alpha
        values["dropout"] = adapter.dropout
    return values


def preset_configs(name: str) -> dict:
    """Training and adapter configuration a preset stands for."""
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}"])
    out = {"train": dataclasses.asdict(TRAIN_PRESETS[name])}
    if name in ADAPTER_PRESETS:
        adapter = dataclasses.asdict(ADAPTER_PRESETS[name])
        adapter["targets"] = list(adapter["targets"])
        out["adapter"] = adapter
    return out


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"{source}:{lineno}: expected 'key = value'"])
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError([f"{source}:{lineno}: empty key"])
        values[key.replace("-", "_")] = value
    return values


def _parse_mapping(value: str) -> dict[str, int]:
    out = {}
    for item in filter(None, (p.strip() for p in value.split(","))):
        sep = "=" if "=" in item else ":"
        if sep not in item:
            raise ValueError(f"expected name=count, got {item!r}")
        k, v = item.split(sep, 1)
        out[k.strip()] = int(v)
    return out


def coerce(name: str, value: Any) -> Any:
    """Convert a string from a config file or flag to the field's type."""
    if not isinstance(value, str):
        return value
    kind = {f.name: f.type for f in fields(PipelineConfig)}.get(name)
    if kind is None:
        raise ConfigError([f"unknown config key {name!r}"])
    try:
        if kind == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "float | None":
            return None if value.lower() in ("", "none") else float(value)
        if kind == "dict[str, int]":
            return _parse_mapping(value)
        if kind == "list[int]":
            return [int(v) for v in value.split(",") if v.strip()]
        if kind == "list[str]":
            return [v.strip() for v in value.split(",") if v.strip()]
        if kind in ("str | None",):
            return None if value.lower() in ("", "none") else value
        return value
    except ValueError as exc:
        raise ConfigError([f"bad value for {name}: {exc}"]) from None


def resolve(file: str | Path | None = None, flags: Mapping[str, Any] | None = None) -> PipelineConfig:
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    file_values = {}
    if file is not None:
        path = Path(file)
        file_values = parse_kv(path.read_text(encoding="utf-8"), str(path))
    preset = flags.get("preset") or file_values.get("preset")

    values: dict[str, Any] = {}
    if preset:
        values.update(_preset_values(preset))
        values["preset"] = preset
    for k, v in file_values.items():
        values[k] = coerce(k, v)
    for k, v in flags.items():
        values[k] = coerce(k, v)
    if values.get("output_dir") is None:
        values.pop("output_dir", None)
    try:
        cfg = PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError([str(exc)]) from None
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    errors = []
    if not 0 <= cfg.overlap < cfg.window:
        errors.append(f"overlap must satisfy 0 <= overlap < window ({cfg.overlap} vs {cfg.window})")
    if cfg.workers < 1:
        errors.append("workers must be >= 1")
    if cfg.n_resamples < 2:
        errors.append("n_resamples must be >= 2")
    if cfg.steps < 1:
        errors.append("steps must be >= 1")
    if any(f < 1 for f in cfg.upsample.values()):
        errors.append("upsample factors must be >= 1")
    if cfg.format not in ("text", "tsv", "csv"):
        errors.append(f"format must be text, tsv or csv, not {cfg.format!r}")
    if errors:
        raise ConfigError(errors)


def default_output_dir(command: str) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command
