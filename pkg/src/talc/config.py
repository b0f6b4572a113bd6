"""Flat ``section.key = value`` run configuration.

Precedence, lowest first: built-in defaults, the ``--config`` file, explicit
command-line flags, ``--set`` overrides. Every key must exist in the
defaults; values are coerced to the default's type.
"""
from __future__ import annotations

from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Dict, Mapping

from .denoiser import DenoiserConfig
from .errors import ConfigError
from .trainer import TrainConfig

# desk-scale preset used by reproduce-desk (the full-scale values remain the
# TrainConfig defaults used by ``train``)
DESK_TRAIN = {
    "train.batch_size": 8,
    "train.learning_rate": 1e-3,
    "train.warmup_steps": 100,
    "train.steps": 5000,
    "train.loss_blend": 0.05,
}


def base_defaults() -> Dict[str, Any]:
    d: Dict[str, Any] = {"seed": 0}
    d.update({f"model.{k}": v for k, v in asdict(DenoiserConfig()).items()
              if k not in ("schedule_steps", "beta_min", "beta_max")})
    d.update({f"train.{k}": v for k, v in asdict(TrainConfig()).items() if k != "seed"})
    d.update({
        "text.max_tokens": 24,
        "sample.mode": "talc",
        "sample.frames_per_scene": 0,     # 0: use the checkpoint's training value
        "sample.steps": 100,
        "sample.guidance": 12.0,
        "data.count": 16,
        "data.scenes": "1-4",
        "data.frames_per_scene": 8,
        "data.size": 16,
        "data.shape_size": 5,
        "data.distinct_motions": True,
        "scenes.threshold": 0.3,
        "scenes.min_len": 4,
        "client.endpoint": "",
        "client.model": "default",
        "client.timeout": 60.0,
        "client.max_retries": 3,
        "client.backoff": 1.0,
        "eval.judge": "oracle",
        "desk.train_per_n": 150,
        "desk.test_per_n": 8,
        "desk.sample_steps": 50,
        "desk.guidance": 2.0,
        "desk.sheets": True,
    })
    return d


def desk_defaults() -> Dict[str, Any]:
    d = base_defaults()
    d.update(DESK_TRAIN)
    return d


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; ``[section]`` headers prefix keys."""
    out: Dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[f"{section}.{key}" if section and "." not in key else key] = value
    return out


def read_config_file(path) -> Dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, str(p))


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(key: str, value, like):
    if not isinstance(value, str):
        if type(value) is type(like):
            return value
        if type(like) is float and type(value) is int:
            return float(value)
        raise ConfigError(f"{key}: expected {type(like).__name__}, got {value!r}")
    try:
        if isinstance(like, bool):
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {type(like).__name__}") from None
    return value


def resolve(defaults: Mapping[str, Any], *layers: Mapping[str, Any]) -> Dict[str, Any]:
    out = dict(defaults)
    for layer in layers:
        for key, value in layer.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = coerce(key, value, defaults[key])
    return out


def parse_overrides(items) -> Dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def section(resolved: Mapping[str, Any], name: str) -> Dict[str, Any]:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in resolved.items() if k.startswith(prefix)}


def model_config(resolved) -> DenoiserConfig:
    return DenoiserConfig(**section(resolved, "model"))


def train_config(resolved) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    kw = {k: v for k, v in section(resolved, "train").items() if k in names}
    return TrainConfig(seed=resolved["seed"], **kw)


def snapshot_text(resolved: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {resolved[k]}\n" for k in sorted(resolved))


def write_snapshot(out_dir, resolved: Mapping[str, Any], name: str = "resolved_config.txt") -> Path:
    p = Path(out_dir) / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(snapshot_text(resolved), encoding="utf-8")
    return p


def parse_scene_counts(spec: str):
    """``"2-4"`` or ``"1,3"`` -> sorted tuple of scene counts in 1..4."""
    out = set()
    try:
        for part in str(spec).split(","):
            part = part.strip()
            if "-" in part:
                a, b = (int(x) for x in part.split("-", 1))
                out.update(range(a, b + 1))
            elif part:
                out.add(int(part))
    except ValueError:
        raise ConfigError(f"bad scene count list {spec!r}") from None
    if not out or min(out) < 1 or max(out) > 4:
        raise ConfigError(f"scene counts must lie in 1..4, got {spec!r}")
    return tuple(sorted(out))
