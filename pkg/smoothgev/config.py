"""
Run configuration for the smoothgev command line.

Settings are resolved from four layers, highest first: command-line flags,
a flat KEY=value config file, ``SMOOTHGEV_<KEY>`` environment variables
(a ``.env`` in the working directory is loaded first) and the defaults below.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from dotenv import dotenv_values, load_dotenv

from smoothgev.errors import SpecError

ENV_PREFIX = "SMOOTHGEV_"

MODEL_NAMES = ("mod1", "mod2", "mod3", "mod4", "mod5")


@dataclass
class RunConfig:
    # inputs
    txx: Optional[str] = None
    grid: Optional[str] = None
    co2: Optional[str] = None
    daily: Optional[str] = None
    scenario: Optional[str] = None
    fit: Optional[str] = None
    scores_a: Optional[str] = None
    scores_b: Optional[str] = None
    spacing: Optional[float] = None

    # model and inference settings
    model: str = "mod2"
    models: str = ",".join(MODEL_NAMES)
    region: Optional[str] = None
    p: float = 0.01
    year_from: Optional[int] = None
    year_to: Optional[int] = None
    draws: int = 2000
    level: float = 0.95
    alpha: float = 0.05
    folds: int = 5
    reps: int = 1_000_000
    score_columns: str = "crp,wcrp"
    bins: int = 20
    grid_search: bool = False
    bonferroni_regions: Optional[int] = None

    # run control
    seed: int = 0
    threads: int = 1
    out: str = "out"
    quiet: bool = False

    def validate(self) -> "RunConfig":
        if not 0 < self.p < 1:
            raise SpecError(f"p must lie in (0, 1), got {self.p}")
        if not 0 < self.level < 1:
            raise SpecError(f"level must lie in (0, 1), got {self.level}")
        if not 0 < self.alpha < 1:
            raise SpecError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.draws < 1 or self.reps < 1 or self.threads < 1:
            raise SpecError("draws, reps and threads must be positive")
        if self.folds < 2:
            raise SpecError(f"folds must be at least 2, got {self.folds}")
        if self.bonferroni_regions is not None and self.bonferroni_regions < 1:
            raise SpecError(f"bonferroni_regions must be at least 1, got {self.bonferroni_regions}")
        for name in self.model_list() + [self.model.lower()]:
            if name not in MODEL_NAMES:
                raise SpecError(f"unknown model {name!r}; choose from {list(MODEL_NAMES)}")
        return self

    def model_list(self) -> list[str]:
        return [m.strip().lower() for m in self.models.split(",") if m.strip()]

    def score_list(self) -> list[str]:
        return [s.strip().lower() for s in self.score_columns.split(",") if s.strip()]

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


_TYPES = {f.name: str(f.type) for f in fields(RunConfig)}


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def _coerce(key: str, raw: Any) -> Any:
    kind = _TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "Optional" in kind and text.lower() in ("", "none"):
        return None
    try:
        if "bool" in kind:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in kind:
            return int(float(text)) if "e" in text.lower() else int(text)
        if "float" in kind:
            return float(text)
    except ValueError as exc:
        raise SpecError(f"config key {key} has an invalid value {raw!r}") from exc
    return text


def _layer(values: Mapping[str, Any], source: str, strict: bool) -> dict[str, Any]:
    out = {}
    for key, raw in values.items():
        name = normalize_key(key)
        if name not in _TYPES:
            if strict:
                raise SpecError(f"unknown {source} key {key!r}")
            continue
        if raw is None:
            continue
        out[name] = _coerce(name, raw)
    return out


def env_layer(environ: Optional[Mapping[str, str]] = None) -> dict[str, Any]:
    if environ is None:
        load_dotenv(Path.cwd() / ".env", override=False)
        environ = os.environ
    picked = {k[len(ENV_PREFIX):]: v for k, v in environ.items() if k.upper().startswith(ENV_PREFIX)}
    return _layer(picked, "environment", strict=False)


def file_layer(path: Union[str, Path, None]) -> dict[str, Any]:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    return _layer(dotenv_values(path), "config file", strict=True)


def resolve_config(
    cli: Optional[Mapping[str, Any]] = None,
    config_path: Union[str, Path, None] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge the layers; ``None`` values in ``cli`` mean the flag was not given."""
    merged: dict[str, Any] = {}
    merged.update(env_layer(environ))
    merged.update(file_layer(config_path))
    merged.update(_layer(cli or {}, "command-line", strict=False))
    return RunConfig(**merged).validate()
