"""Engine configuration, presets, and validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    """Raised for unknown keys, bad types, or out-of-range values."""


@dataclass(frozen=True)
class Config:
    """Loop hyperparameters and execution limits.

    k samples per exploration, n refinement iterations, m tests requested per
    sample (and sampled back into refinement prompts), sampling temperature t,
    early-stop threshold theta (strict comparison, so theta=1.0 never stops
    early). Durations are milliseconds throughout.
    """

    t: float = 0.5
    k: int = 5
    n: int = 5
    m: int = 3
    theta: float = 0.8
    per_test_timeout_ms: int = 2000
    suite_timeout_ms: int = 30000
    executor_parallelism: int = 4
    rng_seed: int = 0
    score_on_merged_pool: bool = False
    solve_timeout_ms: int | None = None


PRESETS: dict[str, dict[str, object]] = {
    # Balanced default loop.
    "default": {"t": 0.5, "k": 5, "n": 5, "m": 3, "theta": 0.8},
    # Wide exploration, two refinement rounds, no early stop.
    "sota": {"t": 1.0, "k": 20, "n": 2, "m": 3, "theta": 1.0},
}

_INT_FIELDS = {"k", "n", "m", "per_test_timeout_ms", "suite_timeout_ms", "executor_parallelism", "rng_seed"}
_FLOAT_FIELDS = {"t", "theta"}
_BOOL_FIELDS = {"score_on_merged_pool"}
_KNOWN_KEYS = {f.name for f in dataclasses.fields(Config)} | {"preset"}


def validate_config(raw: dict) -> Config:
    """Build a Config from a flat key-value mapping.

    A "preset" key is applied first; explicit keys override it. Unknown keys,
    wrong types, and out-of-range values raise ConfigError naming the key.
    """
    merged: dict[str, object] = {}
    preset = raw.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset: {preset!r} (choose from {sorted(PRESETS)})")
        merged.update(PRESETS[preset])
    for key, value in raw.items():
        if key == "preset":
            continue
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key: {key!r}")
        merged[key] = value

    coerced: dict[str, object] = {}
    for key, value in merged.items():
        if key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            coerced[key] = value
        elif key in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number, got {value!r}")
            coerced[key] = float(value)
        elif key in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be a boolean, got {value!r}")
            coerced[key] = value
        elif key == "solve_timeout_ms":
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"{key} must be an integer or null, got {value!r}")
            coerced[key] = value

    cfg = Config(**coerced)  # type: ignore[arg-type]
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: Config) -> None:
    for key in ("k", "n", "m"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be >= 1")
    if not 0.0 <= cfg.t <= 2.0:
        raise ConfigError("t must be in [0, 2]")
    if not 0.0 <= cfg.theta <= 1.0:
        raise ConfigError("theta must be in [0, 1]")
    if cfg.per_test_timeout_ms < 1:
        raise ConfigError("per_test_timeout_ms must be >= 1")
    if cfg.suite_timeout_ms < cfg.per_test_timeout_ms:
        raise ConfigError("suite_timeout_ms must be >= per_test_timeout_ms")
    if cfg.executor_parallelism < 1:
        raise ConfigError("executor_parallelism must be >= 1")
    if cfg.solve_timeout_ms is not None and cfg.solve_timeout_ms < 1:
        raise ConfigError("solve_timeout_ms must be >= 1 or null")


def config_to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)
