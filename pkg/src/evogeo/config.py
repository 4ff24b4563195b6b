"""Run configuration: defaults, validation, and the key = value config format."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class RunConfig:
    iterations: int = 100          # T
    k_top: int = 4                 # exploit picks per iteration
    k_rand: int = 4                # explore picks per iteration
    n_parents: int = 4
    n_evolver: int = 8             # policy-sampled candidates
    n_ops: int = 8                 # uniformly random symbolic candidates
    alpha_sib: float = 0.8
    beta: float = 1.0
    reg_weight: float = 0.2        # hybrid-loss lambda
    pnd_weight: float = 0.3
    cell_capacity: int = 3         # K_c
    archive_capacity: int = 35
    seed: int = 0
    backend: str = "simulated"
    update_cadence: int = 1        # learn every N iterations
    replay_sample: int = 64
    max_in_flight: int = 1         # concurrent GE evaluations
    feature_dim: int = 4096
    hidden_dim: int = 64
    critic_lr: float = 0.01
    critic_epochs: int = 12
    policy_feature_dim: int = 256
    policy_lr: float = 0.2
    remote_base_url: str = ""
    remote_model: str = ""
    remote_timeout: float = 60.0
    remote_max_retries: int = 3

    def __post_init__(self) -> None:
        errors = []
        if self.iterations < 0:
            errors.append("iterations must be >= 0")
        for name in ("k_top", "k_rand"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        for name in (
            "n_parents",
            "n_evolver",
            "cell_capacity",
            "archive_capacity",
            "update_cadence",
            "max_in_flight",
        ):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.n_ops < 0:
            errors.append("n_ops must be >= 0")
        if not 0.0 <= self.alpha_sib <= 1.0:
            errors.append("alpha_sib must be in [0, 1]")
        if self.beta <= 0:
            errors.append("beta must be > 0")
        if self.reg_weight < 0:
            errors.append("reg_weight must be >= 0")
        if self.backend not in ("simulated", "remote"):
            errors.append("backend must be 'simulated' or 'remote'")
        if self.backend == "remote" and not self.remote_base_url:
            errors.append("remote backend requires remote_base_url")
        if errors:
            raise ConfigError("; ".join(errors))


class ConfigError(ValueError):
    pass


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key!r}: {raw!r}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse "key = value" lines; unknown keys are rejected by name."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(config: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    return replace(config, seed=seed)
