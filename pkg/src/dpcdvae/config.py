"""Run configuration: a single flat, schema-validated bundle of schedule,
model, training, sampling, and evaluation settings.

Configs are stored as JSON objects with exactly these keys; unknown keys
are rejected so typos fail loudly.  ``canonical_json`` fixes the
serialization (sorted keys, no whitespace) used in checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

__all__ = ["RunConfig", "canonical_json"]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class RunConfig:
    # noise schedule
    timesteps: int = 1000
    gamma_min: float = -10.0
    gamma_max: float = 10.0
    # model dimensions
    latent_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 3
    num_rbf: int = 32
    fourier_min: int = 3
    fourier_max: int = 8
    time_dim: int = 8
    n_max: int = 20
    encode_n_a: bool = False
    # training
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    lambda_type: float = 1.0
    lambda_kld: float = 0.01
    lambda_lattice: float = 1.0
    lambda_comp: float = 1.0
    lambda_na: float = 1.0
    cutoff: float = 7.0
    max_neighbors: int = 12
    seed: int = 0
    save_interval: int = 0
    # sampling
    reverse_variant: str = "periodic"
    type_init: str = "categorical"
    # structure matcher criteria
    stol: float = 0.5
    angle_tol: float = 10.0
    ltol: float = 0.3
    # coverage thresholds
    cov_struct_threshold: float = 1.0
    cov_comp_threshold: float = 0.1

    _ESTIMATOR_KEYS = (
        "latent_dim", "hidden_dim", "num_layers", "num_rbf", "fourier_min",
        "fourier_max", "time_dim", "cutoff", "max_neighbors", "n_max",
        "timesteps", "gamma_min", "gamma_max", "lambda_type", "lambda_kld",
        "lambda_lattice", "lambda_comp", "lambda_na", "learning_rate",
        "batch_size", "epochs", "seed", "reverse_variant", "type_init",
        "encode_n_a", "save_interval",
    )

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        coerced = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            value = data[f.name]
            if f.type == "int":
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"config key {f.name!r} must be an integer")
            elif f.type == "float":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"config key {f.name!r} must be a number")
                value = float(value)
            elif f.type == "bool":
                if not isinstance(value, bool):
                    raise ConfigError(f"config key {f.name!r} must be a boolean")
            elif f.type == "str":
                if not isinstance(value, str):
                    raise ConfigError(f"config key {f.name!r} must be a string")
            coerced[f.name] = value
        return cls(**coerced)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        from .errors import DataError
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read config file {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def estimator_kwargs(self) -> dict:
        return {key: getattr(self, key) for key in self._ESTIMATOR_KEYS}

    def with_seed(self, seed: int) -> "RunConfig":
        data = self.to_dict()
        data["seed"] = int(seed)
        return RunConfig.from_dict(data)
