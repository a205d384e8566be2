"""Training configuration, built-in profiles and ablation variants."""

import os
from dataclasses import asdict, dataclass, fields, replace

import yaml

from .errors import ConfigError

ABLATIONS = ("full", "no-hsl", "no-psl", "no-shar", "no-spec", "no-shar-spec")
ENV_PREFIX = "BIGSL_"


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-4
    epochs: int = 60
    batch_size: int = 96
    d2: int = 1024
    d3: int = 1024
    beta_hsl: float = 1e-4
    beta_sh: float = 1e-1
    beta_sp: float = 1e-4
    K: int = 80
    tau1: float = 0.1
    tau2: float = 0.5
    epsilon: float = 0.5
    top_k: int = 10
    estep_period: str = "epoch"
    seed: int = 0
    max_seq_len: int = 50
    grad_clip: float = 5.0
    max_negatives: int = 512
    views: tuple = ("spatial", "temporal")
    slots: int = 56
    # learned | rule | none
    graph_mode: str = "learned"
    use_prototypes: bool = True
    rule_radius: float = 0.1
    ablation: str = "full"

    def __post_init__(self):
        if isinstance(self.views, (list, str)):
            object.__setattr__(self, "views", tuple([self.views] if isinstance(self.views, str) else self.views))
        for name in ("lr", "epochs", "batch_size", "d2", "d3", "K", "tau1", "tau2",
                     "top_k", "max_seq_len", "slots"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("beta_hsl", "beta_sh", "beta_sp"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.epsilon < 1:
            raise ConfigError("epsilon must lie in [0, 1)")
        if self.estep_period not in ("epoch", "batch"):
            raise ConfigError("estep_period must be 'epoch' or 'batch'")
        if self.graph_mode not in ("learned", "rule", "none"):
            raise ConfigError("graph_mode must be learned, rule or none")
        if self.ablation not in ABLATIONS + ("backbone",):
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if not self.views or any(v not in ("spatial", "temporal") for v in self.views):
            raise ConfigError(f"views must be drawn from spatial/temporal, got {self.views!r}")

    def to_dict(self):
        d = asdict(self)
        d["views"] = list(self.views)
        return d


PROFILES = {
    "paper": {},
    "desk": {"d2": 32, "d3": 32, "epochs": 40, "K": 4, "lr": 1e-3, "batch_size": 96},
}


def apply_ablation(config, name):
    """Config for one named variant; ``backbone`` is the plain LSTM recommender."""
    changes = {
        "full": {},
        "no-hsl": {"beta_hsl": 0.0, "use_prototypes": False},
        "no-psl": {"graph_mode": "rule"},
        "no-shar": {"beta_sh": 0.0},
        "no-spec": {"beta_sp": 0.0},
        "no-shar-spec": {"beta_sh": 0.0, "beta_sp": 0.0},
        "backbone": {"graph_mode": "none", "beta_hsl": 0.0, "beta_sh": 0.0, "beta_sp": 0.0},
    }
    if name not in changes:
        raise ConfigError(f"unknown ablation {name!r}")
    return replace(config, ablation=name, **changes[name])


_FIELD_TYPES = {f.name: f.type for f in fields(TrainingConfig)}
RUN_KEYS = {"dataset", "workdir", "run_id"}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    kind = kind if isinstance(kind, str) else kind.__name__
    if isinstance(value, str):
        if kind == "bool":
            return value.strip().lower() in ("1", "true", "yes", "on")
        if kind == "tuple":
            return tuple(v.strip() for v in value.split(",") if v.strip())
        if kind in ("int", "float"):
            return {"int": int, "float": float}[kind](value)
    if kind == "float" and isinstance(value, int):
        return float(value)
    if kind == "tuple":
        return tuple(value)
    return value


def load_run_config(path=None, profile="desk", env=None, overrides=None):
    """Layer defaults < profile < config file < environment < explicit overrides.

    Returns ``(TrainingConfig, run_options)``; unknown keys raise
    :class:`ConfigError` before anything else happens.
    """
    env = os.environ if env is None else env
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    values = dict(PROFILES[profile])
    run = {}
    layers = []
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a flat mapping")
        layers.append(data)
    layers.append({k[len(ENV_PREFIX):].lower(): v for k, v in env.items()
                   if k.startswith(ENV_PREFIX)})
    layers.append(dict(overrides or {}))
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            if key in RUN_KEYS:
                run[key] = value
            elif key in _FIELD_TYPES:
                values[key] = _coerce(key, value)
            elif key == "profile":
                continue
            else:
                raise ConfigError(f"unknown config key {key!r}")
    config = TrainingConfig(**values)
    if config.ablation != "full":
        config = apply_ablation(config, config.ablation)
    return config, run
