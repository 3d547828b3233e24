"""Training configuration, TOML round-trip and dotted-key overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

SECTIONS = ("env", "algo", "entropy", "optim", "nets", "run")
RUNTIME_KEYS = ("workers",)


def _f(section: str, default, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass
class TrainConfig:
    # env
    env: str = _f("env", "traffic_junction")
    n_agents: int = _f("env", 2)
    episode_limit: int = _f("env", 200)
    # algo
    algo: str = _f("algo", "lica")
    gamma: float = _f("algo", 0.99)
    td_lambda: float = _f("algo", 0.8)
    critic: str = _f("algo", "mixing")
    policy_input: str = _f("algo", "distribution_params")
    gumbel_temperature: float = _f("algo", 1.0)
    target_update_interval: int = _f("algo", 200)
    # entropy
    entropy_mode: str = _f("entropy", "adaptive")
    entropy_coef: float = _f("entropy", 0.11)
    # optim
    batch_size: int = _f("optim", 32)
    rollout_length: int = _f("optim", 0)
    policy_lr: float = _f("optim", 0.0025)
    critic_lr: float = _f("optim", 0.0005)
    grad_clip: float = _f("optim", 10.0)
    # nets
    hidden_dim: int = _f("nets", 64)
    critic_hidden: int = _f("nets", 64)
    hyper_hidden: int = _f("nets", 64)
    recurrent: bool = _f("nets", False)
    share_params: bool = _f("nets", True)
    # run
    seed: int = _f("run", 0)
    max_updates: int = _f("run", 1000)
    max_episodes: int = _f("run", 0)
    log_interval: int = _f("run", 50)
    checkpoint_interval: int = _f("run", 0)
    eval_episodes: int = _f("run", 0)
    rollout_chunk: int = _f("run", 8)
    workers: int = _f("run", 1)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 <= self.td_lambda <= 1.0:
            raise ValueError(f"td_lambda must be in [0, 1], got {self.td_lambda}")
        if self.entropy_mode not in ("adaptive", "vanilla"):
            raise ValueError(f"entropy_mode must be 'adaptive' or 'vanilla', got {self.entropy_mode!r}")
        if self.entropy_coef < 0:
            raise ValueError(f"entropy_coef must be >= 0, got {self.entropy_coef}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.critic not in ("mixing", "mlp"):
            raise ValueError(f"critic must be 'mixing' or 'mlp', got {self.critic!r}")
        if self.policy_input not in ("distribution_params", "gumbel_st"):
            raise ValueError(f"policy_input must be 'distribution_params' or 'gumbel_st', got {self.policy_input!r}")
        if self.algo not in ("lica", "coma"):
            raise ValueError(f"algo must be 'lica' or 'coma', got {self.algo!r}")
        if self.max_updates <= 0 and self.max_episodes <= 0:
            raise ValueError("set max_updates or max_episodes")
        if self.rollout_chunk < 1 or self.workers < 1:
            raise ValueError("rollout_chunk and workers must be >= 1")

    # --- (de)serialization ---

    def to_sections(self) -> dict:
        out: dict[str, dict] = {s: {} for s in SECTIONS}
        for f in fields(self):
            out[f.metadata["section"]][f.name] = getattr(self, f.name)
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_sections())

    def to_dict(self, runtime: bool = True) -> dict:
        """Flat dict; ``runtime=False`` drops execution-only keys that cannot change results."""
        out = dataclasses.asdict(self)
        if not runtime:
            for key in RUNTIME_KEYS:
                out.pop(key)
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(runtime=False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, flat: dict) -> "TrainConfig":
        valid = {f.name for f in fields(cls)}
        bad = sorted(set(flat) - valid)
        if bad:
            raise KeyError(f"unknown config key(s) {bad}; valid keys: {', '.join(sorted(valid))}")
        return cls(**flat)

    @classmethod
    def from_toml(cls, text: str) -> "TrainConfig":
        return cls.from_dict(_flatten(tomli.loads(text)))

    @classmethod
    def load(cls, path: str | Path, overrides: list[str] | None = None) -> "TrainConfig":
        flat = _flatten(tomli.loads(Path(path).read_text()))
        flat.update(parse_overrides(overrides or []))
        return cls.from_dict(flat)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _flatten(doc: dict) -> dict:
    flat = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            if key not in SECTIONS:
                raise KeyError(f"unknown config section [{key}]; valid sections: {', '.join(SECTIONS)}")
            flat.update(value)
        else:
            flat[key] = value
    return flat


def parse_overrides(items: list[str]) -> dict:
    """``["optim.batch_size=16", "seed=3"]`` -> ``{"batch_size": 16, "seed": 3}``."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip().split(".")[-1]
        if key not in types:
            raise KeyError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(types))}")
        out[key] = _coerce(types[key], raw.strip())
    return out


def _coerce(type_name, raw: str):
    t = type_name if isinstance(type_name, str) else type_name.__name__
    if t == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse {raw!r} as bool")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw.strip("\"'")


PRESET_DIR = Path(__file__).parent / "presets"


def preset(name: str, **overrides) -> TrainConfig:
    """Load a bundled preset (``traffic_junction``, ``coop_nav``, ...)."""
    path = PRESET_DIR / f"{name}.toml"
    if not path.exists():
        names = sorted(p.stem for p in PRESET_DIR.glob("*.toml"))
        raise FileNotFoundError(f"no preset {name!r}; available: {', '.join(names)}")
    flat = _flatten(tomli.loads(path.read_text()))
    flat.update(overrides)
    return TrainConfig.from_dict(flat)
