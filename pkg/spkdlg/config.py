"""
Configuration layer.

Hyperparameters live in frozen dataclasses that serialise to plain dicts (for the
checkpoint header and the run manifest). Runtime knobs come from the environment,
optionally seeded from a project-root .env file.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

from spkdlg.errors import ConfigError

logger = logging.getLogger(__name__)

HISTORY_MODES = ("none", "semantic", "natural_language")
TASKS = ("lu", "policy", "joint")
SENTENCE_ENCODERS = ("cnn", "blstm")
CONDITIONING = ("init_state", "concat_input")
POLICY_INPUTS = ("words", "tags")
PADDING_MODES = ("masked", "zeros")
ROLES = ("tourist", "guide")

# CLI spelling -> internal history mode
MODE_ALIASES = {"none": "none", "sem": "semantic", "nl": "natural_language"}


def _from_dict(cls, data: Dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = dict(data)
    for key, value in kwargs.items():
        # JSON round trip turns tuples into lists
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    return cls(**kwargs)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches. The defaults reproduce the published setup."""

    history_mode: str = "none"
    role_split: bool = False
    intermediate_guidance: bool = False
    history_window: Optional[int] = 5  # None: every prior turn of the session
    threshold: float = 0.5
    hidden_dim: int = 128
    embedding_dim: int = 200
    filter_widths: Tuple[int, ...] = (2, 3, 4)
    filters_per_width: int = 128
    sentence_encoder: str = "cnn"
    conditioning: str = "init_state"
    task: str = "lu"
    policy_input: str = "words"
    target_role: str = "tourist"
    trainable_embeddings: bool = True

    def validate(self) -> "ModelConfig":
        if self.history_mode not in HISTORY_MODES:
            raise ConfigError(f"history_mode must be one of {HISTORY_MODES}, got {self.history_mode!r}")
        if self.intermediate_guidance and self.history_mode != "natural_language":
            raise ConfigError("intermediate_guidance requires history_mode == 'natural_language'")
        if self.role_split and self.history_mode == "none":
            raise ConfigError("role_split needs a history (history_mode != 'none')")
        if self.history_window is not None and self.history_window < 1:
            raise ConfigError(f"history_window must be positive or None, got {self.history_window}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.hidden_dim < 1 or self.embedding_dim < 1 or self.filters_per_width < 1:
            raise ConfigError("hidden_dim, embedding_dim and filters_per_width must be positive")
        if not self.filter_widths or any(w < 1 for w in self.filter_widths):
            raise ConfigError(f"filter_widths must be positive, got {self.filter_widths}")
        if self.sentence_encoder not in SENTENCE_ENCODERS:
            raise ConfigError(f"sentence_encoder must be one of {SENTENCE_ENCODERS}")
        if self.conditioning not in CONDITIONING:
            raise ConfigError(f"conditioning must be one of {CONDITIONING}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.policy_input not in POLICY_INPUTS:
            raise ConfigError(f"policy_input must be one of {POLICY_INPUTS}")
        if self.policy_input == "tags" and self.task != "policy":
            raise ConfigError("policy_input 'tags' only applies to task 'policy'")
        if self.target_role not in ROLES:
            raise ConfigError(f"target_role must be one of {ROLES}")
        return self

    @property
    def max_width(self) -> int:
        return max(self.filter_widths)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["filter_widths"] = list(self.filter_widths)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        return _from_dict(cls, data).validate()


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    shuffle: bool = True
    early_stop: bool = False
    patience: int = 3
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: Optional[float] = 5.0
    padding: str = "masked"
    split_seed: int = 0
    split_fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    min_token_freq: int = 1

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive or None")
        if self.padding not in PADDING_MODES:
            raise ConfigError(f"padding must be one of {PADDING_MODES}")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split_fractions must be three values summing to 1, got {self.split_fractions}")
        if self.min_token_freq < 1:
            raise ConfigError("min_token_freq must be >= 1")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["split_fractions"] = list(self.split_fractions)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        return _from_dict(cls, data).validate()


@dataclass(frozen=True)
class Settings:
    """Process-level knobs read from the environment."""

    threads: int = 1
    db_url: str = "sqlite:///./spkdlg_runs.db"
    log_level: str = "INFO"


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw.strip())
    except ValueError as e:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from e
    if value < 1:
        raise ConfigError(f"{name} must be >= 1, got {value}")
    return value


def load_settings(env_path: Optional[Path] = None) -> Settings:
    """
    Read SPKDLG_* variables. A .env file at the project root (or `env_path`) is
    loaded first without overriding variables already set in the process.
    """
    if env_path is None:
        env_path = Path(__file__).resolve().parent.parent / ".env"
    if env_path.exists():
        load_dotenv(dotenv_path=env_path, override=False)
        logger.debug("Loaded environment from %s", env_path)

    return Settings(
        threads=_env_int("SPKDLG_THREADS", 1),
        db_url=os.getenv("SPKDLG_DB_URL", "sqlite:///./spkdlg_runs.db").strip(),
        log_level=os.getenv("SPKDLG_LOG_LEVEL", "INFO").strip().upper() or "INFO",
    )
