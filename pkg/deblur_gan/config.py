"""
Training configuration: defaults, key-value config files and overrides.

Config files use dotenv syntax, one `key=value` per line, with TrainConfig field
names as keys. Precedence: override > config file > environment > defaults.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union, get_type_hints

from dotenv import dotenv_values

from deblur_gan.architecture import UPSAMPLE_MODES
from deblur_gan.errors import ConfigError
from deblur_gan.losses import LossWeights

EXTRACTORS = ("vgg16", "random", "identity")

# Fields that change where or how fast a run executes, not what it computes
OPERATIONAL_FIELDS = ("output_dir", "num_workers", "prefetch_factor", "device", "dataset_root")

# TrainConfig keys that fall back to an environment variable before the default
ENV_DEFAULTS = {
    "device": "DEBLUR_GAN_DEVICE",
    "output_dir": "DEBLUR_GAN_OUTPUT_DIR",
    "dataset_root": "DEBLUR_GAN_DATASET_ROOT",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 40
    learning_rate: float = 1e-4
    beta_1: float = 0.9
    beta_2: float = 0.999
    epsilon: float = 1e-8
    patch: int = 256
    critic_steps_per_gen_step: int = 1
    perceptual_weight: float = 100.0
    adversarial_weight: float = 1.0
    seed: int = 0
    dataset_root: str = ""
    output_dir: str = "runs"
    extractor: str = "vgg16"
    extractor_layer: str = "conv3_3"
    width_divisor: int = 1
    upsample_mode: str = "nearest"
    critic_clip: float = 0.0
    shuffle: bool = True
    num_workers: int = 0
    prefetch_factor: int = 2
    device: str = "cpu"

    def __post_init__(self):
        for key in ("batch_size", "epochs", "patch", "critic_steps_per_gen_step", "width_divisor",
                    "prefetch_factor"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        for key in ("beta_1", "beta_2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"{key} must be in [0, 1), got {getattr(self, key)}")
        if self.num_workers < 0:
            raise ConfigError(f"num_workers must be >= 0, got {self.num_workers}")
        if self.critic_clip < 0:
            raise ConfigError(f"critic_clip must be >= 0, got {self.critic_clip}")
        if self.extractor not in EXTRACTORS:
            raise ConfigError(f"extractor must be one of {EXTRACTORS}, got {self.extractor!r}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ConfigError(
                f"upsample_mode must be one of {UPSAMPLE_MODES}, got {self.upsample_mode!r}"
            )
        if self.patch % 16:
            raise ConfigError(f"patch must be a multiple of 16, got {self.patch}")
        try:
            self.loss_weights
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.perceptual_weight, self.adversarial_weight)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """SHA-256 of the fields that determine what a run computes."""
        payload = {k: v for k, v in self.to_dict().items() if k not in OPERATIONAL_FIELDS}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def valid_keys() -> List[str]:
    return [f.name for f in dataclasses.fields(TrainConfig)]


def _coerce(key: str, raw: Any, kind: type) -> Any:
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"Invalid value for {key}: {str(e)}", valid_keys()) from e


def _check_keys(values: Mapping[str, Any], source: str):
    keys = valid_keys()
    unknown = sorted(set(values) - set(keys))
    if unknown:
        raise ConfigError(
            f"Unknown config key(s) in {source}: {', '.join(unknown)}. "
            f"Valid keys: {', '.join(keys)}",
            keys,
        )


def read_config_file(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """Parse a key-value config file; raises ConfigError if missing or holding unknown keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    values = {k.strip(): v for k, v in dotenv_values(path).items()}
    _check_keys(values, str(path))
    return values


def load_train_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> TrainConfig:
    """
    Build a TrainConfig from defaults, environment, an optional file and overrides.

    Raises:
        ConfigError: On unknown keys, unparsable values or broken invariants
    """
    merged: Dict[str, Any] = {}
    for key, env_name in ENV_DEFAULTS.items():
        if os.getenv(env_name):
            merged[key] = os.getenv(env_name)
    if path is not None:
        merged.update({k: v for k, v in read_config_file(path).items() if v is not None})
    if overrides:
        _check_keys(overrides, "overrides")
        merged.update({k: v for k, v in overrides.items() if v is not None})

    hints = get_type_hints(TrainConfig)
    coerced = {key: _coerce(key, value, hints[key]) for key, value in merged.items()}
    return TrainConfig(**coerced)


def write_config_file(config: TrainConfig, path: Union[str, Path]) -> Path:
    """Write every field as key=value, readable by load_train_config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={value}" for key, value in config.to_dict().items()]
    path.write_text("\n".join(lines) + "\n")
    return path
