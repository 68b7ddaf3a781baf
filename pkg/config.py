# config.py
import os
import json
import logging
from dataclasses import dataclass, asdict, fields
from pathlib import Path

from dotenv import load_dotenv

from errors import ConfigError

logger = logging.getLogger(__name__)

# Base directory of the project
BASE_DIR = Path(__file__).resolve().parent

# Pick up UX_SEED and friends from a local .env if present
load_dotenv()

# Default configuration
DEFAULT_CONFIG = {
    # General settings
    "app_name": "extremecast",
    "log_level": "INFO",
    "log_file": "extremecast.log",
    "threads": 1,
    "seed": 7,

    # Optimisation (AdamW + StepLR)
    "learning_rate": 1e-3,
    "weight_decay": 3e-6,
    "decay_step": 1,
    "decay_factor": 0.85,
    "epochs": 50,
    "batch_size": 4,
    "patience": 5,
    "val_fraction": 0.2,

    # Region partitioning and frequency modulation
    "region_height": 10,
    "region_width": 10,
    "num_filters": 10,
    "growth_rate": 1.3,
    "max_kappa": 70.0,
    "time_embed_dim": 72,

    # Event prior memory
    "memory_capacity": 5,
    "memory_years": 1,

    # Backbone (the reference scale is embed_dim=512)
    "embed_dim": 64,
    "depth": 4,
    "num_heads": 4,
    "window_size": 4,
    "patch_height": 8,
    "patch_width": 8,

    # Model variants
    "use_afm": True,
    "use_epa": True,
    "dtype": "float64",

    # Synthetic data
    "synthetic": {
        "height": 60,
        "width": 60,
        "channels": 2,
        "timesteps": 50,
        "spectral_slope": 3.0,
        "events_per_step": 1,
        "box_min": 6,
        "box_max": 14,
        "hf_amplitude": 1.0,
        "hf_band": [0.3, 0.5],
        "event_types": 3,
        "advection": [0, 1],
        "persistence": 0.9,
        "event_lifetime": 2,
        "start": "2022-06-01T00:00:00",
        "seed": 7,
    },
}


@dataclass
class TrainConfig:
    """Hyperparameters of the model and its training loop."""

    learning_rate: float = 1e-3
    weight_decay: float = 3e-6
    decay_step: int = 1
    decay_factor: float = 0.85
    epochs: int = 50
    batch_size: int = 4
    patience: int = 5
    seed: int = 7
    val_fraction: float = 0.2
    region_height: int = 10
    region_width: int = 10
    num_filters: int = 10
    growth_rate: float = 1.3
    max_kappa: float = 70.0
    time_embed_dim: int = 72
    memory_capacity: int = 5
    memory_years: int = 1
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    window_size: int = 4
    patch_height: int = 8
    patch_width: int = 8
    use_afm: bool = True
    use_epa: bool = True
    dtype: str = "float64"
    threads: int = 1

    def validate(self, grid_shape=None):
        """
        Check value ranges and cross-field constraints.

        Args:
            grid_shape: Optional (H, W) the configuration will be applied to

        Raises:
            ConfigError: On the first violated constraint
        """
        positive = [
            "decay_step", "epochs", "batch_size", "patience", "region_height",
            "region_width", "num_filters", "max_kappa", "time_embed_dim",
            "memory_capacity", "memory_years", "embed_dim", "depth", "num_heads",
            "window_size", "patch_height", "patch_width", "threads",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be non-negative")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.growth_rate < 1:
            raise ConfigError(f"growth_rate must be >= 1, got {self.growth_rate}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim={self.embed_dim} is not divisible by num_heads={self.num_heads}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"Unsupported dtype: {self.dtype}")
        if grid_shape is not None:
            height, width = grid_shape
            if height % self.region_height:
                raise ConfigError(f"region_height={self.region_height} does not divide H={height}")
            if width % self.region_width:
                raise ConfigError(f"region_width={self.region_width} does not divide W={width}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        """Build from a mapping, ignoring keys that are not TrainConfig fields."""
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


class Config:
    """Configuration manager: defaults overlaid by an optional JSON file."""

    def __init__(self, config_file=None):
        """
        Initialize with default config and load from file if given.

        Args:
            config_file: Path to a JSON configuration file, or None
        """
        self.config_file = config_file
        self.config = json.loads(json.dumps(DEFAULT_CONFIG))

        env_seed = os.getenv("UX_SEED")
        if env_seed is not None:
            try:
                self.config["seed"] = int(env_seed)
                self.config["synthetic"]["seed"] = int(env_seed)
            except ValueError:
                raise ConfigError(f"UX_SEED must be an integer, got {env_seed!r}")

        if config_file:
            if not os.path.exists(config_file):
                raise ConfigError(f"Config file {config_file} not found")
            try:
                with open(config_file, 'r') as f:
                    loaded_config = json.load(f)
            except (json.JSONDecodeError, IOError) as e:
                raise ConfigError(f"Error loading config from {config_file}: {str(e)}")
            self.update(loaded_config)
            logger.info(f"Loaded configuration from {config_file}")

    def update(self, values):
        """
        Overlay values; nested dicts (e.g. "synthetic") are merged key by key.

        Args:
            values: Mapping of configuration keys to values
        """
        for key, value in values.items():
            if key not in DEFAULT_CONFIG:
                logger.warning(f"Ignoring unknown configuration key: {key}")
                continue
            if isinstance(value, dict) and isinstance(self.config.get(key), dict):
                unknown = set(value) - set(DEFAULT_CONFIG[key])
                if unknown:
                    raise ConfigError(f"Unknown {key} keys: {sorted(unknown)}")
                self.config[key].update(value)
            else:
                self.config[key] = value

    def get(self, key, default=None):
        """
        Get a configuration value.

        Args:
            key: Configuration key
            default: Default value if key not found

        Returns:
            Configuration value
        """
        return self.config.get(key, default)

    def set(self, key, value):
        """
        Set a configuration value in memory.

        Args:
            key: Configuration key
            value: Value to set
        """
        self.update({key: value})

    def save_config(self, path):
        """
        Save configuration to file.

        Args:
            path: Destination JSON path
        """
        with open(path, 'w') as f:
            json.dump(self.config, f, indent=2, sort_keys=True)
        logger.info(f"Configuration saved to {path}")

    def get_train_config(self):
        """
        Get model and training configuration.

        Returns:
            TrainConfig: Validated hyperparameters
        """
        return TrainConfig.from_dict(self.config).validate()

    def get_synthetic_spec(self):
        """
        Get synthetic dataset configuration.

        Returns:
            SyntheticSpec: Generator parameters
        """
        from synthetic import SyntheticSpec

        values = dict(self.config["synthetic"])
        values["hf_band"] = tuple(values["hf_band"])
        values["advection"] = tuple(values["advection"])
        return SyntheticSpec(**values).validate()

    def to_dict(self):
        """
        Get entire configuration as dictionary.

        Returns:
            dict: Configuration dictionary
        """
        return json.loads(json.dumps(self.config))
