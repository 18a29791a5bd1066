"""Run configuration: flat key=value files, CLI overrides, canonical text and hash."""
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Tuple
import os
from keys import Keys
from modules import sha256_text
from classes.errors import ConfigError

# not part of the experiment identity
HASH_EXCLUDED = ("seed", "out", "force")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = Keys.BATCH_SIZE
    r: float = Keys.KEEP_RATIO
    d1: int = Keys.D_MAIN
    d2: int = Keys.D_AUX
    max_epochs: int = Keys.MAX_EPOCHS
    lr: float = Keys.LR
    seed: int = Keys.SEED
    split_seed: int = Keys.SPLIT_SEED
    pretrain_epochs: int = Keys.PRETRAIN_EPOCHS
    enable_eal: bool = True
    enable_pal: bool = True
    enable_topk_reweight: bool = True
    backbone_main: str = "mlp"
    backbone_aux: str = "mlp"
    method: str = "aefs"
    mode: str = "soft"
    hidden_dims: Tuple[int, ...] = Keys.HIDDEN_DIMS
    cross_layers: int = Keys.CROSS_LAYERS
    data: str = Keys.SYNTH_DIR
    data_format: str = "table"
    min_freq: int = Keys.MIN_FREQ
    out: str = Keys.OUTPUT_ROOT
    force: bool = False

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ConfigError(f"r must lie in (0, 1], got {self.r}")
        if not 0 < self.d2 <= self.d1:
            raise ConfigError(f"need 0 < d2 <= d1, got d1={self.d1}, d2={self.d2}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be nonnegative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.min_freq < 1:
            raise ConfigError("min_freq must be at least 1")
        if self.method not in Keys.METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {Keys.METHODS}")
        if self.mode not in Keys.MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {Keys.MODES}")
        for name in ("backbone_main", "backbone_aux"):
            if getattr(self, name) not in Keys.BACKBONES:
                raise ConfigError(f"unknown {name} {getattr(self, name)!r}, expected one of {Keys.BACKBONES}")
        if self.data_format not in ("table", "criteo"):
            raise ConfigError(f"unknown data_format {self.data_format!r}")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ConfigError("hidden_dims must be a nonempty list of positive widths")

    # ------------------------------------------------------------ parsing

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def coerce(cls, name: str, value: Any):
        defaults = {f.name: f.default for f in fields(cls)}
        if name not in defaults:
            raise ConfigError(f"unknown config key {name!r}")
        default = defaults[name]
        try:
            if isinstance(default, bool):
                if isinstance(value, bool):
                    return value
                text = str(value).strip().lower()
                if text in _TRUE:
                    return True
                if text in _FALSE:
                    return False
                raise ValueError(f"not a boolean: {value!r}")
            if isinstance(default, tuple):
                if isinstance(value, str):
                    value = [v for v in value.replace("(", "").replace(")", "").split(",") if v.strip()]
                elif isinstance(value, int):
                    value = [value]
                return tuple(int(v) for v in value)
            if isinstance(default, int):
                return int(value)
            if isinstance(default, float):
                return float(value)
            return str(value).strip()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {name}: {e}") from e

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainConfig":
        return cls(**{k: cls.coerce(k, v) for k, v in values.items()})

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        values = {}
        with open(path, "r") as f:
            for number, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{number}: expected key=value, got {line!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                values[key.replace("-", "_")] = value
        return cls.from_dict(values)

    def with_overrides(self, **overrides) -> "TrainConfig":
        """Returns a copy where every non-None override wins"""
        given = {k.replace("-", "_"): v for k, v in overrides.items() if v is not None}
        return replace(self, **{k: self.coerce(k, v) for k, v in given.items()})

    # ------------------------------------------------------------ canonical form

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self, exclude=()) -> str:
        lines = []
        for name, value in self.to_dict().items():
            if name in exclude:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{name} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return sha256_text(self.to_text(exclude=HASH_EXCLUDED))

    def run_name(self) -> str:
        return f"{self.config_hash()[:12]}_seed{self.seed}"
