"""Model / training / baseline configuration with flat key=value file IO."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Architecture hyperparameters for the encoder and its per-block heads.

    The defaults are desk-scale: deep enough for depth adaptivity to show,
    small enough to train on a CPU in minutes.
    """

    num_blocks: int = 6
    hidden_dim: int = 32
    num_heads: int = 4
    ffn_dim: int = 64
    vocab_size: int = 64
    max_seq_len: int = 32
    num_classes: int = 2

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ConfigError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        for name in ("hidden_dim", "num_heads", "ffn_dim", "vocab_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class TrainConfig:
    """Optimization settings, including the ponder-penalty weight ``tau``.

    Phase 1 fine-tunes the backbone with the final block's classifier;
    phase 2 trains everything jointly, so it gets its own (smaller) rate.
    """

    tau: float = 5e-3
    lr_phase1: float = 1e-3
    lr_phase2: float = 3e-4
    epochs_phase1: int = 3
    epochs_phase2: int = 3
    batch_size: int = 16
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.tau < 0:
            raise ConfigError(f"tau must be non-negative, got {self.tau}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ConfigError("epoch counts must be >= 0")


#: The five ponder-weight values used for the standard trade-off sweep.
DEFAULT_TAU_GRID = (5e-5, 5e-4, 5e-3, 5e-2, 5e-1)


@dataclass
class BaselineConfig:
    """Early-exit criterion for the baseline inference rules.

    Exactly one criterion is active per run, selected by ``kind``.
    """

    kind: str = "entropy"
    entropy_threshold: float = 0.2
    patience: int = 2

    def validate(self, num_blocks: int) -> None:
        if self.kind not in ("entropy", "patience"):
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "entropy" and self.entropy_threshold < 0:
            raise ConfigError("entropy_threshold must be >= 0")
        if self.kind == "patience" and not (1 <= self.patience <= num_blocks):
            raise ConfigError(
                f"patience must be in [1, {num_blocks}], got {self.patience}"
            )


# -- flat key=value files ---------------------------------------------------------
#
# One `key=value` pair per line; blank lines and lines starting with '#' are
# ignored.  ModelConfig and TrainConfig keys share a file without prefixes
# (their field names are disjoint).


def config_to_text(*configs) -> str:
    lines = []
    for cfg in configs:
        for key, value in sorted(asdict(cfg).items()):
            lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(cls, values: dict) -> dict:
    out = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        raw = values[f.name]
        try:
            out[f.name] = _convert(f.type, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {f.name}: {raw!r}") from exc
    return out


def _convert(type_name, raw: str):
    # dataclass field types arrive as strings under `from __future__ import annotations`
    name = type_name if isinstance(type_name, str) else type_name.__name__
    if name == "int":
        return int(raw)
    if name == "float":
        return float(raw)
    return raw


def configs_from_text(text: str) -> tuple[ModelConfig, TrainConfig]:
    """Build both configs from one key=value file; unknown keys are rejected."""
    values = parse_config_text(text)
    known = {f.name for f in fields(ModelConfig)} | {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return (
        ModelConfig(**_coerce(ModelConfig, values)),
        TrainConfig(**_coerce(TrainConfig, values)),
    )


def load_config_file(path) -> tuple[ModelConfig, TrainConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        return configs_from_text(fh.read())


def save_config_file(path, model_cfg: ModelConfig, train_cfg: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(model_cfg, train_cfg))
