"""Model and training configuration, plus the flat key-value config file format.

Config files are plain text, one ``key = value`` per line, ``#`` comments
allowed.  Keys mirror the dataclass fields below; ``loss_weights`` takes a
comma-separated list.  Any CLI flag overrides the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict
from pathlib import Path


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    """Stream widths, head counts, and layer hyperparameters.

    Defaults target the full face/pose feature set: 674 face and 76 pose
    features per frame, each with one appended frame-index column.  Streams
    start with a learned projection so every width is divisible by its head
    count: face 675 -> 676 (4 heads), pose 77 -> 76 (2 heads).  The fused
    stream concatenates per-stream projections of 676 + 74 = 750 (10 heads);
    the 676/74 boundary is where the one-to-two split separates channels.
    Cross-attention streams share a common width (304) so that exchanged
    query/key widths agree; late fusion layers over concatenated stream
    outputs (752 or 608 wide) run with 8 heads.
    """

    face_dim: int = 675
    pose_dim: int = 77
    d_face: int = 676
    d_pose: int = 76
    d_fused_face: int = 676
    d_fused_pose: int = 74
    d_cross: int = 304
    face_heads: int = 4
    pose_heads: int = 2
    fused_heads: int = 10
    late_heads: int = 8
    ffn_mult: int = 2
    ff_hidden: int = 64
    dropout: float = 0.1
    pre_norm: bool = False
    use_positional_encoding: bool = True

    @property
    def d_fused(self) -> int:
        return self.d_fused_face + self.d_fused_pose

    def validate(self) -> None:
        checks = [
            ("d_face", self.d_face, self.face_heads),
            ("d_pose", self.d_pose, self.pose_heads),
            ("d_fused_face", self.d_fused_face, self.face_heads),
            ("d_fused_pose", self.d_fused_pose, self.pose_heads),
            ("fused width", self.d_fused, self.fused_heads),
            ("d_cross", self.d_cross, self.face_heads),
            ("d_cross", self.d_cross, self.pose_heads),
            ("cross concat width", 2 * self.d_cross, self.late_heads),
            ("late concat width", self.d_face + self.d_pose, self.late_heads),
        ]
        for name, width, heads in checks:
            if width < heads or width % heads != 0:
                raise ConfigError(f"{name} ({width}) must be a positive multiple of {heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout}")
        if self.face_dim < 1 or self.pose_dim < 1:
            raise ConfigError("stream input widths must be >= 1")
        if self.ffn_mult < 1 or self.ff_hidden < 1:
            raise ConfigError("feed-forward widths must be >= 1")


def toy_model_config(face_dim: int = 12, pose_dim: int = 6, **overrides) -> ModelConfig:
    """Small, shape-valid configuration for gradient checks and fast tests."""
    cfg = ModelConfig(
        face_dim=face_dim, pose_dim=pose_dim,
        d_face=8, d_pose=8, d_fused_face=8, d_fused_pose=2, d_cross=8,
        ff_hidden=8, **overrides)
    cfg.validate()
    return cfg


TASKS = ("detection", "agreement")


@dataclass
class TrainConfig:
    """All training hyperparameters; defaults follow the standard recipe."""

    learning_rate: float = 0.0005
    weight_decay: float = 0.0005
    epochs: int = 350
    batch_size: int = 32
    window_seconds: float = 3.0
    seed: int = 0
    task: str = "detection"
    topology: str = "one_stream"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float64"
    loss_weights: list[float] | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        self.model.validate()


def _coerce(raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines into a string mapping."""
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def train_config_from_mapping(mapping: dict[str, str]) -> TrainConfig:
    """Build a TrainConfig (with nested ModelConfig) from flat string keys."""
    cfg = TrainConfig()
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    model_fields = {f.name: f.type for f in fields(ModelConfig)}
    type_of = {"learning_rate": float, "weight_decay": float, "epochs": int,
               "batch_size": int, "window_seconds": float, "seed": int,
               "task": str, "topology": str, "beta1": float, "beta2": float,
               "adam_eps": float, "dtype": str}
    model_type_of = {name: (float if name == "dropout" else
                            bool if name in ("pre_norm", "use_positional_encoding") else int)
                     for name in model_fields}
    for key, raw in mapping.items():
        if key == "loss_weights":
            cfg.loss_weights = [float(v) for v in raw.split(",") if v.strip()]
        elif key in type_of:
            setattr(cfg, key, _coerce(raw, type_of[key]))
        elif key in model_type_of:
            setattr(cfg.model, key, _coerce(raw, model_type_of[key]))
        elif key in train_fields:
            raise ConfigError(f"config key {key!r} cannot be set from a file")
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return cfg


def train_config_to_mapping(cfg: TrainConfig) -> dict[str, object]:
    """Flatten a TrainConfig for JSON/checkpoint metadata."""
    out = asdict(cfg)
    return out
