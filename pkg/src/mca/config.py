"""Training configuration: every stated hyperparameter plus every open
decision, serialized as a flat ``key = value`` text format.

Precedence when loading: file values, then explicit CLI overrides, then the
``MCA_SEED`` environment variable (seed only).  Unknown keys are errors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from typing import Optional

from .augment import parse_strategy
from .encoder import EncoderConfig
from .errors import ConfigError

VARIANTS = ("decoder_only", "adaptor_plain", "tc_only", "sc_only", "mca")


@dataclass(frozen=True)
class TrainConfig:
    # encoder geometry
    image_size: int = 64
    patch_size: int = 16
    channels: int = 3
    embed_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    mlp_ratio: int = 4
    # adaptors / contrastive
    bottleneck: int = 8          # width-reduction factor; overridable per run
    temperature: float = 0.1
    token_pair_limit: int = 0    # 0 disables negative subsampling
    # augmentation
    strategy: str = "CJ+RS"
    aug_adapted_forward: bool = True  # augmented pass uses adaptor residuals
    # optimization
    batch_size: int = 8
    epochs: int = 30
    lr_start: float = 2e-4
    lr_end: float = 1e-7
    # loss weights (BCE, IoU, CL_t, CL_s)
    w_bce: float = 1.0
    w_iou: float = 1.0
    w_cl_t: float = 1.0
    w_cl_s: float = 1.0
    # run identity
    variant: str = "mca"
    seed: int = 0
    data_root: str = "data"
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.lr_start > self.lr_end > 0):
            raise ConfigError(
                f"need lr_start > lr_end > 0, got {self.lr_start} / {self.lr_end}"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.embed_dim % self.bottleneck != 0:
            raise ConfigError(
                f"bottleneck {self.bottleneck} must divide embed_dim {self.embed_dim}"
            )
        if self.token_pair_limit < 0:
            raise ConfigError("token_pair_limit must be >= 0")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        parse_strategy(self.strategy)  # validates the op set
        self.encoder_config()          # validates geometry divisibility

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            channels=self.channels,
            embed_dim=self.embed_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            mlp_ratio=self.mlp_ratio,
        )

    @property
    def adaptors_enabled(self) -> bool:
        return self.variant != "decoder_only"

    @property
    def use_token_loss(self) -> bool:
        return self.variant in ("tc_only", "mca")

    @property
    def use_sample_loss(self) -> bool:
        return self.variant in ("sc_only", "mca")

    @property
    def loss_weights(self):
        return (self.w_bce, self.w_iou, self.w_cl_t, self.w_cl_s)


def config_to_text(cfg: TrainConfig) -> str:
    """Serialize as one 'key = value' line per field, in declaration order."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str, target_type: type):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse config key {name!r} from {raw!r}") from exc


def config_from_text(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Parse 'key = value' lines; '#' starts a comment; unknown keys error."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    types = {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno} is not 'key = value': {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} on line {lineno}")
        updates[key] = _coerce(key, raw, types[key])
    base = base if base is not None else TrainConfig()
    return replace(base, **updates)


def load_config(path: Optional[str], overrides: Optional[dict] = None) -> TrainConfig:
    """File (optional) -> overrides -> MCA_SEED environment variable."""
    cfg = TrainConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            cfg = config_from_text(f.read(), base=cfg)
    if overrides:
        known = {f.name for f in fields(TrainConfig)}
        bad = set(overrides) - known
        if bad:
            raise ConfigError(f"unknown config keys in overrides: {sorted(bad)}")
        cfg = replace(cfg, **overrides)
    env_seed = os.environ.get("MCA_SEED")
    if env_seed is not None:
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError as exc:
            raise ConfigError(f"MCA_SEED must be an integer, got {env_seed!r}") from exc
    return cfg


def parse_override(text: str) -> tuple:
    """Parse a 'key=value' CLI override into a typed (key, value) pair."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = (part.strip() for part in text.split("=", 1))
    for f in fields(TrainConfig):
        if f.name == key:
            return key, _coerce(key, raw, type(getattr(TrainConfig(), f.name)))
    raise ConfigError(f"unknown config key {key!r}")
