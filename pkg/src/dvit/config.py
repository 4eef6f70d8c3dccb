"""Run configuration: architecture, loss and training knobs as ``key=value`` text."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

CONNECTIONS = ("LSC", "ResCBSP", "DenC")
BLOCK_KINDS = ("dvit", "spatial", "channel")

# keys that only set run length; changing them keeps the config hash (resume, longer runs)
RUN_LENGTH_KEYS = frozenset({"epochs", "checkpoint_every"})


class ConfigError(ValueError):
    pass


@dataclass
class CascadeConfig:
    # geometry
    resolution: int = 64
    channels: int = 32
    height: int = 16
    width: int = 16
    landmarks: int = 5
    blocks: int = 2
    patch: int = 4
    backbone_widths: str = "16,32,64"
    # transformer branches; widths, depths and heads are guesses
    spatial_dim: int = 64
    spatial_depth: int = 2
    spatial_heads: int = 4
    channel_dim: int = 64
    channel_depth: int = 2
    channel_heads: int = 4
    mlp_ratio: int = 4
    attn_dropout: float = 0.0
    head_bias: bool = True
    block_kind: str = "dvit"
    connection: str = "LSC"
    # heatmaps and losses
    sigma: float = 1.5
    temperature: float = 1.0
    normalizer: str = "softmax"
    beta: float = 0.5
    w: float = 1.2
    delta: float = 1.0
    awing_alpha: float = 2.1
    awing_omega: float = 14.0
    awing_epsilon: float = 1.0
    awing_theta: float = 0.5
    # training
    lr: float = 1e-4
    lr_period: int = 200
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    checkpoint_every: int = 5
    dtype: str = "float32"
    augment: str = "none"
    eye_pair: str = "0,1"
    nme_threshold: float = 10.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.w < 1.0:
            raise ConfigError(f"expanding factor w must be >= 1, got {self.w}")
        if self.connection not in CONNECTIONS:
            raise ConfigError(f"connection must be one of {CONNECTIONS}, got {self.connection!r}")
        if self.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"block_kind must be one of {BLOCK_KINDS}, got {self.block_kind!r}")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(f"feature map {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.height % 2 or self.width % 2:
            raise ConfigError("channel-split branch needs even feature-map height and width")
        if self.channels % 4:
            raise ConfigError(f"channels must be divisible by 4, got {self.channels}")
        if self.resolution % self.height or self.resolution % self.width:
            raise ConfigError(f"resolution {self.resolution} must be a multiple of the feature-map size")
        ratio = self.resolution // self.height
        if ratio < 2 or ratio & (ratio - 1):
            raise ConfigError(f"resolution / height = {ratio} must be a power of two >= 2")
        if self.spatial_dim % self.spatial_heads or self.channel_dim % self.channel_heads:
            raise ConfigError("branch widths must be divisible by their head counts")
        if self.sigma <= 0 or self.temperature <= 0:
            raise ConfigError("sigma and temperature must be positive")
        if self.normalizer not in ("softmax", "sum"):
            raise ConfigError(f"normalizer must be softmax or sum, got {self.normalizer!r}")
        if self.landmarks < 2:
            raise ConfigError("need at least 2 landmarks (normalization pair)")
        if min(self.delta, self.awing_omega, self.awing_epsilon, self.awing_theta) <= 0 or self.awing_alpha <= 1:
            raise ConfigError("loss constants: delta, omega, epsilon, theta > 0 and alpha > 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        a, b = self.eye_indices
        if not (0 <= a < self.landmarks and 0 <= b < self.landmarks and a != b):
            raise ConfigError(f"eye_pair {self.eye_pair!r} invalid for {self.landmarks} landmarks")

    @property
    def eye_indices(self) -> tuple[int, int]:
        a, b = (int(v) for v in self.eye_pair.split(","))
        return a, b

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.backbone_widths.split(",") if v.strip()) + (self.channels,)

    def replace(self, **changes) -> "CascadeConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))

    def hash(self) -> str:
        text = "".join(
            f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self) if f.name not in RUN_LENGTH_KEYS
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text: str, base: "CascadeConfig | None" = None) -> "CascadeConfig":
        pairs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            pairs[key] = value
        return (base or cls()).with_overrides(pairs)

    @classmethod
    def load(cls, path: str | Path, base: "CascadeConfig | None" = None) -> "CascadeConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), base)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def with_overrides(self, pairs: dict[str, str] | list[str]) -> "CascadeConfig":
        if isinstance(pairs, list):
            parsed = {}
            for item in pairs:
                if "=" not in item:
                    raise ConfigError(f"override {item!r} is not key=value")
                k, v = item.split("=", 1)
                parsed[k.strip()] = v.strip()
            pairs = parsed
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, value in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _parse(value, types[key], key)
        return dataclasses.replace(self, **changes)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value: str, typ, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ}") from exc
    return value


PRESETS: dict[str, dict] = {
    "desk": {},
    # full scale: 256x256 input, 256x32x32 feature maps, 8 blocks
    "full": dict(
        resolution=256, channels=256, height=32, width=32, landmarks=98, blocks=8, patch=4,
        backbone_widths="64,128,256", spatial_dim=256, spatial_depth=4, spatial_heads=8,
        channel_dim=256, channel_depth=4, channel_heads=8, epochs=500, batch_size=16,
        checkpoint_every=5, eye_pair="60,72",
    ),
    "reduced": dict(
        resolution=256, channels=160, height=32, width=32, landmarks=98, blocks=4, patch=4,
        backbone_widths="64,128,160", spatial_dim=160, spatial_depth=4, spatial_heads=8,
        channel_dim=160, channel_depth=4, channel_heads=8, epochs=500, batch_size=16,
        eye_pair="60,72",
    ),
    # gradient-check toy
    "toy": dict(
        resolution=16, channels=8, height=8, width=8, landmarks=3, blocks=2, patch=4,
        backbone_widths="4,8,8", spatial_dim=8, spatial_depth=1, spatial_heads=2,
        channel_dim=8, channel_depth=1, channel_heads=2, mlp_ratio=2, dtype="float64",
    ),
}


def preset(name: str, **overrides) -> CascadeConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return CascadeConfig(**{**PRESETS[name], **overrides})
