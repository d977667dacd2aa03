"""Model architecture configuration.

``conditioning`` selects how the per-block modulation vector is built:
"unconditional" (timestep embedding only), "class" (timestep + class
embedding table) or "representation" (timestep + projected encoder output).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import ConfigError

CONDITIONING_MODES = ("unconditional", "class", "representation")


@dataclass(frozen=True)
class ModelConfig:
    image_channels: int = 1
    image_size: int = 32
    patch_size: int = 2
    hidden: int = 64
    blocks: int = 4
    heads: int = 4
    encoder_blocks: int = 2
    encoder_hidden: int = 64
    repr_dim: int = 64
    num_classes: int | None = None
    conditioning: str = "unconditional"
    T: int = 1000

    def __post_init__(self):
        if self.conditioning not in CONDITIONING_MODES:
            raise ConfigError(f"unknown conditioning mode {self.conditioning!r}")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.hidden % 4 != 0 or self.encoder_hidden % 4 != 0:
            raise ConfigError("hidden sizes must be divisible by 4 (2-d sinusoidal layout)")
        if self.conditioning == "class":
            if self.num_classes is None or self.num_classes < 2:
                raise ConfigError("class conditioning requires num_classes >= 2")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")

    @property
    def tokens_per_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.tokens_per_side ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.image_channels

    def with_conditioning(self, mode: str, num_classes: int | None = None) -> "ModelConfig":
        d = asdict(self)
        d["conditioning"] = mode
        d["num_classes"] = num_classes
        return ModelConfig(**d)

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, no whitespace. Used for config hashing."""
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        try:
            return ModelConfig(**json.loads(text))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad model config JSON: {e}") from e


def s_micro(conditioning: str = "representation", num_classes: int | None = None) -> ModelConfig:
    """Desk-scale default: 1x32x32 images, 4 blocks of width 64."""
    return ModelConfig(
        image_channels=1, image_size=32, patch_size=2,
        hidden=64, blocks=4, heads=4,
        encoder_blocks=2, encoder_hidden=64, repr_dim=64,
        conditioning=conditioning, num_classes=num_classes,
    )


def micro_8(conditioning: str = "representation", num_classes: int | None = None) -> ModelConfig:
    """Gradient-check scale: 8x8 image, one block of width 16."""
    return ModelConfig(
        image_channels=1, image_size=8, patch_size=2,
        hidden=16, blocks=1, heads=2,
        encoder_blocks=1, encoder_hidden=16, repr_dim=8,
        conditioning=conditioning, num_classes=num_classes, T=100,
    )


def dit_b(image_channels: int = 4, image_size: int = 32, conditioning: str = "representation",
          num_classes: int | None = None) -> ModelConfig:
    """The paper-scale B geometry (12 blocks, width 768, 12 heads)."""
    return ModelConfig(
        image_channels=image_channels, image_size=image_size, patch_size=2,
        hidden=768, blocks=12, heads=12,
        encoder_blocks=12, encoder_hidden=768, repr_dim=768,
        conditioning=conditioning, num_classes=num_classes,
    )
