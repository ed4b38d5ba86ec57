"""Promotion attention: highlights candidate salient regions at every decoder
level and is supervised with deep BCE side outputs.
"""

import torch
from torch import nn

from .backbone import MapHead, TopDownDecoder
from .config import EncoderConfig
from .losses import bce


def spatial_softmax(f: torch.Tensor) -> torch.Tensor:
    """Softmax over all spatial positions, independently per channel."""
    b, c, h, w = f.shape
    return torch.softmax(f.reshape(b, c, h * w), dim=2).reshape(b, c, h, w)


def channel_softmax(f: torch.Tensor) -> torch.Tensor:
    """Softmax over channels of the globally average-pooled features."""
    pooled = f.mean(dim=(2, 3))
    return torch.softmax(pooled, dim=1)


def promotion_attention(f: torch.Tensor) -> torch.Tensor:
    """Joint spatial-channel attention.

    The product of a per-channel spatial softmax and a channel softmax of the
    pooled features; its total mass over (H, W, C) is exactly 1 per image.
    """
    if f.dim() != 4:
        raise ValueError(f"expected (B, C, H, W) features, got {tuple(f.shape)}")
    zs = spatial_softmax(f)
    zc = channel_softmax(f)
    return zs * zc.unsqueeze(2).unsqueeze(3)


def apply_promotion(f: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
    """Weight features with attention, keeping a residual path: f * a + f."""
    if f.shape != a.shape:
        raise ValueError(f"shape mismatch: {tuple(f.shape)} vs {tuple(a.shape)}")
    return f * a + f


class PromotionSubnet(nn.Module):
    """Owns its top-down decoder and one side-output classifier per level."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.decoder = TopDownDecoder(cfg)
        c = cfg.lateral_channels
        self.classifiers = nn.ModuleList(MapHead(c, c) for _ in range(5))

    def forward(
        self, laterals: list[torch.Tensor], size: tuple[int, int]
    ) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
        """Returns (attentions, side outputs), both fine-to-coarse."""
        dec = self.decoder(laterals)
        attentions = [promotion_attention(d) for d in dec]
        sides = [
            head(apply_promotion(d, a), size)
            for head, d, a in zip(self.classifiers, dec, attentions)
        ]
        return attentions, sides


def promotion_loss(sides: list[torch.Tensor], g: torch.Tensor) -> torch.Tensor:
    """Deep supervision: sum of the side outputs' BCE against the mask."""
    return sum(bce(s, g) for s in sides)
