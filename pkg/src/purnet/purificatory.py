"""Purificatory decoding: the main saliency pathway. Each level's features
are weighted first by promotion attention (where to look) and then by
rectification attention (what tends to go wrong), producing five supervised
side outputs; the finest one is the inference result.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import MapHead, TopDownDecoder, init_weights
from .config import EncoderConfig
from .losses import ibce
from .promotion import apply_promotion


@dataclass
class PurificatoryOutputs:
    """Five side outputs, finest first; ``fusion`` is their elementwise mean."""

    sides: list[torch.Tensor]

    def __post_init__(self):
        if len(self.sides) != 5:
            raise ValueError(f"expected 5 side outputs, got {len(self.sides)}")

    @property
    def fusion(self) -> torch.Tensor:
        return torch.stack(self.sides).mean(dim=0)

    @property
    def inference(self) -> torch.Tensor:
        return self.sides[0]


class PurificatoryLevel(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        c = cfg.lateral_channels
        self.fuse = nn.Conv2d(c, c, 3, padding=1)
        self.classifier = MapHead(c, c)
        init_weights(self.fuse)

    def forward(
        self,
        f: torch.Tensor,
        a_p: torch.Tensor,
        a_r: torch.Tensor,
        size: tuple[int, int],
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (weighted features M, side output)."""
        if f.shape != a_p.shape:
            raise ValueError(
                f"feature/promotion shape mismatch: {tuple(f.shape)} vs {tuple(a_p.shape)}"
            )
        if a_r.shape[-2:] != f.shape[-2:] or a_r.shape[1] != 1:
            raise ValueError(
                f"rectification attention must be (B, 1, {f.shape[2]}, {f.shape[3]}), "
                f"got {tuple(a_r.shape)}"
            )
        t = apply_promotion(f, a_p)
        t = self.fuse(t)
        m = t * a_r + t
        return m, self.classifier(m, size)


class PurificatorySubnet(nn.Module):
    """Owns its top-down decoder and one attention-fusing stage per level."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.decoder = TopDownDecoder(cfg)
        self.levels = nn.ModuleList(PurificatoryLevel(cfg) for _ in range(5))

    def forward(
        self,
        laterals: list[torch.Tensor],
        promotion_attns: list[torch.Tensor],
        rectification_attns: list[torch.Tensor],
        size: tuple[int, int],
    ) -> PurificatoryOutputs:
        if len(promotion_attns) != 5 or len(rectification_attns) != 5:
            raise ValueError("expected 5 attention maps per subnetwork")
        dec = self.decoder(laterals)
        sides = [
            level(d, a_p, a_r, size)[1]
            for level, d, a_p, a_r in zip(
                self.levels, dec, promotion_attns, rectification_attns
            )
        ]
        return PurificatoryOutputs(sides=sides)


def purificatory_loss(
    outs: PurificatoryOutputs, g: torch.Tensor, error_preds: list[torch.Tensor]
) -> torch.Tensor:
    """Deep error-weighted supervision: per level, BCE scaled by 1 + |error|.

    The error maps come from the rectification subnetwork and act as
    constants here.
    """
    return sum(ibce(s, g, e) for s, e in zip(outs.sides, error_preds))
