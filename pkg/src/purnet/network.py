"""Full network assembly: shared extractor, three subnetworks, and the
bundle of everything the objective needs.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .config import EncoderConfig
from .backbone import Encoder, LateralProjections
from .losses import LossBundle, total_loss
from .promotion import PromotionSubnet
from .purificatory import PurificatoryOutputs, PurificatorySubnet
from .rectification import RectificationBundle, RectificationSubnet


@dataclass
class NetworkOutputs:
    promotion_attentions: list[torch.Tensor]
    promotion_sides: list[torch.Tensor]
    rectification: list[RectificationBundle]
    purificatory: PurificatoryOutputs

    @property
    def object_preds(self) -> list[torch.Tensor]:
        return [b.object_pred for b in self.rectification]

    @property
    def error_preds(self) -> list[torch.Tensor]:
        return [b.error_pred for b in self.rectification]

    @property
    def inference(self) -> torch.Tensor:
        """The finest purificatory side output."""
        return self.purificatory.inference


class PurificatoryNet(nn.Module):
    """Encoder + laterals shared by three subnetworks, each with its own
    top-down decoding parameters."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.laterals = LateralProjections(cfg)
        self.promotion = PromotionSubnet(cfg)
        self.rectification = RectificationSubnet(cfg)
        self.purificatory = PurificatorySubnet(cfg)

    def forward(self, images: torch.Tensor) -> NetworkOutputs:
        size = tuple(images.shape[-2:])
        laterals = self.laterals(self.encoder(images))
        attentions, promotion_sides = self.promotion(laterals, size)
        bundles = self.rectification(laterals, size)
        outs = self.purificatory(
            laterals, attentions, [b.attention for b in bundles], size
        )
        return NetworkOutputs(
            promotion_attentions=attentions,
            promotion_sides=promotion_sides,
            rectification=bundles,
            purificatory=outs,
        )

    def compute_losses(self, outputs: NetworkOutputs, g: torch.Tensor, segs) -> LossBundle:
        return total_loss(
            outputs.promotion_sides,
            outputs.object_preds,
            outputs.error_preds,
            outputs.purificatory.sides,
            g,
            segs,
        )

    def extractor_modules(self) -> list[nn.Module]:
        return [self.encoder, self.laterals]

    def subnet_modules(self) -> dict[str, nn.Module]:
        return {
            "promotion": self.promotion,
            "rectification": self.rectification,
            "purificatory": self.purificatory,
        }
