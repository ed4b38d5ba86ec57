"""Rectification attention: per level, gross and object branches disagree
exactly where predictions tend to go wrong; their difference drives an
attention in [-1, 1], an object saliency prediction, and a regressed error
map supervised against the residual left by the object prediction.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import MapHead, TopDownDecoder, init_weights
from .config import EncoderConfig
from .losses import bce, canon_map, error_map_kl


@dataclass
class RectificationBundle:
    """Everything one level emits."""

    attention: torch.Tensor  # (B, 1, h, w) in [-1, 1]
    object_pred: torch.Tensor  # (B, 1, H, W) in [0, 1]
    error_pred: torch.Tensor  # (B, 1, H, W) in [-1, 1]
    gross_feats: torch.Tensor
    object_feats: torch.Tensor
    error_feats: torch.Tensor


class BranchStack(nn.Module):
    """Two 3x3 convolutions at the working width, then a 1x1 down to one map."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, 1, 1),
        )
        init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class RectificationLevel(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        c = cfg.lateral_channels
        self.gross = BranchStack(c, c)
        self.object = BranchStack(c, c)
        self.classifier = MapHead(1, c, activation="sigmoid")
        self.regressor = MapHead(1, c, activation="tanh")

    def forward(self, d: torch.Tensor, size: tuple[int, int]) -> RectificationBundle:
        f_gross = self.gross(d)
        f_object = self.object(d)
        f_error = f_gross - f_object
        attention = torch.tanh(f_error)
        weighted = f_object * attention + f_object
        return RectificationBundle(
            attention=attention,
            object_pred=self.classifier(weighted, size),
            error_pred=self.regressor(f_error, size),
            gross_feats=f_gross,
            object_feats=f_object,
            error_feats=f_error,
        )


class RectificationSubnet(nn.Module):
    """Owns its top-down decoder and one branch pair + heads per level."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.decoder = TopDownDecoder(cfg)
        self.levels = nn.ModuleList(RectificationLevel(cfg) for _ in range(5))

    def forward(
        self, laterals: list[torch.Tensor], size: tuple[int, int]
    ) -> list[RectificationBundle]:
        dec = self.decoder(laterals)
        return [level(d, size) for level, d in zip(self.levels, dec)]


def error_target(g: torch.Tensor, object_pred: torch.Tensor) -> torch.Tensor:
    """Residual the error regressor should reproduce: mask minus prediction.

    The prediction is treated as a constant so the target does not chase the
    parameters being trained.
    """
    gc, oc = canon_map(g), canon_map(object_pred)
    if gc.shape != oc.shape:
        raise ValueError(f"shape mismatch: {tuple(gc.shape)} vs {tuple(oc.shape)}")
    return gc - oc.detach()


def rectification_losses(
    bundles: list[RectificationBundle], g: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """(object supervision, error-map supervision), each summed over levels."""
    l_ro = sum(bce(b.object_pred, g) for b in bundles)
    l_re = sum(
        error_map_kl(error_target(g, b.object_pred), b.error_pred) for b in bundles
    )
    return l_ro, l_re
