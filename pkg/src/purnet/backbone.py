"""Shared feature extraction: a five-stage convolutional encoder, 1x1 lateral
projections onto a common channel width, and the top-down decoder that each
subnetwork instantiates with its own parameters.
"""

import torch
import torch.nn.functional as F
from torch import nn

from .config import EncoderConfig


def init_weights(module: nn.Module) -> None:
    """He initialization with zero bias for every convolution."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class Encoder(nn.Module):
    """Plain convolutional backbone with the configured stride/dilation layout.

    Each stage is two 3x3 convolutions (the first carries the stage's stride)
    with ReLUs; dilation widens the receptive field of the stride-1 tail
    stages in place of further downsampling.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        stages = []
        in_c = 3
        prev_stride = 1
        for out_c, cum_stride, dil in zip(
            cfg.stage_channels, cfg.stage_strides, cfg.stage_dilations
        ):
            stride = cum_stride // prev_stride
            prev_stride = cum_stride
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_c, out_c, 3, stride=stride, padding=dil, dilation=dil),
                    nn.ReLU(inplace=True),
                    nn.Conv2d(out_c, out_c, 3, padding=dil, dilation=dil),
                    nn.ReLU(inplace=True),
                )
            )
            in_c = out_c
        self.stages = nn.ModuleList(stages)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        stride = self.cfg.output_stride
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ValueError(
                f"input size {tuple(x.shape[2:])} must be divisible by {stride}"
            )
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class LateralProjections(nn.Module):
    """1x1 projections of the five encoder stages onto the lateral width."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.projs = nn.ModuleList(
            nn.Conv2d(c, cfg.lateral_channels, 1) for c in cfg.stage_channels
        )
        init_weights(self)

    def forward(self, feats: list[torch.Tensor]) -> list[torch.Tensor]:
        if len(feats) != len(self.projs):
            raise ValueError(f"expected {len(self.projs)} feature levels, got {len(feats)}")
        return [proj(f) for proj, f in zip(self.projs, feats)]


class TopDownDecoder(nn.Module):
    """Coarse-to-fine decoding over the laterals.

    D5 = Conv3x3(lateral_5); D_i = Conv3x3(lateral_i + up(D_{i+1})), where
    ``up`` is a learnable 2x deconvolution, skipped when the adjacent levels
    share a resolution.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        c = cfg.lateral_channels
        self.convs = nn.ModuleList(nn.Conv2d(c, c, 3, padding=1) for _ in range(5))
        ups = []
        for i in range(4):
            if cfg.stage_strides[i + 1] // cfg.stage_strides[i] == 2:
                ups.append(nn.ConvTranspose2d(c, c, 4, stride=2, padding=1))
            else:
                ups.append(nn.Identity())
        self.ups = nn.ModuleList(ups)
        init_weights(self)

    def forward(self, laterals: list[torch.Tensor]) -> list[torch.Tensor]:
        if len(laterals) != 5:
            raise ValueError(f"expected 5 laterals, got {len(laterals)}")
        dec = [None] * 5
        dec[4] = F.relu(self.convs[4](laterals[4]))
        for i in range(3, -1, -1):
            up = self.ups[i](dec[i + 1])
            if up.shape[-2:] != laterals[i].shape[-2:]:
                raise ValueError(
                    f"level {i + 1} upsample {tuple(up.shape[-2:])} does not align "
                    f"with lateral {tuple(laterals[i].shape[-2:])}"
                )
            dec[i] = F.relu(self.convs[i](laterals[i] + up))
        return dec


class MapHead(nn.Module):
    """Per-level prediction head: Conv3x3 -> Conv1x1 -> Conv1x1(1 channel),
    bounded output activation, bilinear upsampling to the target size."""

    def __init__(self, in_channels: int, width: int, activation: str = "sigmoid"):
        super().__init__()
        if activation not in ("sigmoid", "tanh"):
            raise ValueError(f"unsupported activation: {activation}")
        self.activation = activation
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, 1, 1),
        )
        init_weights(self)

    def forward(self, x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        out = self.net(x)
        out = torch.sigmoid(out) if self.activation == "sigmoid" else torch.tanh(out)
        if out.shape[-2:] != tuple(size):
            out = F.interpolate(out, size=size, mode="bilinear", align_corners=False)
        return out
