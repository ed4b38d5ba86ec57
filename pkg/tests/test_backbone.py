"""Encoder geometry, lateral projections, top-down decoding, map heads."""

import pytest
import torch
from torch import nn

from purnet.backbone import Encoder, LateralProjections, MapHead, TopDownDecoder, init_weights
from purnet.config import EncoderConfig


class TestEncoder:
    def test_tiny_stage_geometry(self):
        cfg = EncoderConfig.tiny()
        feats = Encoder(cfg)(torch.rand(2, 3, 32, 32))
        sizes = [tuple(f.shape) for f in feats]
        assert sizes == [
            (2, 16, 16, 16),
            (2, 32, 8, 8),
            (2, 48, 4, 4),
            (2, 64, 2, 2),
            (2, 64, 2, 2),
        ]

    def test_default_layout_coarsest_resolution(self):
        cfg = EncoderConfig()
        with torch.no_grad():
            feats = Encoder(cfg)(torch.rand(1, 3, 320, 320))
        assert feats[4].shape[-2:] == (20, 20)
        assert feats[3].shape[-2:] == (20, 20)

    def test_indivisible_input_rejected(self):
        enc = Encoder(EncoderConfig.tiny())
        with pytest.raises(ValueError):
            enc(torch.rand(1, 3, 30, 30))

    def test_wrong_channel_count_rejected(self):
        enc = Encoder(EncoderConfig.tiny())
        with pytest.raises(ValueError):
            enc(torch.rand(1, 1, 32, 32))

    def test_deterministic(self):
        enc = Encoder(EncoderConfig.tiny())
        x = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            a, b = enc(x), enc(x)
        assert all(torch.equal(u, v) for u, v in zip(a, b))

    def test_finite_outputs(self):
        enc = Encoder(EncoderConfig.tiny())
        feats = enc(torch.rand(1, 3, 32, 32) * 2 - 0.5)
        assert all(torch.isfinite(f).all() for f in feats)


class TestLaterals:
    def test_channel_contract(self):
        cfg = EncoderConfig.tiny()
        feats = Encoder(cfg)(torch.rand(1, 3, 32, 32))
        outs = LateralProjections(cfg)(feats)
        assert all(o.shape[1] == cfg.lateral_channels for o in outs)
        assert all(o.shape[-2:] == f.shape[-2:] for o, f in zip(outs, feats))

    def test_identity_projection_passes_features_through(self):
        cfg = EncoderConfig(stage_channels=(32, 32, 32, 32, 32), lateral_channels=32)
        lat = LateralProjections(cfg)
        with torch.no_grad():
            lat.projs[2].weight.copy_(torch.eye(32).reshape(32, 32, 1, 1))
            lat.projs[2].bias.zero_()
        feats = [torch.rand(1, 32, 4, 4) for _ in range(5)]
        out = lat(feats)[2]
        assert torch.equal(out, feats[2])

    def test_level_count_enforced(self):
        lat = LateralProjections(EncoderConfig.tiny())
        with pytest.raises(ValueError):
            lat([torch.rand(1, 16, 8, 8)] * 4)


class TestTopDownDecoder:
    def _laterals(self, batch=1, c=32):
        # Spatial layout of the tiny config on 32x32 input.
        return [torch.rand(batch, c, s, s) for s in (16, 8, 4, 2, 2)]

    def test_zero_laterals_give_zero_features(self):
        dec = TopDownDecoder(EncoderConfig.tiny())
        outs = dec([torch.zeros_like(l) for l in self._laterals()])
        assert all(torch.equal(o, torch.zeros_like(o)) for o in outs)

    def test_coarsest_pair_needs_no_upsampling(self):
        dec = TopDownDecoder(EncoderConfig.tiny())
        assert isinstance(dec.ups[3], nn.Identity)
        assert all(isinstance(dec.ups[i], nn.ConvTranspose2d) for i in range(3))

    def test_output_sizes_match_laterals(self):
        dec = TopDownDecoder(EncoderConfig.tiny())
        laterals = self._laterals()
        outs = dec(laterals)
        assert all(o.shape == l.shape for o, l in zip(outs, laterals))

    def test_misaligned_laterals_rejected(self):
        dec = TopDownDecoder(EncoderConfig.tiny())
        laterals = self._laterals()
        laterals[0] = torch.rand(1, 32, 10, 10)
        with pytest.raises(ValueError):
            dec(laterals)

    def test_requires_five_levels(self):
        dec = TopDownDecoder(EncoderConfig.tiny())
        with pytest.raises(ValueError):
            dec(self._laterals()[:4])

    def test_finite_outputs(self):
        dec = TopDownDecoder(EncoderConfig.tiny())
        outs = dec(self._laterals())
        assert all(torch.isfinite(o).all() for o in outs)


class TestMapHead:
    def test_sigmoid_range_and_upsampling(self):
        head = MapHead(32, 32)
        with torch.no_grad():
            out = head(torch.randn(2, 32, 4, 4), (16, 16))
        assert out.shape == (2, 1, 16, 16)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_tanh_range(self):
        head = MapHead(32, 32, activation="tanh")
        with torch.no_grad():
            out = head(torch.randn(2, 32, 4, 4), (4, 4))
        assert float(out.abs().max()) <= 1.0

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            MapHead(32, 32, activation="relu")


class TestInit:
    def test_bias_zero_after_init(self):
        module = nn.Sequential(
            nn.Conv2d(3, 8, 3), nn.ConvTranspose2d(8, 8, 4, stride=2, padding=1)
        )
        init_weights(module)
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                assert torch.equal(m.bias.detach(), torch.zeros_like(m.bias))
                assert float(m.weight.detach().abs().sum()) > 0.0
