"""Rectification branches: attention symmetry, error targets, supervision."""

import math

import numpy as np
import pytest
import torch

from helpers import check_gradient
from purnet.backbone import Encoder, LateralProjections
from purnet.config import EncoderConfig
from purnet.losses import bce, error_map_kl
from purnet.rectification import (
    RectificationBundle,
    RectificationLevel,
    RectificationSubnet,
    error_target,
    rectification_losses,
)


def _level(seed=0):
    torch.manual_seed(seed)
    return RectificationLevel(EncoderConfig.tiny())


def _feats(seed=0, batch=2, size=8):
    torch.manual_seed(seed + 100)
    return torch.randn(batch, 32, size, size)


class TestBranches:
    def test_tied_branches_zero_attention(self):
        level = _level()
        level.object.load_state_dict(level.gross.state_dict())
        bundle = level(_feats(), (16, 16))
        assert torch.equal(bundle.error_feats, torch.zeros_like(bundle.error_feats))
        assert torch.equal(bundle.attention, torch.zeros_like(bundle.attention))

    def test_swapping_branches_negates_attention(self):
        a, b = _level(1), _level(2)
        b.load_state_dict(a.state_dict())
        b.gross.load_state_dict(a.object.state_dict())
        b.object.load_state_dict(a.gross.state_dict())
        d = _feats(1)
        with torch.no_grad():
            assert torch.equal(b(d, (8, 8)).attention, -a(d, (8, 8)).attention)

    def test_reference_tanh_value(self):
        x = torch.tensor(0.8, dtype=torch.float64)
        assert math.isclose(float(torch.tanh(x)), 0.66403677, abs_tol=1e-8)

    def test_output_ranges(self):
        with torch.no_grad():
            bundle = _level(3)(_feats(3), (16, 16))
        assert float(bundle.attention.abs().max()) <= 1.0
        assert float(bundle.error_pred.abs().max()) <= 1.0
        assert float(bundle.object_pred.min()) >= 0.0
        assert float(bundle.object_pred.max()) <= 1.0

    def test_error_feats_are_branch_difference(self):
        bundle = _level(4)(_feats(4), (8, 8))
        assert torch.equal(bundle.error_feats, bundle.gross_feats - bundle.object_feats)

    def test_subnet_emits_five_bundles(self):
        cfg = EncoderConfig.tiny()
        enc, lat = Encoder(cfg), LateralProjections(cfg)
        subnet = RectificationSubnet(cfg)
        with torch.no_grad():
            bundles = subnet(lat(enc(torch.rand(1, 3, 32, 32))), (32, 32))
        assert len(bundles) == 5
        for b in bundles:
            assert b.attention.shape[1] == 1
            assert b.object_pred.shape == (1, 1, 32, 32)
            assert b.error_pred.shape == (1, 1, 32, 32)


class TestErrorTarget:
    def test_arithmetic(self):
        assert float(error_target(torch.tensor([[1.0]]), torch.tensor([[0.3]]))) == pytest.approx(0.7)
        assert float(error_target(torch.tensor([[0.0]]), torch.tensor([[1.0]]))) == -1.0

    def test_perfect_prediction_zero(self):
        g = torch.tensor((np.random.default_rng(0).random((4, 4)) < 0.5).astype(np.float64))
        assert torch.equal(error_target(g, g.clone()), torch.zeros(1, 4, 4, dtype=torch.float64))

    def test_prediction_treated_as_constant(self):
        rng = np.random.default_rng(1)
        g = torch.tensor((rng.random((4, 4)) < 0.5).astype(np.float64))
        obj = torch.tensor(rng.uniform(0.1, 0.9, size=(4, 4)), requires_grad=True)
        err = torch.tensor(rng.uniform(-0.5, 0.5, size=(4, 4)), requires_grad=True)
        target = error_target(g, obj)
        assert not target.requires_grad
        error_map_kl(target, err).backward()
        assert obj.grad is None
        assert err.grad is not None

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            error_target(torch.zeros(2, 2), torch.zeros(3, 3))


def _bundle(object_pred, error_pred):
    dummy = torch.zeros(1)
    return RectificationBundle(
        attention=dummy,
        object_pred=object_pred,
        error_pred=error_pred,
        gross_feats=dummy,
        object_feats=dummy,
        error_feats=dummy,
    )


class TestRectificationLosses:
    def test_perfect_predictions(self):
        rng = np.random.default_rng(2)
        g = torch.tensor((rng.random((4, 4)) < 0.5).astype(np.float64))
        bundles = [_bundle(g.clone(), torch.zeros(4, 4, dtype=torch.float64)) for _ in range(5)]
        l_ro, l_re = rectification_losses(bundles, g)
        assert float(l_ro) < 1e-4  # only the clamp keeps BCE off exact zero
        assert float(l_re) < 1e-12

    def test_object_term_is_bce_sum(self):
        rng = np.random.default_rng(3)
        g = torch.tensor((rng.random((4, 4)) < 0.5).astype(np.float64))
        preds = [torch.tensor(rng.uniform(0.1, 0.9, size=(4, 4))) for _ in range(5)]
        errs = [torch.tensor(rng.uniform(-1, 1, size=(4, 4))) for _ in range(5)]
        l_ro, l_re = rectification_losses(
            [_bundle(p, e) for p, e in zip(preds, errs)], g
        )
        assert math.isclose(float(l_ro), sum(float(bce(p, g)) for p in preds), rel_tol=1e-12)
        expected_re = sum(
            float(error_map_kl(error_target(g, p), e)) for p, e in zip(preds, errs)
        )
        assert math.isclose(float(l_re), expected_re, rel_tol=1e-12)
        assert float(l_re) >= 0.0

    def test_error_loss_zero_only_at_equality(self):
        rng = np.random.default_rng(4)
        t = torch.tensor(rng.uniform(-0.9, 0.9, size=(4, 4)))
        assert float(error_map_kl(t, t.clone())) == 0.0
        assert float(error_map_kl(t, t + 0.05)) > 0.0

    def test_gradients_through_heads(self):
        rng = np.random.default_rng(5)
        g = torch.tensor((rng.random((4, 4)) < 0.5).astype(np.float64))
        z = torch.tensor(rng.normal(size=(4, 4)))
        check_gradient(lambda x: bce(torch.sigmoid(x), g), z)
        target = torch.tensor(rng.uniform(-0.9, 0.9, size=(4, 4)))
        check_gradient(lambda x: error_map_kl(target, torch.tanh(x)), z)
