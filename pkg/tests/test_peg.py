import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

import oracles
from urcod.peg import (
    DacBlock,
    DacConfig,
    EdgeLossConfig,
    PegModel,
    RmpBlock,
    atrous_conv,
    atrous_conv2d,
    edge_loss,
    peg_forward,
)
from urcod.trainer import TrainConfig, train_peg


def test_atrous_examples():
    np.testing.assert_array_equal(atrous_conv([1, 2, 3, 4, 5], [1, 1], 2), [4, 6, 8])
    x = np.arange(7.0)
    for r in (1, 2, 5):
        np.testing.assert_array_equal(atrous_conv(x, [1.0], r), x)
    assert not atrous_conv(x, [0.0, 0.0, 0.0], 2).any()


def test_atrous_filter_too_large():
    with pytest.raises(ValueError):
        atrous_conv([1, 2, 3], [1, 1], 3)


def test_atrous_matches_oracle_and_valid_correlation(rng):
    for _ in range(100):
        k, r = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        x = rng.integers(-9, 10, size=r * (k - 1) + 1 + int(rng.integers(0, 15))).astype(float)
        w = rng.integers(-9, 10, size=k).astype(float)
        np.testing.assert_array_equal(atrous_conv(x, w, r), oracles.dilated_sum(x, w, r))
        np.testing.assert_array_equal(atrous_conv(x, w, 1)[: len(x) - k + 1], np.correlate(x, w, "valid"))


def test_atrous_2d_matches_dilated_torch_conv(rng):
    for r in (1, 2, 3):
        x, w = rng.normal(size=(12, 13)), rng.normal(size=(3, 3))
        ref = F.conv2d(torch.as_tensor(x)[None, None], torch.as_tensor(w)[None, None], dilation=r)[0, 0].numpy()
        np.testing.assert_allclose(atrous_conv2d(x, w, r), ref, atol=1e-12)


def _zero_dac(cfg):
    block = DacBlock(cfg).double()
    for p in block.parameters():
        torch.nn.init.zeros_(p)
    return block


def test_dac_zero_filters_is_identity(rng):
    block = _zero_dac(DacConfig(channels=4))
    x = torch.as_tensor(rng.normal(size=(1, 4, 44, 44)))
    torch.testing.assert_close(block(x), x)
    assert block(torch.zeros_like(x)).abs().max() == 0


def test_dac_shape_and_channel_check(rng):
    block = DacBlock(DacConfig(channels=4))
    assert block(torch.randn(2, 4, 44, 44)).shape == (2, 4, 44, 44)
    with pytest.raises(ValueError, match="channels"):
        block(torch.randn(1, 3, 44, 44))


def test_dac_identity_branch_doubles_input():
    block = _zero_dac(DacConfig(branch_rates=[[1]], channels=1, kernel_size=1))
    with torch.no_grad():
        block.branches[0][0].weight.fill_(1.0)
    x = torch.arange(1.0, 10.0, dtype=torch.float64).reshape(1, 1, 3, 3)
    torch.testing.assert_close(block(x), 2 * x)


def test_dac_config_validation():
    with pytest.raises(ValueError):
        DacConfig(branch_rates=[[1], [0]])
    assert DacConfig().branch_rates == [[1], [1, 3], [1, 3, 5], [1, 3, 5, 7]]


def test_rmp_channels_and_shape():
    out = RmpBlock(8)(torch.randn(1, 8, 44, 44))
    assert out.shape == (1, 12, 44, 44)
    with pytest.raises(ValueError):
        RmpBlock(8)(torch.randn(1, 8, 5, 5))


def test_rmp_constant_input():
    block = RmpBlock(1).double()
    with torch.no_grad():
        block.reduce.weight.fill_(1.0)
        block.reduce.bias.zero_()
    out = block(torch.full((1, 1, 12, 12), 0.7, dtype=torch.float64))
    torch.testing.assert_close(out, torch.full((1, 5, 12, 12), 0.7, dtype=torch.float64))


@pytest.fixture(scope="module")
def peg352():
    torch.manual_seed(0)
    return PegModel(352).eval()


def test_peg_forward_352(peg352):
    image = np.random.default_rng(0).random((352, 352, 3))
    a = peg_forward(peg352, image)
    assert a.shape == (352, 352)
    assert np.isfinite(a).all() and a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(a, peg_forward(peg352, image))


def test_peg_forward_size_mismatch(peg352):
    with pytest.raises(ValueError, match="352"):
        peg_forward(peg352, np.zeros((64, 64, 3)))
    with pytest.raises(ValueError):
        PegModel(50)


def test_peg_parameter_perturbation_changes_output():
    torch.manual_seed(1)
    model = PegModel(64).eval()
    image = np.random.default_rng(1).random((64, 64, 3))
    before = peg_forward(model, image)
    with torch.no_grad():
        model.enc[0][0].weight[0, 0, 1, 1] += 1e-2
    assert np.abs(peg_forward(model, image) - before).max() > 0


def test_edge_loss_examples():
    b = 0.02
    cfg = EdgeLossConfig(b)
    target = torch.ones(4, 4, dtype=torch.float64)
    at_b = torch.full((4, 4), math.exp(-b), dtype=torch.float64)
    assert edge_loss(at_b, target, cfg).item() == pytest.approx(b, abs=1e-12)
    assert edge_loss(torch.ones(4, 4, dtype=torch.float64), target, cfg).item() == pytest.approx(2 * b, abs=1e-5)
    at_tenth = torch.full((4, 4), math.exp(-0.1), dtype=torch.float64)
    assert edge_loss(at_tenth, target, cfg).item() == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        EdgeLossConfig(-0.1)


def test_edge_loss_floor(rng):
    cfg = EdgeLossConfig(0.05)
    for _ in range(200):
        p = torch.as_tensor(rng.random((2, 1, 8, 8)))
        e = torch.as_tensor((rng.random((2, 1, 8, 8)) < 0.2).astype(float))
        assert edge_loss(p, e, cfg).item() >= 0.05


def test_edge_loss_gradient(rng):
    from test_losses import assert_grad_matches

    target = torch.as_tensor((rng.random((4, 4)) < 0.3).astype(float))
    x = torch.as_tensor(rng.uniform(0.05, 0.95, (4, 4)))
    assert_grad_matches(lambda p: edge_loss(p, target, EdgeLossConfig(0.02)), x)


@pytest.mark.slow
def test_peg_training_reduces_edge_loss():
    from urcod.imagedata import SyntheticConfig, generate_synthetic_dataset

    samples = generate_synthetic_dataset(SyntheticConfig(count=40, size=64, seed=11))
    history = []
    cfg = TrainConfig(peg_epochs=20, decay_start_epoch=80)
    train_peg(cfg, samples, history=history)
    losses = [h["edge"] for h in history]
    assert len(losses) == 20
    assert losses[-1] < losses[0]
    assert min(losses) >= cfg.flooding_level
