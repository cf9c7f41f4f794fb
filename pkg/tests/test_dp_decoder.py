import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from transwcd.dp_decoder import (CAM_PSEUDO_LABEL, PRIOR_ALL_ZERO, DilationConfig, DPDecoder, decode,
                                 gated_targets, loss_cp, predict_final, select_target)
from transwcd.errors import ConfigError, ShapeMismatch


def test_select_target_unchanged_is_all_zero():
    mask = torch.ones(8, 8, dtype=torch.uint8)
    t = select_target(0, mask)
    assert t.source == PRIOR_ALL_ZERO and torch.count_nonzero(t.y_pp) == 0


def test_select_target_changed_passes_mask():
    mask = (torch.rand(8, 8) > 0.5).to(torch.uint8)
    t = select_target(1, mask)
    assert t.source == CAM_PSEUDO_LABEL and torch.equal(t.y_pp, mask)


def test_batched_gating():
    masks = torch.ones(4, 8, 8)
    out = gated_targets(torch.tensor([0.0, 1.0, 0.0, 1.0]), masks)
    assert out[[0, 2]].sum() == 0 and torch.equal(out[[1, 3]], masks[[1, 3]])


@pytest.mark.parametrize("rates", [(), (2, 1), (1, 1), (-1, 2)])
def test_bad_rates(rates):
    with pytest.raises(ConfigError):
        DilationConfig(rates)


@pytest.mark.parametrize("rates", [(0, 1, 2, 3), (1, 2, 3, 4), (0, 2, 4, 8), (0,)])
def test_branch_count_law(rates):
    dec = DPDecoder(32, DilationConfig(rates, 5))
    feat_dp, p_dp = decode(torch.randn(2, 32, 4, 4), dec, (128, 128))
    assert len(dec.branches) == len(rates)
    assert feat_dp.shape == (2, 5 * len(rates), 4, 4)
    assert p_dp.shape == (2, 128, 128)


def test_zero_weights_give_fusion_bias():
    dec = DPDecoder(8, DilationConfig((0, 1, 2, 3), 4))
    with torch.no_grad():
        for p in dec.parameters():
            p.zero_()
        dec.fuse.bias.fill_(0.3)
    feat_dp, p_dp = dec(torch.randn(1, 8, 4, 4), (64, 64))
    assert torch.count_nonzero(feat_dp) == 0
    assert torch.allclose(p_dp, torch.full_like(p_dp, 0.3))


def _impulse_footprint(rate, size=17):
    """Support of a dilation-``rate`` 3x3 conv applied to a centred impulse (direct computation)."""
    dec = DPDecoder(1, DilationConfig((rate,), 1)).double()
    conv = dec.branches[0][0]
    with torch.no_grad():
        conv.weight.fill_(1.0)
        conv.bias.zero_()
        x = torch.zeros(1, 1, size, size, dtype=torch.float64)
        x[0, 0, size // 2, size // 2] = 1.0
        y = conv(x)[0, 0]
    rows = torch.nonzero(y.abs().sum(1)).flatten()
    cols = torch.nonzero(y.abs().sum(0)).flatten()
    return (rows.max() - rows.min() + 1).item(), (cols.max() - cols.min() + 1).item()


@pytest.mark.parametrize("rate", [1, 2, 3, 4, 8])
def test_dilated_impulse_footprint(rate):
    assert _impulse_footprint(rate) == (2 * rate + 1, 2 * rate + 1)


def test_one_by_one_branch_footprint():
    assert _impulse_footprint(0) == (1, 1)


def _bce_oracle(logit, y):
    # -[y log s + (1-y) log(1-s)] = softplus(logit) - y*logit
    return max(logit, 0) + math.log1p(math.exp(-abs(logit))) - y * logit


def test_loss_cp_examples():
    z = torch.zeros(4, 4, dtype=torch.float64)
    assert loss_cp(z, torch.zeros_like(z)).item() == pytest.approx(math.log(2), abs=1e-12)
    assert loss_cp(torch.full((4, 4), -20.0, dtype=torch.float64), torch.zeros(4, 4)).item() <= 1e-8
    logits = [[2.0, -2.0], [0.0, 0.0]]
    target = [[1, 0], [0, 0]]
    oracle = np.mean([_bce_oracle(l, t) for lr, tr in zip(logits, target) for l, t in zip(lr, tr)])
    assert oracle == pytest.approx(0.410038, abs=1e-6)
    got = loss_cp(torch.tensor(logits, dtype=torch.float64), torch.tensor(target)).item()
    assert got == pytest.approx(oracle, abs=1e-12)


def test_loss_cp_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        loss_cp(torch.zeros(4, 4), torch.zeros(4, 5))


def test_loss_cp_descends():
    rng = np.random.default_rng(0)
    ok = 0
    for _ in range(100):
        p = torch.tensor(rng.normal(size=(6, 6)) * 3, requires_grad=True)
        t = torch.from_numpy((rng.random((6, 6)) > 0.5).astype(np.float64))
        l0 = loss_cp(p, t)
        l0.backward()
        with torch.no_grad():
            l1 = loss_cp(p - 1e-2 * p.grad, t)
        ok += int(l1.item() < l0.item())
    assert ok >= 99


def test_predict_final():
    assert predict_final(torch.full((4, 4), -1.0)).sum() == 0
    assert predict_final(torch.full((4, 4), 1.0)).all()
    assert predict_final(torch.zeros(1, 1)).item() == 1
