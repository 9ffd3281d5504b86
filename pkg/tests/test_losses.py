import numpy as np
import pytest
import torch

from myoseg.errors import ShapeMismatchError, ValidationError
from myoseg.losses import (
    DICE_EPS,
    LossWeights,
    assn_total_loss,
    l2_reconstruction_loss,
    one_hot_targets,
    prsn_total_loss,
    soft_dice_loss,
    soft_dice_loss_binary,
    soft_dice_per_class,
)

from oracles import autograd_gradient, finite_difference_grad, max_rel_error


def np_soft_dice(pred: np.ndarray, target: np.ndarray, eps: float = DICE_EPS) -> np.ndarray:
    """Straight formula on numpy arrays, one value per channel."""
    dims = (0, 2, 3)
    inter = (pred * target).sum(axis=dims)
    return (2.0 * inter + eps) / (pred.sum(axis=dims) + target.sum(axis=dims) + eps)


def test_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.beta, w.lambda_bssfp, w.lambda_lge, w.lambda_t2) == (0.2, 0.3, 0.5, 0.5)
    with pytest.raises(ValidationError):
        LossWeights(beta=-0.1)
    with pytest.raises(ValidationError):
        LossWeights(lambda_lge=float("nan"))


def test_one_hot_targets():
    labels = np.array([[0, 2], [1, 2]])
    oh = one_hot_targets(labels, 3)
    assert oh.shape == (1, 3, 2, 2)
    assert oh[0, :, 0, 1].tolist() == [0.0, 0.0, 1.0]
    assert float(oh.sum()) == 4.0
    with pytest.raises(ValidationError):
        one_hot_targets(np.array([[5]]), 3)


def test_soft_dice_known_value():
    # one channel, pred half right: inter=1, psum=2, tsum=2
    pred = torch.tensor([[[[1.0, 1.0], [0.0, 0.0]]]])
    target = torch.tensor([[[[1.0, 0.0], [1.0, 0.0]]]])
    dice = soft_dice_per_class(pred, target, eps=0.0)
    assert float(dice) == pytest.approx(2 * 1 / 4)
    # with smoothing
    dice_eps = soft_dice_per_class(pred, target, eps=1.0)
    assert float(dice_eps) == pytest.approx(3 / 5)
    assert float(soft_dice_loss(pred, target)) == pytest.approx(1 - 3 / 5)


def test_soft_dice_matches_numpy_formula(rng):
    for _ in range(5):
        pred = rng.random((2, 4, 6, 5))
        target = (rng.random((2, 4, 6, 5)) > 0.6).astype(float)
        got = soft_dice_per_class(torch.tensor(pred), torch.tensor(target))
        assert np.allclose(got.numpy(), np_soft_dice(pred, target), rtol=1e-12)


def test_soft_dice_absent_class_contributes_zero_loss():
    pred = torch.zeros((1, 2, 3, 3))
    target = torch.zeros((1, 2, 3, 3))
    target[:, 0] = 1.0
    pred[:, 0] = 1.0
    dice = soft_dice_per_class(pred, target)
    assert float(dice[1]) == 1.0  # empty channel: eps/eps
    assert float(soft_dice_loss(pred, target)) == 0.0


def test_soft_dice_batch_is_one_population():
    # two samples merged must differ from the mean of per-sample losses
    rng = np.random.default_rng(3)
    pred = torch.tensor(rng.random((2, 1, 4, 4)))
    target = torch.tensor((rng.random((2, 1, 4, 4)) > 0.5).astype(float))
    merged = soft_dice_loss(pred, target)
    per_sample = 0.5 * (
        soft_dice_loss(pred[:1], target[:1]) + soft_dice_loss(pred[1:], target[1:])
    )
    pop = np_soft_dice(pred.numpy(), target.numpy())
    assert float(merged) == pytest.approx(float(1 - pop.mean()), rel=1e-12)
    assert abs(float(merged - per_sample)) > 1e-6


def test_class_indices_selection():
    rng = np.random.default_rng(5)
    pred = torch.tensor(rng.random((1, 3, 4, 4)))
    target = one_hot_targets((rng.random((4, 4)) * 3).astype(int), 3, dtype=torch.float64)
    all_dice = soft_dice_per_class(pred, target)
    fg = soft_dice_loss(pred, target, class_indices=(1, 2))
    assert float(fg) == pytest.approx(float((1 - all_dice[1:]).mean()), rel=1e-12)
    with pytest.raises(ValidationError):
        soft_dice_loss(pred, target, class_indices=())
    with pytest.raises(ValidationError):
        soft_dice_loss(pred, target, class_indices=(3,))


def test_binary_loss_shapes():
    pred = torch.rand(2, 1, 4, 4)
    target = (torch.rand(2, 1, 4, 4) > 0.5).float()
    loss4 = soft_dice_loss_binary(pred, target)
    loss3 = soft_dice_loss_binary(pred[:, 0], target[:, 0])
    assert float(loss4) == float(loss3)
    with pytest.raises(ShapeMismatchError):
        soft_dice_loss_binary(torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4))


def test_l2_reconstruction_loss_is_mean_mse():
    recon = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
    target = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
    assert float(l2_reconstruction_loss(recon, target)) == pytest.approx(0.5)


def test_assn_loss_composition():
    rng = np.random.default_rng(0)
    pred = torch.tensor(rng.random((1, 1, 8, 8)))
    recon = torch.tensor(rng.random((1, 1, 8, 8)))
    gold = torch.tensor((rng.random((1, 1, 8, 8)) > 0.5).astype(float))
    w = LossWeights(beta=0.2)
    total = assn_total_loss(pred, recon, gold, w)
    expect = soft_dice_loss_binary(pred, gold) + 0.2 * soft_dice_loss_binary(recon, gold)
    assert float(total) == pytest.approx(float(expect), rel=1e-12)
    with pytest.raises(ValidationError):
        assn_total_loss(pred, None, gold, w)


def test_assn_loss_beta_zero_reduces_exactly():
    rng = np.random.default_rng(1)
    pred = torch.tensor(rng.random((2, 1, 6, 6)))
    gold = torch.tensor((rng.random((2, 1, 6, 6)) > 0.5).astype(float))
    plain = soft_dice_loss_binary(pred, gold)
    reduced = assn_total_loss(pred, None, gold, LossWeights(beta=0.0))
    assert float(reduced) == float(plain)


def _branch_pair(rng, k, shape=(2, 5, 4)):
    b, h, w = shape
    logits = rng.random((b, k, h, w))
    pred = torch.tensor(logits / logits.sum(axis=1, keepdims=True))
    target = one_hot_targets((rng.random((b, h, w)) * k).astype(int), k, dtype=torch.float64)
    return pred, target


def test_prsn_loss_composition_and_lambda_zero(rng):
    main = _branch_pair(rng, 4)
    bssfp = _branch_pair(rng, 2)
    lge = _branch_pair(rng, 3)
    t2 = _branch_pair(rng, 3)
    w = LossWeights()
    total = prsn_total_loss(main, bssfp, lge, t2, w)

    def fg(pair):
        return soft_dice_loss(pair[0], pair[1], class_indices=range(1, pair[0].shape[1]))

    expect = fg(main) + 0.3 * fg(bssfp) + 0.5 * fg(lge) + 0.5 * fg(t2)
    assert float(total) == pytest.approx(float(expect), rel=1e-12)

    reduced = prsn_total_loss(
        main, bssfp, lge, t2,
        LossWeights(lambda_bssfp=0.0, lambda_lge=0.0, lambda_t2=0.0),
    )
    assert float(reduced) == float(fg(main))


def test_soft_dice_gradient_matches_finite_differences(rng):
    target = one_hot_targets((rng.random((5, 6)) * 3).astype(int), 3, dtype=torch.float64)
    x0 = rng.random((1, 3, 5, 6))

    def f_np(x):
        return soft_dice_loss(torch.tensor(x), target, class_indices=(1, 2))

    analytic = autograd_gradient(lambda t: soft_dice_loss(t, target, class_indices=(1, 2)), x0)
    numeric = finite_difference_grad(f_np, x0)
    assert max_rel_error(analytic, numeric) < 1e-4


def test_assn_loss_gradient_matches_finite_differences(rng):
    gold = torch.tensor((rng.random((1, 1, 6, 6)) > 0.5).astype(np.float64))
    recon = torch.tensor(rng.random((1, 1, 6, 6)))
    w = LossWeights(beta=0.2)
    x0 = rng.random((1, 1, 6, 6))

    analytic = autograd_gradient(lambda t: assn_total_loss(t, recon, gold, w), x0)
    numeric = finite_difference_grad(lambda x: assn_total_loss(torch.tensor(x), recon, gold, w), x0)
    assert max_rel_error(analytic, numeric) < 1e-4
