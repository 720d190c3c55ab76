import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from urgan.ggd import nll_term
from urgan.losses import (
    GGDParamMaps,
    LossWeights,
    bce,
    discriminator_loss,
    generator_loss,
    l1_loss,
    loss_u,
)


def random_maps(seed, shape=(2, 3, 8, 8)):
    rng = np.random.default_rng(seed)
    target = rng.uniform(0, 1, shape)
    x_hat = target + rng.normal(0, 0.3, shape)
    alpha = rng.uniform(0.05, 2.0, shape)
    beta = rng.uniform(0.3, 4.0, shape)
    t = lambda a: torch.tensor(a, dtype=torch.float64)
    return GGDParamMaps(t(x_hat), t(alpha), t(beta)), t(target)


def const_maps(target, offset, alpha, beta):
    return GGDParamMaps(target + offset, torch.full_like(target, alpha), torch.full_like(target, beta))


class TestParamMaps:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            GGDParamMaps(torch.zeros(2, 2), torch.ones(2, 2), torch.ones(2, 3))


class TestLossU:
    def test_zero_residual_laplace(self):
        target = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        assert float(loss_u(const_maps(target, 0.0, 1.0, 1.0), target)) == pytest.approx(math.log(2), abs=2e-6)

    def test_unit_residual_gaussian(self):
        target = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        val = float(loss_u(const_maps(target, 1.0, 1.0, 2.0), target))
        assert val == pytest.approx(nll_term(1.0, 0.0, 1.0, 2.0), abs=1e-12)
        assert val == pytest.approx(1.5723649429247001, abs=1e-12)

    def test_matches_elementwise_loop(self):
        pred, target = random_maps(0)
        total, count = 0.0, 0
        for idx in np.ndindex(*target.shape):
            total += nll_term(float(pred.x_hat[idx]), float(target[idx]),
                              float(pred.alpha_hat[idx]), float(pred.beta_hat[idx]))
            count += 1
        assert float(loss_u(pred, target)) == pytest.approx(total / count, abs=1e-10)

    def test_shape_mismatch(self):
        pred, target = random_maps(1)
        with pytest.raises(ValueError):
            loss_u(pred, target[:, :2])

    def test_non_finite(self):
        pred, target = random_maps(1)
        pred.x_hat[0, 0, 0, 0] = float("nan")
        with pytest.raises(ValueError):
            loss_u(pred, target)

    def test_non_positive_scale(self):
        pred, target = random_maps(1)
        pred.alpha_hat[0, 0, 0, 0] = 0.0
        with pytest.raises(ValueError):
            loss_u(pred, target)

    def test_permutation_invariance(self):
        pred, target = random_maps(2)
        perm = torch.randperm(target.numel(), generator=torch.Generator().manual_seed(0))
        p = lambda t: t.reshape(-1)[perm].reshape(t.shape)
        shuffled = GGDParamMaps(p(pred.x_hat), p(pred.alpha_hat), p(pred.beta_hat))
        assert float(loss_u(shuffled, p(target))) == pytest.approx(float(loss_u(pred, target)), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_minimized_at_target(self, seed):
        pred, target = random_maps(seed)
        beta = pred.beta_hat.clamp_min(1.0)
        best = float(loss_u(GGDParamMaps(target.clone(), pred.alpha_hat, beta), target))
        for step in np.linspace(-0.5, 0.5, 41):
            if step == 0:
                continue
            shifted = GGDParamMaps(target + step, pred.alpha_hat, beta)
            assert float(loss_u(shifted, target)) > best

    def test_doubling_scale_adds_log2(self):
        target = torch.rand(2, 3, 4, 4, dtype=torch.float64)
        a = torch.rand_like(target) + 0.1
        base = loss_u(GGDParamMaps(target, a, torch.ones_like(target)), target)
        doubled = loss_u(GGDParamMaps(target, 2 * a, torch.ones_like(target)), target)
        # the residual floor contributes O(1e-6 / alpha) to both
        assert float(doubled - base) == pytest.approx(math.log(2), abs=1e-5)

    def test_doubling_scale_exact_with_zero_floor(self):
        target = torch.rand(2, 3, 4, 4, dtype=torch.float64)
        a = torch.rand_like(target) + 0.1
        ones = torch.ones_like(target)
        base = loss_u(GGDParamMaps(target, a, ones), target, residual_floor=0.0)
        doubled = loss_u(GGDParamMaps(target, 2 * a, ones), target, residual_floor=0.0)
        assert float(doubled - base) == pytest.approx(math.log(2), abs=1e-12)

    def test_differentiable(self):
        pred, target = random_maps(4)
        for t in (pred.x_hat, pred.alpha_hat, pred.beta_hat):
            t.requires_grad_(True)
        loss_u(pred, target).backward()
        assert all(t.grad is not None and torch.isfinite(t.grad).all() for t in (pred.x_hat, pred.alpha_hat, pred.beta_hat))

    def test_gradient_bounded_at_zero_residual(self):
        target = torch.zeros(4, dtype=torch.float64)
        x_hat = torch.zeros(4, dtype=torch.float64, requires_grad=True)
        pred = GGDParamMaps(x_hat, torch.ones(4, dtype=torch.float64), torch.full((4,), 0.5, dtype=torch.float64))
        loss_u(pred, target).backward()
        assert torch.isfinite(x_hat.grad).all()


class TestBce:
    def test_perfect(self):
        assert float(bce(torch.tensor([1 - 1e-7], dtype=torch.float64), [1.0])) <= 1e-6

    def test_half(self):
        assert float(bce(torch.tensor([0.5]), [1.0])) == pytest.approx(math.log(2), abs=1e-6)

    def test_two_elements(self):
        val = float(bce(torch.tensor([0.9, 0.1], dtype=torch.float64), [1.0, 0.0]))
        assert val == pytest.approx(0.21072103131565260, abs=1e-12)

    def test_clamped(self):
        assert math.isfinite(float(bce(torch.tensor([0.0, 1.0]), [1.0, 0.0])))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bce(torch.tensor([0.5, 0.5]), [1.0])

    @given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=10), st.data())
    @settings(max_examples=50)
    def test_non_negative_and_matches_formula(self, probs, data):
        labels = data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=len(probs), max_size=len(probs)))
        val = float(bce(torch.tensor(probs, dtype=torch.float64), labels))
        want = -sum(y * math.log(p) + (1 - y) * math.log(1 - p) for p, y in zip(probs, labels))
        assert val >= 0
        assert val == pytest.approx(want, rel=1e-10, abs=1e-12)


class TestGeneratorLoss:
    def test_vanishing_adversarial_weight(self):
        pred, target = random_maps(5)
        scores = torch.tensor([0.3, 0.6], dtype=torch.float64)
        val = generator_loss(pred, target, scores, LossWeights(1e-30))
        assert float(val) == pytest.approx(float(loss_u(pred, target)), abs=1e-12)

    def test_fooled_discriminator(self):
        pred, target = random_maps(5)
        lam = 1e-3
        scores = torch.full((2,), 1 - 1e-7, dtype=torch.float64)
        adv = float(generator_loss(pred, target, scores, LossWeights(lam)) - loss_u(pred, target))
        assert adv <= lam * 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_component_sum(self, seed):
        pred, target = random_maps(seed)
        scores = torch.tensor(np.random.default_rng(seed).uniform(0.01, 0.99, 2))
        lam = 7e-4
        adv = -sum(math.log(float(s)) for s in scores)
        want = float(loss_u(pred, target)) + lam * adv
        assert float(generator_loss(pred, target, scores, LossWeights(lam))) == pytest.approx(want, abs=1e-10)

    def test_monotone_in_lambda(self):
        pred, target = random_maps(6)
        scores = torch.tensor([0.4, 0.8], dtype=torch.float64)
        vals = [float(generator_loss(pred, target, scores, LossWeights(lam))) for lam in (1e-4, 1e-3, 1e-2, 1.0)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(0.0)
        assert LossWeights.for_task("MP").lambda_adv == 7e-4
        assert LossWeights.for_task("QE").lambda_adv == 1e-3


class TestDiscriminatorLoss:
    def test_perfect(self):
        one = torch.tensor([1 - 1e-7], dtype=torch.float64)
        zero = torch.tensor([1e-7], dtype=torch.float64)
        assert float(discriminator_loss(one, zero)) <= 1e-6

    def test_confusion(self):
        half = torch.full((3,), 0.5, dtype=torch.float64)
        assert float(discriminator_loss(half, half)) == pytest.approx(3 * 2 * math.log(2), abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_component_oracle(self, seed):
        rng = np.random.default_rng(seed)
        real, fake = rng.uniform(0.01, 0.99, 4), rng.uniform(0.01, 0.99, 4)
        want = float(bce(torch.tensor(real), np.ones(4)) + bce(torch.tensor(fake), np.zeros(4)))
        got = float(discriminator_loss(torch.tensor(real), torch.tensor(fake)))
        assert got == pytest.approx(want, abs=1e-10)
        manual = -np.sum(np.log(real)) - np.sum(np.log(1 - fake))
        assert got == pytest.approx(manual, abs=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            discriminator_loss(torch.tensor([0.5]), torch.tensor([0.5, 0.5]))


def test_l1():
    a = torch.tensor([0.0, 1.0])
    assert float(l1_loss(a, torch.tensor([1.0, 1.0]))) == pytest.approx(0.5)
