"""Training objectives for the uncertainty-aware GAN.

All losses take torch tensors and are composed of differentiable primitives.
"""

from dataclasses import dataclass

import torch

LAMBDA_PRESETS = {"MP": 7e-4, "QE": 1e-3}
PROB_CLAMP = 1e-7
RESIDUAL_FLOOR = 1e-6


@dataclass
class GGDParamMaps:
    """Per-pixel GGD parameters predicted by the three generator heads.

    Works with torch tensors (training) and numpy arrays (inference output).
    """

    x_hat: object
    alpha_hat: object
    beta_hat: object

    def __post_init__(self):
        shapes = {tuple(self.x_hat.shape), tuple(self.alpha_hat.shape), tuple(self.beta_hat.shape)}
        if len(shapes) != 1:
            raise ValueError(f"parameter maps must share a shape, got {sorted(shapes)}")

    @property
    def shape(self):
        return tuple(self.x_hat.shape)


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = LAMBDA_PRESETS["QE"]

    def __post_init__(self):
        if not self.lambda_adv > 0:
            raise ValueError("lambda_adv must be > 0")

    @classmethod
    def for_task(cls, task: str) -> "LossWeights":
        return cls(LAMBDA_PRESETS[task])


def _check_finite(name, t):
    if not bool(torch.isfinite(t.detach()).all()):
        raise ValueError(f"{name} contains non-finite values")


def ggd_nll_map(pred: GGDParamMaps, target: torch.Tensor, residual_floor: float = RESIDUAL_FLOOR) -> torch.Tensor:
    """Elementwise GGD negative log-likelihood of ``target`` under ``pred``.

    Residual magnitudes below ``residual_floor`` are raised to it, which bounds
    the gradient of ``|eps|**beta`` for ``beta < 1``.
    """
    if tuple(target.shape) != pred.shape:
        raise ValueError(f"target shape {tuple(target.shape)} != prediction shape {pred.shape}")
    for name, t in (("x_hat", pred.x_hat), ("alpha_hat", pred.alpha_hat), ("beta_hat", pred.beta_hat), ("target", target)):
        _check_finite(name, t)
    alpha, beta = pred.alpha_hat, pred.beta_hat
    if bool((alpha.detach() <= 0).any()) or bool((beta.detach() <= 0).any()):
        raise ValueError("alpha_hat and beta_hat must be positive")
    resid = (pred.x_hat - target).abs().clamp_min(residual_floor)
    return (resid / alpha) ** beta - torch.log(beta / (2.0 * alpha)) + torch.lgamma(1.0 / beta)


def loss_u(pred: GGDParamMaps, target: torch.Tensor, residual_floor: float = RESIDUAL_FLOOR) -> torch.Tensor:
    """Uncertainty-aware fidelity loss, mean-reduced over every pixel."""
    return ggd_nll_map(pred, target, residual_floor).mean()


def l1_loss(x_hat: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if x_hat.shape != target.shape:
        raise ValueError("shape mismatch")
    return (x_hat - target).abs().mean()


def bce(pred_probs: torch.Tensor, labels) -> torch.Tensor:
    """Binary cross-entropy summed over elements.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before taking logs.
    """
    pred_probs = torch.as_tensor(pred_probs)
    labels = torch.as_tensor(labels, dtype=pred_probs.dtype)
    if labels.shape != pred_probs.shape:
        raise ValueError(f"length mismatch: {tuple(pred_probs.shape)} vs {tuple(labels.shape)}")
    p = pred_probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(labels * torch.log(p) + (1.0 - labels) * torch.log1p(-p)).sum()


def generator_loss(pred: GGDParamMaps, target, disc_scores_on_fake, weights: LossWeights,
                   residual_floor: float = RESIDUAL_FLOOR) -> torch.Tensor:
    """``loss_u + lambda_adv * bce(D(fake), 1)``."""
    adv = bce(disc_scores_on_fake, torch.ones_like(torch.as_tensor(disc_scores_on_fake)))
    return loss_u(pred, target, residual_floor) + weights.lambda_adv * adv


def discriminator_loss(scores_on_real, scores_on_fake) -> torch.Tensor:
    real = torch.as_tensor(scores_on_real)
    fake = torch.as_tensor(scores_on_fake)
    if real.shape != fake.shape:
        raise ValueError("real and fake score vectors differ in length")
    return bce(real, torch.ones_like(real)) + bce(fake, torch.zeros_like(fake))
